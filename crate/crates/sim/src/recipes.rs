//! Built-in sweeps, one per published figure.

use std::fmt;

use bluesim_core::airframe::{BdAddr, PacketKind};
use bluesim_core::baseband::Command;
use bluesim_core::engine::{Connection, DeviceSpec, Scenario, StopWhen, Traffic};

/// One grid point: a scenario plus the coordinates it is reported under.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x_name: String,
    pub x_value: f64,
    pub variant: String,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Recipe {
    Fig6,
    Fig7,
    Fig8,
    Fig10,
    Fig11,
    Fig12,
}

pub const MASTER: &str = "master";
pub const SLAVE: &str = "slave";

pub fn master_addr() -> BdAddr {
    BdAddr::from_u64(0x0002_5B01_0203).unwrap()
}

pub fn slave_addr() -> BdAddr {
    BdAddr::from_u64(0x0002_5B02_0406).unwrap()
}

/// BER points of the inquiry and page curves.
pub const BER_GRID: [f64; 7] = [0.0, 1.0 / 1000.0, 1.0 / 500.0, 1.0 / 200.0, 1.0 / 100.0, 1.0 / 50.0, 1.0 / 30.0];
pub const FAILURE_BER_GRID: [f64; 8] =
    [0.0, 1.0 / 1000.0, 1.0 / 200.0, 1.0 / 100.0, 1.0 / 50.0, 1.0 / 40.0, 1.0 / 30.0, 1.0 / 20.0];
pub const DATA_PERIODS: [u16; 8] = [200, 100, 50, 20, 10, 6, 4, 2];
pub const SNIFF_GRID: [u16; 11] = [10, 20, 30, 40, 50, 60, 80, 100, 120, 150, 200];
pub const HOLD_GRID: [u16; 12] = [20, 40, 60, 80, 100, 120, 140, 160, 200, 250, 300, 400];

/// Slots simulated by the power recipes, and the warm-up excluded from them.
pub const POWER_SLOTS: u64 = 20_000;
pub const WARMUP_SLOTS: u64 = 1000;
/// Data period used when comparing sniff against active mode.
pub const SNIFF_DATA_PERIOD: u64 = 100;

/// Noisy inquiry between a fresh inquirer and one scanner.
pub fn inquiry(ber: f64) -> Scenario {
    let mut s = Scenario {
        devices: vec![
            DeviceSpec::new(MASTER, master_addr()).at(0, Command::EnableInquiry),
            DeviceSpec::new(SLAVE, slave_addr()).at(0, Command::EnableInquiryScan),
        ],
        stop: StopWhen::InquiryDone,
        duration_slots: 2100,
        ..Scenario::default()
    };
    s.channel.ber = ber;
    s
}

/// Page of a scanner whose clock the pager already knows.
pub fn page(ber: f64) -> Scenario {
    let mut m = DeviceSpec::new(MASTER, master_addr()).at(0, Command::EnablePage(slave_addr()));
    m.knows_clock_of.push(SLAVE.into());
    let mut s = Scenario {
        devices: vec![m, DeviceSpec::new(SLAVE, slave_addr()).at(0, Command::EnablePageScan)],
        stop: StopWhen::PageDone,
        duration_slots: 2100,
        ..Scenario::default()
    };
    s.channel.ber = ber;
    s
}

/// Power mode of the slave in a connected pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlaveMode {
    Active,
    Sniff(u16),
    Hold(u16),
}

/// A pair connected from slot 0, the slave entering `mode` at slot 20, with
/// master-to-slave DM1 packets every `data_period` slots (none if `None`).
pub fn connected(mode: SlaveMode, data_period: Option<u64>) -> Scenario {
    let mut sl = DeviceSpec::new(SLAVE, slave_addr());
    match mode {
        SlaveMode::Active => {}
        SlaveMode::Sniff(t) => sl = sl.at(20, Command::EnableSniff { t_sniff: t, attempt: 2 }),
        SlaveMode::Hold(t) => {
            sl.policy.hold_repeat = Some(t);
            sl = sl.at(20, Command::EnableHold { t_hold: t });
        }
    }
    let traffic = data_period
        .map(|p| Traffic {
            source: MASTER.into(),
            dest: SLAVE.into(),
            period_slots: p,
            kind: PacketKind::Dm1,
            payload_len: 17,
            start_slot: 50,
        })
        .into_iter()
        .collect();
    Scenario {
        devices: vec![DeviceSpec::new(MASTER, master_addr()), sl],
        connections: vec![Connection { master: MASTER.into(), slave: SLAVE.into() }],
        traffic,
        duration_slots: POWER_SLOTS,
        measure_from_slot: WARMUP_SLOTS,
        ..Scenario::default()
    }
}

fn point(x_name: &str, x_value: f64, variant: &str, scenario: Scenario) -> Point {
    Point { x_name: x_name.into(), x_value, variant: variant.into(), scenario }
}

impl Recipe {
    pub const ALL: [Recipe; 6] = [Recipe::Fig6, Recipe::Fig7, Recipe::Fig8, Recipe::Fig10, Recipe::Fig11, Recipe::Fig12];

    pub fn id(self) -> &'static str {
        match self {
            Recipe::Fig6 => "fig6",
            Recipe::Fig7 => "fig7",
            Recipe::Fig8 => "fig8",
            Recipe::Fig10 => "fig10",
            Recipe::Fig11 => "fig11",
            Recipe::Fig12 => "fig12",
        }
    }

    pub fn parse(s: &str) -> Option<Recipe> {
        Recipe::ALL.into_iter().find(|r| r.id().eq_ignore_ascii_case(s))
    }

    pub fn describe(self) -> &'static str {
        match self {
            Recipe::Fig6 => "inquiry completion time vs BER",
            Recipe::Fig7 => "page completion time vs BER (clock estimate known)",
            Recipe::Fig8 => "inquiry and page success fraction vs BER",
            Recipe::Fig10 => "master RF activity vs duty cycle, slave active or sniffing",
            Recipe::Fig11 => "slave RF activity vs T_sniff, data every 100 slots",
            Recipe::Fig12 => "slave RF activity vs T_hold, no data",
        }
    }

    pub fn devices(self) -> Vec<String> {
        vec![MASTER.into(), SLAVE.into()]
    }

    pub fn points(self) -> Vec<Point> {
        match self {
            Recipe::Fig6 => BER_GRID.iter().map(|&b| point("ber", b, "inquiry", inquiry(b))).collect(),
            Recipe::Fig7 => BER_GRID.iter().map(|&b| point("ber", b, "page", page(b))).collect(),
            Recipe::Fig8 => FAILURE_BER_GRID
                .iter()
                .flat_map(|&b| [point("ber", b, "inquiry", inquiry(b)), point("ber", b, "page", page(b))])
                .collect(),
            Recipe::Fig10 => DATA_PERIODS
                .iter()
                .flat_map(|&p| {
                    // The master may use one transmit slot in every two.
                    let duty = 2.0 / p as f64;
                    let period = Some(p as u64);
                    [
                        point("duty_cycle", duty, "active", connected(SlaveMode::Active, period)),
                        point("duty_cycle", duty, "sniff", connected(SlaveMode::Sniff(p.max(2)), period)),
                    ]
                })
                .collect(),
            Recipe::Fig11 => SNIFF_GRID
                .iter()
                .flat_map(|&t| {
                    let period = Some(SNIFF_DATA_PERIOD);
                    [
                        point("t_sniff", t as f64, "active", connected(SlaveMode::Active, period)),
                        point("t_sniff", t as f64, "sniff", connected(SlaveMode::Sniff(t), period)),
                    ]
                })
                .collect(),
            Recipe::Fig12 => HOLD_GRID
                .iter()
                .flat_map(|&t| {
                    [
                        point("t_hold", t as f64, "active", connected(SlaveMode::Active, None)),
                        point("t_hold", t as f64, "hold", connected(SlaveMode::Hold(t), None)),
                    ]
                })
                .collect(),
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// `fig6, fig7, ...` for error messages.
pub fn known_list() -> String {
    Recipe::ALL.iter().map(|r| r.id()).collect::<Vec<_>>().join(", ")
}
