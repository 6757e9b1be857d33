//! End-to-end baseband procedures on small scenarios.

use bluesim_core::airframe::{BdAddr, PacketKind};
use bluesim_core::baseband::{Command, DeviceState, Event};
use bluesim_core::engine::*;
use bluesim_core::linkman::{HoldPhase, ModeKind};
use bluesim_core::metrics::rf_activity;

fn addr(n: u64) -> BdAddr {
    BdAddr::from_u64(0x0002_5B00_0000 + n * 0x01_0203).unwrap()
}

fn page_scenario(seed: u64) -> Scenario {
    let mut m = DeviceSpec::new("m", addr(1)).at(0, Command::EnablePage(addr(2)));
    m.knows_clock_of.push("s".into());
    Scenario {
        devices: vec![m, DeviceSpec::new("s", addr(2)).at(0, Command::EnablePageScan)],
        stop: StopWhen::PageDone,
        duration_slots: 3000,
        seed,
        ..Scenario::default()
    }
}

fn connected_pair(slave_cmds: &[(u64, Command)]) -> Scenario {
    let mut sl = DeviceSpec::new("s", addr(2));
    for (at, c) in slave_cmds {
        sl = sl.at(*at, *c);
    }
    Scenario {
        devices: vec![DeviceSpec::new("m", addr(1)), sl],
        connections: vec![Connection { master: "m".into(), slave: "s".into() }],
        ..Scenario::default()
    }
}

fn events_of(trace: &RunTrace, device: &str) -> Vec<(u64, Event)> {
    let i = trace.devices.iter().position(|d| d == device).unwrap() as u16;
    trace.events.iter().filter(|e| e.device == i).map(|e| (e.t, e.event.clone())).collect()
}

#[test]
fn page_with_estimate_is_fast() {
    for seed in 0..20 {
        let (trace, m) = run_scenario(&page_scenario(seed)).unwrap();
        let slots = m.page_slots.expect("page completes");
        assert!(slots <= 64, "seed {seed}: {slots}");
        assert_eq!(check_trace(&trace), Ok(()));
    }
}

#[test]
fn inquiry_without_scanner_times_out() {
    let s = Scenario {
        devices: vec![DeviceSpec::new("m", addr(1)).at(0, Command::EnableInquiry)],
        stop: StopWhen::InquiryDone,
        duration_slots: 3000,
        trace: TraceLevel::Events,
        ..Scenario::default()
    };
    let (trace, m) = run_scenario(&s).unwrap();
    assert!(!m.inquiry_success);
    let failed: Vec<_> = events_of(&trace, "m")
        .into_iter()
        .filter_map(|(_, e)| match e {
            Event::InquiryFailed { slots, responses } => Some((slots, responses)),
            _ => None,
        })
        .collect();
    assert_eq!(failed, vec![(2048, 0)]);
}

#[test]
fn rf_delay_tolerance() {
    let mut s = page_scenario(3);
    s.channel.rf_delay_us = 200;
    assert!(run_scenario(&s).unwrap().1.page_success);
    s.channel.rf_delay_us = 600;
    assert!(!run_scenario(&s).unwrap().1.page_success);
}

fn fig5(seed: u64) -> Scenario {
    let mut m = DeviceSpec::new("master", addr(1)).at(0, Command::EnableInquiry);
    m.policy.page_after_inquiry = true;
    let mut devices = vec![m];
    for k in 0..3u64 {
        let mut d = DeviceSpec::new(&format!("slave{}", k + 1), addr(2 + k)).at(0, Command::EnableInquiryScan);
        d.policy.page_scan_after_response = true;
        devices.push(d);
    }
    let mut s = Scenario { devices, seed, duration_slots: 8192, trace: TraceLevel::Full, ..Scenario::default() };
    s.baseband.inquiry_responses = 3;
    s.timeouts.inquiry_timeout = 8192;
    s
}

#[test]
fn three_slaves_join_and_share_the_clock() {
    let mut s = fig5(1);
    s.stop = StopWhen::PiconetSize(3);
    let mut w = build_world(&s).unwrap();
    w.advance(u64::MAX);
    let master = w.device("master").unwrap();
    let pico = master.piconet().unwrap();
    assert_eq!(pico.members.len(), 3);
    let t = w.now();
    for k in 1..=3 {
        let sl = w.device(&format!("slave{k}")).unwrap();
        assert_eq!(sl.state(), DeviceState::ConnectionActive);
        let p = sl.piconet().unwrap();
        assert_eq!(p.master_addr, addr(1));
        assert_eq!(p.clock.clk(t), master.native_clock().clk(t));
    }
    let (trace, _) = w.run();
    assert_eq!(check_trace(&trace), Ok(()));
}

#[test]
fn identical_seeds_give_identical_traces() {
    let (a, ma) = run_scenario(&fig5(9)).unwrap();
    let (b, mb) = run_scenario(&fig5(9)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    let (c, _) = run_scenario(&fig5(10)).unwrap();
    assert_ne!(a.events, c.events);
}

#[test]
fn sniff_loses_nothing_at_matching_period() {
    let mut s = connected_pair(&[(20, Command::EnableSniff { t_sniff: 100, attempt: 2 })]);
    s.traffic.push(Traffic {
        source: "m".into(),
        dest: "s".into(),
        period_slots: 100,
        kind: PacketKind::Dm1,
        payload_len: 17,
        start_slot: 50,
    });
    s.duration_slots = 10_000;
    s.trace = TraceLevel::Full;
    let (trace, m) = run_scenario(&s).unwrap();
    assert_eq!(m.packets_lost, 0);
    assert_eq!(m.buffer_drops, 0);
    assert_eq!(m.links_lost, 0);
    assert!(m.packets_delivered >= 95, "{}", m.packets_delivered);
    assert_eq!(check_trace(&trace), Ok(()));
}

#[test]
fn hold_phases_in_order() {
    let mut s = connected_pair(&[(20, Command::EnableHold { t_hold: 200 })]);
    s.duration_slots = 1000;
    s.trace = TraceLevel::Events;
    let (trace, m) = run_scenario(&s).unwrap();
    let phases: Vec<HoldPhase> = events_of(&trace, "s")
        .into_iter()
        .filter_map(|(_, e)| match e {
            Event::Hold(p) => Some(p),
            _ => None,
        })
        .collect();
    assert_eq!(phases, vec![HoldPhase::Entered, HoldPhase::Resync, HoldPhase::Exited]);
    assert_eq!(m.links_lost, 0);
}

#[test]
fn park_releases_the_member_address() {
    let mut s = connected_pair(&[(20, Command::EnablePark)]);
    s.trace = TraceLevel::Events;
    let mut w = build_world(&s).unwrap();
    assert_eq!(w.device("m").unwrap().piconet().unwrap().members.len(), 1);
    w.advance(400 * 625);
    assert_eq!(w.device("s").unwrap().state(), DeviceState::Park);
    // A master left without members may dissolve its piconet altogether.
    if let Some(p) = w.device("m").unwrap().piconet() {
        assert!(p.members.is_empty());
        assert_eq!(p.free_am_addr(), Some(1));
    }
    let (trace, _) = w.run();
    assert!(events_of(&trace, "m")
        .iter()
        .any(|(_, e)| matches!(e, Event::ModeInstalled { kind: ModeKind::Park, .. })));
}

#[test]
fn detach_returns_to_standby_and_silence() {
    let mut s = connected_pair(&[(20, Command::DetachReset)]);
    s.duration_slots = 2000;
    s.trace = TraceLevel::Full;
    let (trace, _) = run_scenario(&s).unwrap();
    let states: Vec<_> = events_of(&trace, "s")
        .into_iter()
        .filter_map(|(_, e)| match e {
            Event::StateChanged { to, .. } => Some(to),
            _ => None,
        })
        .collect();
    assert_eq!(states.last(), Some(&DeviceState::Standby));
    let s_idx = trace.devices.iter().position(|d| d == "s").unwrap();
    let act = rf_activity(&trace, s_idx, 100 * 625..2000 * 625).unwrap();
    assert_eq!(act, 0.0);
}

#[test]
fn command_outside_its_state_is_rejected() {
    let s = Scenario {
        devices: vec![DeviceSpec::new("a", addr(1)).at(0, Command::EnableSniff { t_sniff: 100, attempt: 2 })],
        trace: TraceLevel::Events,
        duration_slots: 10,
        ..Scenario::default()
    };
    let (trace, _) = run_scenario(&s).unwrap();
    assert!(matches!(trace.events[0].event, Event::CommandRejected { command: "enable_sniff", .. }));
}

#[test]
fn validation_names_the_field() {
    let mut s = page_scenario(0);
    s.devices[1].addr = addr(1);
    assert!(run_scenario(&s).unwrap_err().to_string().starts_with("devices.addr"));
    let mut s = page_scenario(0);
    s.devices[0].knows_clock_of = vec!["ghost".into()];
    assert!(matches!(run_scenario(&s), Err(ScenarioError::UnknownDevice { .. })));
}

mod random_schedules {
    use super::*;
    use proptest::prelude::*;

    fn command() -> impl Strategy<Value = Command> {
        prop_oneof![
            (2u16..200).prop_map(|t| Command::EnableSniff { t_sniff: t, attempt: 2 }),
            Just(Command::ExitSniff),
            (40u16..400).prop_map(|t| Command::EnableHold { t_hold: t }),
            Just(Command::EnablePark),
            Just(Command::DetachReset),
            Just(Command::EnablePageScan),
            Just(Command::EnableInquiryScan),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn traces_obey_the_rules(seed: u64, cmds in prop::collection::vec((0u64..1500, command()), 0..6), ber in prop::sample::select(vec![0.0, 0.001, 0.01])) {
            let mut s = connected_pair(&cmds);
            s.seed = seed;
            s.channel.ber = ber;
            s.duration_slots = 2000;
            s.trace = TraceLevel::Full;
            s.traffic.push(Traffic {
                source: "m".into(),
                dest: "s".into(),
                period_slots: 37,
                kind: PacketKind::Dh1,
                payload_len: 20,
                start_slot: 10,
            });
            let (trace, _) = run_scenario(&s).unwrap();
            prop_assert_eq!(check_trace(&trace), Ok(()));
        }
    }
}
