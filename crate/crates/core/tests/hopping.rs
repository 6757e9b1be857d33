//! Hop-selection coverage and rendezvous.

use bluesim_core::airframe::GIAC_LAP;
use bluesim_core::hopsel::*;
use proptest::prelude::*;
use std::collections::HashSet;

const KEYS: [u32; 4] = [0x0A5_1234, 0x000_0001, 0x3FF_FFFF, 0x1B2_C3D4];

#[test]
fn connection_window_is_spread() {
    for key in KEYS {
        for start in [0u32, 1000, 123_456] {
            let distinct: HashSet<u8> = (start..start + 64).map(|s| connection_channel(key, s)).collect();
            assert!(distinct.len() >= 40, "key {key:x}: {}", distinct.len());
        }
    }
}

#[test]
fn connection_histogram_is_flat() {
    for key in KEYS {
        let mut hist = [0u32; 79];
        for clk in 0..(1u32 << 14) {
            let ch = hop(&HopContext::new(HopMode::Connection, key, clk));
            hist[ch as usize] += 1;
        }
        let (min, max) = (*hist.iter().min().unwrap(), *hist.iter().max().unwrap());
        assert!(min > 0);
        assert!((max as f64) / (min as f64) < 1.3, "key {key:x}: {min}..{max}");
    }
}

#[test]
fn inquiry_hops_stay_in_the_set() {
    let set = hop_set(HopMode::Inquiry, GIAC_LAP);
    for origin in [0u32, 77, 40_000] {
        let mut prev = None;
        for k in 0..64u32 {
            let clk = origin + 4 * k + (k % 2);
            let ch = hop(&HopContext::new(HopMode::Inquiry, inquiry_key(), clk).with_train(origin, 0, DEFAULT_N_TRAIN));
            assert!(set.contains(&ch));
            assert_ne!(Some(ch), prev);
            prev = Some(ch);
        }
    }
}

#[test]
fn scan_covers_the_set_in_32_windows() {
    for key in KEYS {
        let set = hop_set(HopMode::PageScan, key);
        let chans: HashSet<u8> = (0..32).map(|w| scan_channel(HopMode::PageScan, key, w * SCAN_WINDOW_TICKS)).collect();
        assert_eq!(chans.len(), 32);
        assert!(chans.iter().all(|c| set.contains(c)));
        assert_eq!(scan_channel(HopMode::PageScan, key, 5), scan_channel(HopMode::PageScan, key, 4000));
    }
}

#[test]
fn train_swaps_after_256_repetitions() {
    assert_eq!(train_schedule(0, 256), Train::A);
    assert_eq!(train_schedule(256 * 16 * 4, 256), Train::B);
    assert_eq!(train_schedule(2 * 256 * 16 * 4, 256), Train::A);
}

/// First transmit half-slot at which the inquirer hops to the scanner's channel.
fn rendezvous(inq_phase: u64, scan_phase: u64, interlaced: bool) -> Option<u64> {
    let inq = BtClock::new(inq_phase);
    let scan = BtClock::new(scan_phase);
    let origin = inq.clk(0);
    // Each transmit slot spans four clock ticks, two of which carry an ID.
    let limit = 2 * 256 * 16 * 4;
    for n in 1..=limit as u64 {
        let t = inq.edge_after(0, n);
        let clk = inq.clk(t);
        if clk % 4 >= 2 {
            continue;
        }
        let base = ((scan_position(HopMode::InquiryScan, inquiry_key(), clk) as u32 + 24) % 32) as u8;
        let ch = hop(&HopContext::new(HopMode::Inquiry, inquiry_key(), clk).with_train(origin, base, DEFAULT_N_TRAIN));
        let sclk = scan.clk(t);
        let listen = if interlaced {
            interlaced_scan_channel(HopMode::InquiryScan, inquiry_key(), sclk)
        } else {
            scan_channel(HopMode::InquiryScan, inquiry_key(), sclk)
        };
        if ch == listen {
            return Some(n / 4);
        }
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inquiry_meets_scanner_within_two_train_periods(a in 0u64..CLOCK_PERIOD_US, b in 0u64..CLOCK_PERIOD_US, interlaced: bool) {
        let k = rendezvous(a, b, interlaced);
        prop_assert!(k.is_some_and(|k| k < 2 * 256 * 16));
    }

    #[test]
    fn every_hop_in_range(mode_i in 0usize..5, key in 0u32..(1 << 28), clk: u32, origin: u32, base in 0u8..32) {
        let mode = [HopMode::Inquiry, HopMode::InquiryScan, HopMode::Page, HopMode::PageScan, HopMode::Connection][mode_i];
        let ch = hop(&HopContext::new(mode, key, clk & CLK_MASK).with_train(origin & CLK_MASK, base, DEFAULT_N_TRAIN));
        prop_assert!(ch < 79);
    }

    #[test]
    fn synchronized_slave_hops_with_master(phase in 0u64..CLOCK_PERIOD_US, at in 0u64..1_000_000_000u64, key in 0u32..(1 << 28)) {
        let master = BtClock::new(phase);
        let t0 = master.next_slot_start(at, 0);
        // The slave rebuilds the clock from a snapshot taken at a slot start.
        let slave = BtClock::from_sample(master.clk(t0), t0);
        for s in 0..1000u64 {
            let t = t0 + s * 625 + 17;
            prop_assert_eq!(slave.clk(t), master.clk(t));
            prop_assert_eq!(connection_channel(key, slave.clk(t) >> 1), connection_channel(key, master.clk(t) >> 1));
        }
    }
}

#[test]
fn master_and_slave_agree_for_1e5_slots() {
    let master = BtClock::new(987_654_321);
    let t0 = master.next_slot_start(5_000, 0);
    let slave = BtClock::from_sample(master.clk(t0), t0);
    for s in 0..100_000u64 {
        let t = t0 + s * 625;
        assert_eq!(connection_channel(0x123_4567, slave.clk(t) >> 1), connection_channel(0x123_4567, master.clk(t) >> 1));
    }
}
