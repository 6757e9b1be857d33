//! Hop selection for inquiry, page and connection states.
//!
//! The sequences come from a fixed keyed mix (version [`HOP_MIX_VERSION`]),
//! not from the bit-exact kernel of real radios. What they guarantee:
//!
//! * connection hopping walks a keyed permutation of all 79 channels once per
//!   79-slot block, rotating the permutation a fixed step per block;
//! * inquiry and page hopping stay inside a keyed 32-channel set, split into two
//!   16-channel trains that swap every `n_train` train repetitions;
//! * scanners step one position through the same 32-channel set per 1.28 s.

use crate::airframe::GIAC_LAP;
use crate::channel::NUM_RF_CHANNELS;
use crate::mix64;

pub const HOP_MIX_VERSION: u32 = 1;
pub const CLK_BITS: u32 = 28;
pub const CLK_MASK: u32 = (1 << CLK_BITS) - 1;
pub const SLOT_US: u64 = 625;
/// Microseconds before the 28-bit clock wraps.
pub const CLOCK_PERIOD_US: u64 = (1 << 27) * SLOT_US;
pub const TRAIN_SIZE: u32 = 16;
pub const HOP_SET_SIZE: u32 = 32;
pub const DEFAULT_N_TRAIN: u32 = 256;
/// Clock ticks in one scan window of 1.28 s.
pub const SCAN_WINDOW_TICKS: u32 = 1 << 12;
/// Interlaced scanners swap between the two halves of the set every 18 slots.
pub const INTERLACE_TICKS: u32 = 36;

/// A free-running Bluetooth clock: two ticks per 625 µs slot.
///
/// `phase_us` places the clock relative to simulation time, so that
/// `clk(t) = ((t + phase_us) * 2 / 625) mod 2^28`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct BtClock {
    pub phase_us: u64,
}

impl BtClock {
    pub fn new(phase_us: u64) -> Self {
        BtClock { phase_us: phase_us % CLOCK_PERIOD_US }
    }

    /// Clock whose value at simulation time `t` is `clk`, with `t` on a tick edge.
    pub fn from_sample(clk: u32, t: u64) -> Self {
        let at = (clk & CLK_MASK) as u64 * SLOT_US / 2;
        BtClock::new(at + CLOCK_PERIOD_US - t % CLOCK_PERIOD_US)
    }

    pub fn clk(&self, t: u64) -> u32 {
        (((t + self.phase_us) % CLOCK_PERIOD_US) * 2 / SLOT_US) as u32
    }

    /// Signed offset in µs that maps this clock onto `other`.
    pub fn offset_to(&self, other: &BtClock) -> i64 {
        other.phase_us as i64 - self.phase_us as i64
    }

    fn tick_index(&self, t: u64) -> u64 {
        (t + self.phase_us) * 2 / SLOT_US
    }

    fn tick_time(&self, k: u64) -> u64 {
        ((k * SLOT_US + 1) / 2).saturating_sub(self.phase_us)
    }

    /// First simulation time strictly after `t` at which the clock ticks.
    pub fn next_edge(&self, t: u64) -> u64 {
        self.tick_time(self.tick_index(t) + 1)
    }

    /// Start of the slot containing `t` (saturates at zero).
    pub fn slot_start(&self, t: u64) -> u64 {
        self.tick_time(self.tick_index(t) & !1)
    }

    /// Earliest slot start at or after `t` whose clock is ≡ `residue` (mod 4).
    /// `residue` 0 gives master-to-slave slots, 2 slave-to-master slots.
    pub fn next_slot_start(&self, t: u64, residue: u32) -> u64 {
        let mut k = self.tick_index(t);
        if (k * SLOT_US).div_ceil(2) < t + self.phase_us || k % 2 == 1 {
            k += 1;
        }
        k += k % 2;
        while (k as u32) % 4 != residue % 4 {
            k += 2;
        }
        self.tick_time(k)
    }

    /// Simulation time of the `ticks`-th clock edge after `t`.
    pub fn edge_after(&self, t: u64, ticks: u64) -> u64 {
        self.tick_time(self.tick_index(t) + ticks.max(1))
    }

    pub fn is_master_slot(&self, t: u64) -> bool {
        self.clk(t) & 2 == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HopMode {
    Inquiry,
    InquiryScan,
    Page,
    PageScan,
    Connection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Train {
    A,
    B,
}

/// Everything a hop decision depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopContext {
    pub mode: HopMode,
    /// 28 significant bits: LAP plus the low nibble of UAP.
    pub address_key: u32,
    /// CLKN, CLKE or CLK depending on the mode.
    pub clock: u32,
    /// Clock value when the inquiry or page procedure started.
    pub origin: u32,
    /// Set position where train A begins.
    pub train_base: u8,
    pub n_train: u32,
}

impl HopContext {
    pub fn new(mode: HopMode, address_key: u32, clock: u32) -> Self {
        HopContext { mode, address_key, clock, origin: 0, train_base: 0, n_train: DEFAULT_N_TRAIN }
    }

    pub fn with_train(mut self, origin: u32, train_base: u8, n_train: u32) -> Self {
        self.origin = origin;
        self.train_base = train_base;
        self.n_train = n_train.max(1);
        self
    }
}

/// Key used by inquiry and inquiry scan, derived from the general inquiry LAP.
pub const fn inquiry_key() -> u32 {
    GIAC_LAP
}

fn keyed(tag: u64, key: u32, extra: u64) -> u64 {
    mix64(mix64(tag << 40 ^ key as u64) ^ extra)
}

fn set_tag(mode: HopMode) -> u64 {
    match mode {
        HopMode::Inquiry | HopMode::InquiryScan => 0x1A,
        _ => 0x9A,
    }
}

/// The 32-channel set used by inquiry/page hopping and scanning for `key`.
pub fn hop_set(mode: HopMode, key: u32) -> [u8; HOP_SET_SIZE as usize] {
    let h = keyed(set_tag(mode), key, 0);
    let step = 1 + (h % 78) as u32;
    let base = ((h >> 8) % 79) as u32;
    let mut set = [0u8; HOP_SET_SIZE as usize];
    for (i, ch) in set.iter_mut().enumerate() {
        *ch = ((step * i as u32 + base) % 79) as u8;
    }
    set
}

fn scan_offset(mode: HopMode, key: u32) -> u32 {
    (keyed(set_tag(mode) + 1, key, 0) % HOP_SET_SIZE as u64) as u32
}

/// Set position a scanner listens on: one step per 1.28 s window.
pub fn scan_position(mode: HopMode, key: u32, clock: u32) -> u8 {
    let w = (clock & CLK_MASK) / SCAN_WINDOW_TICKS;
    ((w + scan_offset(mode, key)) % HOP_SET_SIZE) as u8
}

/// Scan channel; constant within a 1.28 s window.
pub fn scan_channel(mode: HopMode, key: u32, clock: u32) -> u8 {
    hop_set(mode, key)[scan_position(mode, key, clock) as usize]
}

/// Interlaced variant: alternates between the plain position `X` and `X + 16`.
pub fn interlaced_scan_channel(mode: HopMode, key: u32, clock: u32) -> u8 {
    let mut pos = scan_position(mode, key, clock) as u32;
    if ((clock & CLK_MASK) / INTERLACE_TICKS) % 2 == 1 {
        pos = (pos + TRAIN_SIZE) % HOP_SET_SIZE;
    }
    hop_set(mode, key)[pos as usize]
}

/// Train in use `clock_rel` clock ticks after the procedure started.
pub fn train_schedule(clock_rel: u32, n_train: u32) -> Train {
    let rep = clock_rel / (2 * 2 * TRAIN_SIZE);
    if (rep / n_train.max(1)) % 2 == 0 {
        Train::A
    } else {
        Train::B
    }
}

/// Index within the 16-channel train used in the half-slot whose clock is `clock`.
/// Receive half-slots reuse the indices of the preceding transmit slot.
pub fn train_index(clock: u32) -> u32 {
    ((clock >> 2) & 7) << 1 | (clock & 1)
}

/// Set position addressed by an inquiry or page transmitter.
pub fn train_position(ctx: &HopContext) -> u8 {
    let rel = ctx.clock.wrapping_sub(ctx.origin) & CLK_MASK;
    let half = match train_schedule(rel, ctx.n_train) {
        Train::A => 0,
        Train::B => TRAIN_SIZE,
    };
    ((ctx.train_base as u32 + half + train_index(ctx.clock)) % HOP_SET_SIZE) as u8
}

const EXPONENTS: [u32; 23] = [
    5, 7, 11, 17, 19, 23, 25, 29, 31, 35, 37, 41, 43, 47, 49, 53, 55, 59, 61, 67, 71, 73, 77,
];

fn pow_mod79(mut b: u32, mut e: u32) -> u32 {
    let mut acc = 1;
    b %= 79;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % 79;
        }
        b = b * b % 79;
        e >>= 1;
    }
    acc
}

/// Connection-state channel for slot number `slot` (= CLK >> 1).
pub fn connection_channel(key: u32, slot: u32) -> u8 {
    let h = keyed(0xC0, key, 0);
    let a = 1 + (h % 78) as u32;
    let c = ((h >> 8) % 79) as u32;
    let e = EXPONENTS[((h >> 16) % EXPONENTS.len() as u64) as usize];
    let f = ((h >> 24) % 79) as u32;
    let step = 2 + ((h >> 32) % 7) as u32;
    let block = slot / 79;
    let x = (slot % 79 + (block % 79) * step) % 79;
    let y = (a * x + c) % 79;
    let p = if y == 0 { 0 } else { pow_mod79(y, e) };
    ((p + f) % 79) as u8
}

/// Channel for the given context. Always in `0..79`.
pub fn hop(ctx: &HopContext) -> u8 {
    let ch = match ctx.mode {
        HopMode::Connection => connection_channel(ctx.address_key, (ctx.clock & CLK_MASK) >> 1),
        HopMode::Inquiry | HopMode::Page => hop_set(ctx.mode, ctx.address_key)[train_position(ctx) as usize],
        HopMode::InquiryScan | HopMode::PageScan => scan_channel(ctx.mode, ctx.address_key, ctx.clock),
    };
    debug_assert!(ch < NUM_RF_CHANNELS);
    ch
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clock_edges_are_half_slots() {
        let c = BtClock::new(0);
        assert_eq!(c.clk(0), 0);
        assert_eq!(c.clk(312), 0);
        assert_eq!(c.clk(313), 1);
        assert_eq!(c.clk(625), 2);
        assert_eq!(c.next_edge(0), 313);
        assert_eq!(c.next_edge(313), 625);
        assert_eq!(c.slot_start(1000), 625);
    }

    #[test]
    fn next_slot_start_respects_residue() {
        let c = BtClock::new(100);
        let t = c.next_slot_start(0, 0);
        assert_eq!(c.clk(t) % 4, 0);
        assert_eq!(c.clk(t - 1) % 4, 3);
        let r = c.next_slot_start(t, 2);
        assert_eq!(r, t + 625);
        assert_eq!(c.next_slot_start(t, 0), t);
    }

    #[test]
    fn from_sample_reproduces_value() {
        let c = BtClock::from_sample(0x0ABC_DEF0, 12_345_678);
        assert_eq!(c.clk(12_345_678), 0x0ABC_DEF0);
    }

    #[test]
    fn clock_wraps_at_28_bits() {
        let c = BtClock::new(CLOCK_PERIOD_US - 1);
        assert_eq!(c.clk(0), CLK_MASK);
        assert_eq!(c.clk(1), 0);
    }

    #[test]
    fn train_schedule_alternates() {
        assert_eq!(train_schedule(0, 256), Train::A);
        assert_eq!(train_schedule(256 * 64 - 1, 256), Train::A);
        assert_eq!(train_schedule(256 * 64, 256), Train::B);
        assert_eq!(train_schedule(2 * 256 * 64, 256), Train::A);
    }

    #[test]
    fn train_indices_cover_sixteen() {
        let mut seen = [false; 16];
        for clk in 0..64u32 {
            if clk & 2 == 0 {
                seen[train_index(clk) as usize] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn hop_set_is_distinct() {
        for key in [0u32, 1, GIAC_LAP, 0xFFF_FFFF] {
            let set = hop_set(HopMode::Page, key);
            let mut seen = [false; 79];
            for &c in &set {
                assert!(!seen[c as usize]);
                seen[c as usize] = true;
            }
        }
    }

    #[test]
    fn scan_channel_in_transmit_set() {
        let key = 0x123_4567;
        let set = hop_set(HopMode::Page, key);
        for w in 0..64u32 {
            assert!(set.contains(&scan_channel(HopMode::PageScan, key, w * SCAN_WINDOW_TICKS)));
        }
    }
}
