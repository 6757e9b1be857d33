//! The shared radio medium: per-channel collision resolution, bit-error
//! injection and a fixed modulator/demodulator delay.

use alloc::collections::VecDeque;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

pub const NUM_RF_CHANNELS: u8 = 79;

/// One symbol on one RF channel during one microsecond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AirSymbol {
    Zero,
    One,
    /// Nobody transmits.
    #[default]
    Z,
    /// Two or more transmitters overlap.
    X,
}

impl AirSymbol {
    pub fn from_bit(b: u8) -> Self {
        if b & 1 == 1 {
            AirSymbol::One
        } else {
            AirSymbol::Zero
        }
    }

    pub fn bit(self) -> Option<u8> {
        match self {
            AirSymbol::Zero => Some(0),
            AirSymbol::One => Some(1),
            _ => None,
        }
    }

    pub fn is_carrier(self) -> bool {
        self != AirSymbol::Z
    }

    pub fn vcd_char(self) -> char {
        match self {
            AirSymbol::Zero => '0',
            AirSymbol::One => '1',
            AirSymbol::Z => 'z',
            AirSymbol::X => 'x',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelError {
    Ber(f64),
    Delay(u32),
}

impl fmt::Display for ChannelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelError::Ber(b) => write!(f, "ber {b} outside [0, 1]"),
            ChannelError::Delay(d) => write!(f, "rf delay {d} us must be below one slot (625 us)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub ber: f64,
    pub rf_delay_us: u32,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams { ber: 0.0, rf_delay_us: 0 }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(0.0..=1.0).contains(&self.ber) {
            return Err(ChannelError::Ber(self.ber));
        }
        if self.rf_delay_us >= 625 {
            return Err(ChannelError::Delay(self.rf_delay_us));
        }
        Ok(())
    }
}

/// Resolves the transmissions of one tick to one symbol per occupied channel.
///
/// Input entries are `(device, rf_channel, symbol)`; channels absent from the
/// output carry `Z`. Output is sorted by channel.
pub fn resolve(outputs: &[(usize, u8, AirSymbol)]) -> Vec<(u8, AirSymbol)> {
    let mut out: Vec<(u8, AirSymbol)> = Vec::with_capacity(outputs.len());
    for &(_, ch, sym) in outputs {
        if !sym.is_carrier() {
            continue;
        }
        match out.iter_mut().find(|(c, _)| *c == ch) {
            Some(slot) => slot.1 = AirSymbol::X,
            None => out.push((ch, sym)),
        }
    }
    out.sort_unstable_by_key(|(c, _)| *c);
    out
}

/// Flips a data symbol with probability `ber`.
///
/// A uniform draw is consumed for every data symbol whatever `ber` is, so two
/// runs that differ only in BER consume their streams in lockstep.
pub fn apply_noise<R: Rng + ?Sized>(sym: AirSymbol, ber: f64, rng: &mut R) -> AirSymbol {
    match sym {
        AirSymbol::Zero | AirSymbol::One => {
            let u: f64 = rng.gen();
            if u < ber {
                match sym {
                    AirSymbol::Zero => AirSymbol::One,
                    _ => AirSymbol::Zero,
                }
            } else {
                sym
            }
        }
        other => other,
    }
}

/// Pipeline between transmitters and receivers holding the non-idle symbols
/// still in flight.
#[derive(Debug, Clone, Default)]
pub struct DelayLine {
    delay: u64,
    pending: VecDeque<(u64, u8, AirSymbol)>,
    current: Vec<(u8, AirSymbol)>,
    current_tick: u64,
}

impl DelayLine {
    pub fn new(delay_us: u32) -> Self {
        DelayLine { delay: delay_us as u64, ..Default::default() }
    }

    pub fn delay(&self) -> u64 {
        self.delay
    }

    /// Enqueues the resolved symbols of tick `now`.
    pub fn push(&mut self, now: u64, resolved: &[(u8, AirSymbol)]) {
        for &(ch, sym) in resolved {
            self.pending.push_back((now, ch, sym));
        }
    }

    /// Moves the symbols due at `now` into the observable set.
    pub fn advance(&mut self, now: u64) {
        self.current.clear();
        self.current_tick = now;
        while let Some(&(t, ch, sym)) = self.pending.front() {
            if t + self.delay > now {
                break;
            }
            self.pending.pop_front();
            if t + self.delay == now {
                self.current.push((ch, sym));
            }
        }
    }

    /// What a receiver tuned to `ch` observes at the tick last passed to [`advance`](Self::advance).
    pub fn observe(&self, ch: u8) -> AirSymbol {
        self.current
            .iter()
            .find(|(c, _)| *c == ch)
            .map_or(AirSymbol::Z, |(_, s)| *s)
    }

    /// True when nothing is in flight and nothing is observable.
    pub fn is_quiet(&self) -> bool {
        self.pending.is_empty() && self.current.is_empty()
    }
}

/// Per-receiver view of a symbol stream shifted by `delay_us` ticks. Symbols
/// before the start of the stream read as `Z`.
pub fn delayed_view(stream: &[AirSymbol], delay_us: usize) -> Vec<AirSymbol> {
    let mut out = Vec::with_capacity(stream.len());
    out.extend(core::iter::repeat(AirSymbol::Z).take(delay_us.min(stream.len())));
    out.extend_from_slice(&stream[..stream.len().saturating_sub(delay_us)]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_tick_is_idle() {
        assert!(resolve(&[]).is_empty());
        let line = DelayLine::new(0);
        assert_eq!(line.observe(40), AirSymbol::Z);
    }

    #[test]
    fn single_and_colliding_transmitters() {
        assert_eq!(resolve(&[(1, 40, AirSymbol::One)]), [(40, AirSymbol::One)]);
        assert_eq!(resolve(&[(1, 40, AirSymbol::One), (2, 40, AirSymbol::Zero)]), [(40, AirSymbol::X)]);
        assert_eq!(
            resolve(&[(1, 40, AirSymbol::One), (2, 41, AirSymbol::Zero)]),
            [(40, AirSymbol::One), (41, AirSymbol::Zero)]
        );
    }

    #[test]
    fn noise_leaves_tristate_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(apply_noise(AirSymbol::One, 0.0, &mut rng), AirSymbol::One);
        assert_eq!(apply_noise(AirSymbol::X, 0.5, &mut rng), AirSymbol::X);
        assert_eq!(apply_noise(AirSymbol::Z, 1.0, &mut rng), AirSymbol::Z);
        assert_eq!(apply_noise(AirSymbol::Zero, 1.0, &mut rng), AirSymbol::One);
    }

    #[test]
    fn delay_shifts_by_exact_ticks() {
        let mut line = DelayLine::new(5);
        for t in 0..120 {
            if t == 100 {
                line.push(t, &[(3, AirSymbol::One)]);
            }
            line.advance(t);
            let expect = if t == 105 { AirSymbol::One } else { AirSymbol::Z };
            assert_eq!(line.observe(3), expect, "tick {t}");
        }
        assert!(line.is_quiet() || line.observe(3) == AirSymbol::Z);
    }

    #[test]
    fn delayed_view_prefix_is_idle() {
        let s = [AirSymbol::One, AirSymbol::Zero, AirSymbol::One];
        assert_eq!(delayed_view(&s, 0), s);
        assert_eq!(delayed_view(&s, 2), [AirSymbol::Z, AirSymbol::Z, AirSymbol::One]);
    }

    #[test]
    fn params_validation() {
        assert!(ChannelParams { ber: 1.5, rf_delay_us: 0 }.validate().is_err());
        assert!(ChannelParams { ber: 0.1, rf_delay_us: 625 }.validate().is_err());
        assert!(ChannelParams { ber: 0.1, rf_delay_us: 624 }.validate().is_ok());
    }
}
