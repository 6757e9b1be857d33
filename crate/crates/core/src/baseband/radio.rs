//! Transmit and receive front end of one device: frame serializer, access-code
//! correlator and the RF enable gates.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::airframe::{parse_packet, AccessCode, ParseOutcome, ACCESS_BITS, HEADER_AIR_BITS, ID_BITS};
use crate::channel::AirSymbol;

/// Longest frame a receiver will collect before giving up on the end marker.
pub const MAX_FRAME_BITS: usize = ACCESS_BITS + HEADER_AIR_BITS + 5 * 625;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxFrame {
    pub start: u64,
    pub channel: u8,
    pub bits: Vec<u8>,
}

impl TxFrame {
    pub fn end(&self) -> u64 {
        self.start + self.bits.len() as u64
    }
}

/// A receive window. The receiver hears `channel` from `open_at`; if no
/// carrier has started by `close_at` it switches off. A frame whose access
/// code is being correlated keeps it on until sync succeeds or fails, and a
/// synchronized frame keeps it on until the frame ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RxWindow {
    pub channel: u8,
    pub open_at: u64,
    pub close_at: u64,
    pub code: AccessCode,
    pub uap: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RxFrame {
    pub outcome: ParseOutcome,
    /// Tick at which the first access-code symbol was observed.
    pub start: u64,
    pub end: u64,
    pub channel: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
enum RxState {
    #[default]
    Idle,
    Carrier(u32),
    Synced { start: u64, syms: Vec<AirSymbol> },
}

#[derive(Debug, Clone, Default)]
pub struct Radio {
    tx: VecDeque<TxFrame>,
    rx: Option<RxWindow>,
    state: RxState,
    word: u128,
    valid: u32,
    threshold: u32,
}

impl Radio {
    pub fn new(threshold: u32) -> Self {
        Radio { threshold, ..Default::default() }
    }

    pub fn reset(&mut self) {
        *self = Radio::new(self.threshold);
    }

    /// Queues a frame. Returns false if it would overlap one already queued.
    pub fn transmit(&mut self, frame: TxFrame) -> bool {
        if self.tx.back().is_some_and(|cur| frame.start < cur.end()) {
            return false;
        }
        self.tx.push_back(frame);
        true
    }

    /// End of the last queued transmission, or 0.
    pub fn tx_busy_until(&self) -> u64 {
        self.tx.back().map_or(0, |f| f.end())
    }

    pub fn tx_active(&self, now: u64) -> bool {
        self.tx.front().is_some_and(|f| f.start <= now && now < f.end())
    }

    pub fn tx_symbol(&self, now: u64) -> Option<(u8, AirSymbol)> {
        let f = self.tx.front()?;
        if now < f.start || now >= f.end() {
            return None;
        }
        Some((f.channel, AirSymbol::from_bit(f.bits[(now - f.start) as usize])))
    }

    pub fn window(&self) -> Option<&RxWindow> {
        self.rx.as_ref()
    }

    pub fn listen(&mut self, window: RxWindow) {
        if self.rx.map(|w| w.channel) != Some(window.channel) || self.state == RxState::Idle {
            self.state = RxState::Idle;
            self.valid = 0;
        }
        self.rx = Some(window);
    }

    pub fn stop_listening(&mut self) {
        self.rx = None;
        self.state = RxState::Idle;
        self.valid = 0;
    }

    /// Changes the tuned channel unless a frame is being received.
    pub fn retune(&mut self, channel: u8) {
        if self.state != RxState::Idle {
            return;
        }
        if let Some(w) = self.rx.as_mut() {
            if w.channel != channel {
                w.channel = channel;
                self.valid = 0;
            }
        }
    }

    pub fn receiving(&self) -> bool {
        matches!(self.state, RxState::Synced { .. })
    }

    pub fn idle(&self) -> bool {
        self.state == RxState::Idle
    }

    /// Channel the receiver is listening on at `now`, closing expired windows.
    pub fn listening(&mut self, now: u64) -> Option<u8> {
        if self.tx_active(now) {
            if self.state != RxState::Idle {
                self.state = RxState::Idle;
                self.valid = 0;
            }
            return None;
        }
        let w = self.rx?;
        if now < w.open_at {
            return None;
        }
        if now >= w.close_at && self.state == RxState::Idle {
            self.rx = None;
            self.valid = 0;
            return None;
        }
        Some(w.channel)
    }

    /// Feeds the symbol heard at `now`; returns a frame once it ends.
    pub fn observe(&mut self, now: u64, sym: AirSymbol) -> Option<RxFrame> {
        let w = self.rx?;
        if let RxState::Synced { syms, start } = &mut self.state {
            if sym.is_carrier() && syms.len() < MAX_FRAME_BITS {
                syms.push(sym);
                return None;
            }
            let syms = core::mem::take(syms);
            let start = *start;
            self.stop_listening();
            let outcome = parse_packet(&syms, &w.code, w.uap, self.threshold);
            return Some(RxFrame { outcome, start, end: now, channel: w.channel });
        }
        match sym.bit() {
            Some(b) => {
                self.word = (self.word >> 1) | (b as u128) << (ID_BITS - 1);
                self.valid = (self.valid + 1).min(ID_BITS as u32);
            }
            None => self.valid = 0,
        }
        self.state = match (&self.state, sym.is_carrier()) {
            (_, false) => RxState::Idle,
            (RxState::Carrier(n), true) => RxState::Carrier(n + 1),
            (_, true) => RxState::Carrier(1),
        };
        if self.valid as usize == ID_BITS
            && (self.word ^ w.code.correlation_word()).count_ones() <= self.threshold
        {
            let syms = (0..ID_BITS).map(|i| AirSymbol::from_bit((self.word >> i) as u8 & 1)).collect();
            self.state = RxState::Synced { start: now + 1 - ID_BITS as u64, syms };
            self.valid = 0;
            return None;
        }
        if let RxState::Carrier(n) = self.state {
            if n as usize >= ID_BITS && now >= w.close_at {
                self.stop_listening();
            }
        }
        None
    }

    /// True when the next tick must be simulated symbol by symbol.
    pub fn needs_ticks(&self, now: u64) -> bool {
        self.tx_active(now) || self.state != RxState::Idle
    }

    /// Earliest future tick at which a gate can change by itself.
    pub fn next_change(&self, now: u64) -> u64 {
        let mut next = u64::MAX;
        for f in &self.tx {
            for t in [f.start, f.end()] {
                if t > now {
                    next = next.min(t);
                }
            }
        }
        if let Some(w) = &self.rx {
            for t in [w.open_at, w.close_at] {
                if t > now {
                    next = next.min(t);
                }
            }
        }
        next
    }

    /// Drops a finished transmission.
    pub fn end_tick(&mut self, now: u64) {
        while self.tx.front().is_some_and(|f| f.end() <= now + 1) {
            self.tx.pop_front();
        }
    }
}
