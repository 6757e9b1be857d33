//! Link-manager PDUs and the timers of the low-power modes.

use alloc::vec::Vec;
use core::fmt;

use crate::hopsel::CLK_MASK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    SniffReq = 1,
    HoldReq = 2,
    ParkReq = 3,
    Accepted = 4,
    NotAccepted = 5,
    Unsniff = 6,
    Detach = 7,
}

impl Opcode {
    fn from_u8(v: u8) -> Option<Opcode> {
        Some(match v {
            1 => Opcode::SniffReq,
            2 => Opcode::HoldReq,
            3 => Opcode::ParkReq,
            4 => Opcode::Accepted,
            5 => Opcode::NotAccepted,
            6 => Opcode::Unsniff,
            7 => Opcode::Detach,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LmpPdu {
    SniffReq { t_sniff: u16, attempt: u16 },
    HoldReq { t_hold: u16 },
    ParkReq,
    Accepted(Opcode),
    NotAccepted(Opcode),
    Unsniff,
    Detach,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PduError;

impl fmt::Display for PduError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("undecodable LMP PDU")
    }
}

impl LmpPdu {
    pub fn opcode(&self) -> Opcode {
        match self {
            LmpPdu::SniffReq { .. } => Opcode::SniffReq,
            LmpPdu::HoldReq { .. } => Opcode::HoldReq,
            LmpPdu::ParkReq => Opcode::ParkReq,
            LmpPdu::Accepted(_) => Opcode::Accepted,
            LmpPdu::NotAccepted(_) => Opcode::NotAccepted,
            LmpPdu::Unsniff => Opcode::Unsniff,
            LmpPdu::Detach => Opcode::Detach,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(5);
        v.push(self.opcode() as u8);
        match *self {
            LmpPdu::SniffReq { t_sniff, attempt } => {
                v.extend_from_slice(&t_sniff.to_le_bytes());
                v.extend_from_slice(&attempt.to_le_bytes());
            }
            LmpPdu::HoldReq { t_hold } => v.extend_from_slice(&t_hold.to_le_bytes()),
            LmpPdu::Accepted(op) | LmpPdu::NotAccepted(op) => v.push(op as u8),
            _ => {}
        }
        v
    }

    pub fn decode(bytes: &[u8]) -> Result<LmpPdu, PduError> {
        let (&op, rest) = bytes.split_first().ok_or(PduError)?;
        let word = |i: usize| -> Result<u16, PduError> {
            rest.get(i..i + 2).map(|b| u16::from_le_bytes([b[0], b[1]])).ok_or(PduError)
        };
        Ok(match Opcode::from_u8(op).ok_or(PduError)? {
            Opcode::SniffReq => LmpPdu::SniffReq { t_sniff: word(0)?, attempt: word(2)? },
            Opcode::HoldReq => LmpPdu::HoldReq { t_hold: word(0)? },
            Opcode::ParkReq => LmpPdu::ParkReq,
            Opcode::Accepted => LmpPdu::Accepted(rest.first().and_then(|&o| Opcode::from_u8(o)).ok_or(PduError)?),
            Opcode::NotAccepted => {
                LmpPdu::NotAccepted(rest.first().and_then(|&o| Opcode::from_u8(o)).ok_or(PduError)?)
            }
            Opcode::Unsniff => LmpPdu::Unsniff,
            Opcode::Detach => LmpPdu::Detach,
        })
    }

    pub fn is_request(&self) -> bool {
        matches!(self, LmpPdu::SniffReq { .. } | LmpPdu::HoldReq { .. } | LmpPdu::ParkReq | LmpPdu::Unsniff)
    }
}

/// The responder's decision on a request.
pub fn respond(req: &LmpPdu) -> LmpPdu {
    let ok = match *req {
        LmpPdu::SniffReq { t_sniff, attempt } => t_sniff > 0 && t_sniff % 2 == 0 && attempt > 0 && attempt < t_sniff,
        LmpPdu::HoldReq { .. } | LmpPdu::ParkReq | LmpPdu::Unsniff => true,
        _ => false,
    };
    if ok {
        LmpPdu::Accepted(req.opcode())
    } else {
        LmpPdu::NotAccepted(req.opcode())
    }
}

/// Outcome of a request seen from the initiator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    NotAccepted,
}

/// Pure negotiation: the responder's answer, with delivery failures retried
/// until the budget runs out. `delivered(k)` tells whether attempt `k`
/// (request and answer) made it through.
pub fn negotiate(pdu: &LmpPdu, retry_budget: u32, mut delivered: impl FnMut(u32) -> bool) -> Verdict {
    for attempt in 0..=retry_budget {
        if delivered(attempt) {
            return match respond(pdu) {
                LmpPdu::Accepted(_) => Verdict::Accepted,
                _ => Verdict::NotAccepted,
            };
        }
    }
    Verdict::NotAccepted
}

/// Tracks retries of one outstanding request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Negotiation {
    pub pdu: LmpPdu,
    pub attempts: u32,
    pub budget: u32,
}

impl Negotiation {
    pub fn new(pdu: LmpPdu, budget: u32) -> Self {
        Negotiation { pdu, attempts: 0, budget }
    }

    /// Registers a send; false once the retry budget is spent.
    pub fn try_send(&mut self) -> bool {
        if self.attempts > self.budget {
            return false;
        }
        self.attempts += 1;
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeKind {
    Sniff { t_sniff: u16, attempt: u16 },
    Hold { t_hold: u16 },
    Park,
}

/// Timers both ends install once a mode request is accepted. Clocks are the
/// piconet CLK; slot counts are 625 µs slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeTimers {
    pub kind: ModeKind,
    /// CLK at the start of the first master-to-slave slot of the mode.
    pub anchor: u32,
}

impl ModeTimers {
    pub fn sniff(anchor: u32, t_sniff: u16, attempt: u16) -> Self {
        ModeTimers { kind: ModeKind::Sniff { t_sniff, attempt }, anchor: anchor & CLK_MASK }
    }

    pub fn hold(anchor: u32, t_hold: u16) -> Self {
        ModeTimers { kind: ModeKind::Hold { t_hold }, anchor: anchor & CLK_MASK }
    }

    /// CLK at which hold ends; `None` for other modes.
    pub fn hold_until(&self) -> Option<u32> {
        match self.kind {
            ModeKind::Hold { t_hold } => Some(self.anchor.wrapping_add(2 * t_hold as u32) & CLK_MASK),
            _ => None,
        }
    }

    pub fn attempt_slots(&self) -> u16 {
        match self.kind {
            ModeKind::Sniff { attempt, .. } => attempt,
            _ => 0,
        }
    }
}

/// Half-slot ticks from `from` to `to`, modulo the clock wrap.
pub fn clk_since(from: u32, to: u32) -> u32 {
    to.wrapping_sub(from) & CLK_MASK
}

/// True iff `clk` lies inside a sniff attempt window
/// `[anchor + k·T_sniff, anchor + k·T_sniff + attempt)` slots, `k ≥ 0`.
pub fn sniff_window_open(timers: &ModeTimers, clk: u32) -> bool {
    let ModeKind::Sniff { t_sniff, attempt } = timers.kind else {
        return false;
    };
    let rel = clk_since(timers.anchor, clk);
    if rel >= 1 << 27 {
        return false;
    }
    let slot = rel / 2;
    t_sniff > 0 && slot % (t_sniff as u32) < attempt as u32
}

/// True while the hold period has not yet elapsed.
pub fn hold_active(timers: &ModeTimers, clk: u32) -> bool {
    match timers.hold_until() {
        Some(until) => {
            let left = clk_since(clk, until);
            left > 0 && left < 1 << 27 && clk_since(timers.anchor, clk) < 1 << 27
        }
        None => false,
    }
}

/// True once the hold period is over. Before the anchor this is false too.
pub fn hold_over(timers: &ModeTimers, clk: u32) -> bool {
    match timers.hold_until() {
        Some(until) => clk_since(until, clk) < 1 << 27,
        None => true,
    }
}

/// Stage of one hold episode as reported in the event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HoldPhase {
    Entered,
    Resync,
    Exited,
}
