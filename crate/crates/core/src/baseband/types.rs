use alloc::collections::VecDeque;
use alloc::vec::Vec;
use core::fmt;

use crate::airframe::{BdAddr, LogicalChannel, PacketKind};
use crate::hopsel::{BtClock, DEFAULT_N_TRAIN};
use crate::linkman::{HoldPhase, LmpPdu, ModeKind, ModeTimers, Negotiation, Opcode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceState {
    Standby,
    Inquiry,
    InquiryScan,
    InquiryResponse,
    Page,
    PageScan,
    MasterResponse,
    SlaveResponse,
    ConnectionActive,
    Sniff,
    Hold,
    Park,
}

impl DeviceState {
    pub const ALL: [DeviceState; 12] = [
        DeviceState::Standby,
        DeviceState::Inquiry,
        DeviceState::InquiryScan,
        DeviceState::InquiryResponse,
        DeviceState::Page,
        DeviceState::PageScan,
        DeviceState::MasterResponse,
        DeviceState::SlaveResponse,
        DeviceState::ConnectionActive,
        DeviceState::Sniff,
        DeviceState::Hold,
        DeviceState::Park,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeviceState::Standby => "standby",
            DeviceState::Inquiry => "inquiry",
            DeviceState::InquiryScan => "inquiry_scan",
            DeviceState::InquiryResponse => "inquiry_response",
            DeviceState::Page => "page",
            DeviceState::PageScan => "page_scan",
            DeviceState::MasterResponse => "master_response",
            DeviceState::SlaveResponse => "slave_response",
            DeviceState::ConnectionActive => "connection_active",
            DeviceState::Sniff => "sniff",
            DeviceState::Hold => "hold",
            DeviceState::Park => "park",
        }
    }

    pub fn code(self) -> u8 {
        DeviceState::ALL.iter().position(|s| *s == self).unwrap_or(0) as u8
    }

    pub fn is_connected(self) -> bool {
        matches!(self, DeviceState::ConnectionActive | DeviceState::Sniff | DeviceState::Hold)
    }
}

impl fmt::Display for DeviceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether the state diagram (plus link-manager mode edges) permits `from → to`.
pub fn transition_allowed(from: DeviceState, to: DeviceState) -> bool {
    use DeviceState::*;
    if from == to {
        return false;
    }
    matches!(
        (from, to),
        (_, Standby)
            | (Standby, Inquiry | InquiryScan | Page | PageScan)
            | (Inquiry, Page)
            | (InquiryScan, InquiryResponse | PageScan)
            | (InquiryResponse, InquiryScan | PageScan)
            | (Page, MasterResponse | ConnectionActive)
            | (MasterResponse, Page | ConnectionActive)
            | (PageScan, SlaveResponse)
            | (SlaveResponse, PageScan | ConnectionActive)
            | (ConnectionActive, Page | Sniff | Hold | Park)
            | (Sniff | Hold, ConnectionActive)
            | (Park, PageScan)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    EnableInquiry,
    EnableInquiryScan,
    EnablePage(BdAddr),
    EnablePageScan,
    EnableSniff { t_sniff: u16, attempt: u16 },
    ExitSniff,
    EnableHold { t_hold: u16 },
    EnablePark,
    DetachReset,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::EnableInquiry => "enable_inquiry",
            Command::EnableInquiryScan => "enable_inquiry_scan",
            Command::EnablePage(_) => "enable_page",
            Command::EnablePageScan => "enable_page_scan",
            Command::EnableSniff { .. } => "enable_sniff",
            Command::ExitSniff => "exit_sniff",
            Command::EnableHold { .. } => "enable_hold",
            Command::EnablePark => "enable_park",
            Command::DetachReset => "detach_reset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandError {
    Illegal { state: DeviceState, command: &'static str },
    PiconetFull,
    Busy,
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandError::Illegal { state, command } => write!(f, "{command} not allowed in state {state}"),
            CommandError::PiconetFull => f.write_str("piconet already has 7 active slaves"),
            CommandError::Busy => f.write_str("a link-manager request is already outstanding"),
        }
    }
}

/// Procedure timeouts, in slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timeouts {
    pub inquiry_timeout: u32,
    pub page_timeout: u32,
    pub sniff_timeout_time: u16,
    pub supervision_timeout: u32,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts { inquiry_timeout: 2048, page_timeout: 2048, sniff_timeout_time: 2, supervision_timeout: 800 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimeoutError {
    Inquiry(u32),
    Page(u32),
    Sniff,
    Supervision,
}

impl fmt::Display for TimeoutError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeoutError::Inquiry(v) => write!(f, "inquiry_timeout {v} outside [2048, 98304] slots"),
            TimeoutError::Page(v) => write!(f, "page_timeout {v} outside [1, 65440] slots"),
            TimeoutError::Sniff => f.write_str("sniff_timeout_time must be positive"),
            TimeoutError::Supervision => f.write_str("supervision_timeout must be positive"),
        }
    }
}

impl Timeouts {
    pub fn validate(&self) -> Result<(), TimeoutError> {
        if !(2048..=98304).contains(&self.inquiry_timeout) {
            return Err(TimeoutError::Inquiry(self.inquiry_timeout));
        }
        if !(1..=65440).contains(&self.page_timeout) {
            return Err(TimeoutError::Page(self.page_timeout));
        }
        if self.sniff_timeout_time == 0 {
            return Err(TimeoutError::Sniff);
        }
        if self.supervision_timeout == 0 {
            return Err(TimeoutError::Supervision);
        }
        Ok(())
    }
}

/// Tunables of the baseband model. Defaults are the calibrated values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasebandConfig {
    /// Receive window opened by an idle synchronized slave at each master slot.
    pub listen_window_us: u32,
    pub sync_threshold: u32,
    /// Inquiry-scan backoff is uniform in `[floor, floor + span)` slots.
    pub backoff_floor_slots: u32,
    pub backoff_span_slots: u32,
    /// After its backoff a scanner answers every inquiry it hears for this long.
    pub response_window_slots: u32,
    pub page_response_timeout_slots: u32,
    pub new_connection_timeout_slots: u32,
    /// Master polls an otherwise idle slave this often.
    pub sync_period_slots: u32,
    pub n_train: u32,
    /// Slots after a hold ends before the master polls the returning slave.
    pub resync_delay_slots: u32,
    pub lmp_retry_budget: u32,
    pub buffer_capacity: usize,
    /// Inquiry completes once this many distinct devices have answered.
    pub inquiry_responses: u32,
    pub interlaced_inquiry_scan: bool,
}

impl Default for BasebandConfig {
    fn default() -> Self {
        BasebandConfig {
            listen_window_us: 32,
            sync_threshold: crate::airframe::DEFAULT_SYNC_THRESHOLD,
            backoff_floor_slots: 760,
            backoff_span_slots: 1024,
            response_window_slots: 640,
            page_response_timeout_slots: 4,
            new_connection_timeout_slots: 32,
            sync_period_slots: 100,
            n_train: DEFAULT_N_TRAIN,
            resync_delay_slots: 2,
            lmp_retry_budget: 4,
            buffer_capacity: 16,
            inquiry_responses: 1,
            interlaced_inquiry_scan: true,
        }
    }
}

/// Behaviour of the host above the link manager.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HostPolicy {
    /// Page every device found by a completed inquiry.
    pub page_after_inquiry: bool,
    /// Switch from inquiry scan to page scan once an inquiry response went out.
    pub page_scan_after_response: bool,
    /// Ask for hold again, with this `T_hold`, each time a hold ends.
    pub hold_repeat: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Master,
    Slave,
}

/// Power mode of one link, as seen by either end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkMode {
    Active,
    Sniff(ModeTimers),
    Hold(ModeTimers),
}

/// A baseband packet queued or in flight on a link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub kind: PacketKind,
    pub channel: LogicalChannel,
    pub payload: Vec<u8>,
    pub lmp: Option<LmpPdu>,
    /// End of the last transmission of this packet, in simulation µs.
    pub sent_end: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckResult {
    NotPending,
    Delivered,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NewConnection {
    pub deadline: u64,
    pub page_start: u64,
}

/// ARQ, link-manager and mode state of one master-slave link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub mode: LinkMode,
    pub tx_seqn: bool,
    pub in_flight: Option<Outgoing>,
    last_rx_seqn: Option<bool>,
    arqn_out: bool,
    pub lmp_out: VecDeque<LmpPdu>,
    pub negotiation: Option<Negotiation>,
    /// Mode to install once our `Accepted` is acknowledged.
    pub pending_install: Option<LmpPdu>,
    pub last_tx: u64,
    pub last_heard: u64,
    pub(crate) new_connection: Option<NewConnection>,
    pub hold_resync_started: bool,
}

impl Link {
    pub fn new(now: u64) -> Self {
        Link {
            mode: LinkMode::Active,
            tx_seqn: false,
            in_flight: None,
            last_rx_seqn: None,
            arqn_out: false,
            lmp_out: VecDeque::new(),
            negotiation: None,
            pending_install: None,
            last_tx: now,
            last_heard: now,
            new_connection: None,
            hold_resync_started: false,
        }
    }

    pub fn take_arqn(&mut self) -> bool {
        core::mem::take(&mut self.arqn_out)
    }

    /// Applies the peer's ARQN to our last transmission.
    pub fn on_arqn(&mut self, arqn: bool) -> AckResult {
        match &mut self.in_flight {
            Some(f) if f.sent_end.is_some() => {
                if arqn {
                    self.tx_seqn = !self.tx_seqn;
                    AckResult::Delivered
                } else {
                    AckResult::Lost
                }
            }
            _ => AckResult::NotPending,
        }
    }

    /// Registers a data or LMP payload from the peer; `None` for duplicates.
    pub fn accept_payload(&mut self, seqn: bool, crc_ok: bool) -> bool {
        if !crc_ok {
            self.arqn_out = false;
            return false;
        }
        self.arqn_out = true;
        if self.last_rx_seqn == Some(seqn) {
            return false;
        }
        self.last_rx_seqn = Some(seqn);
        true
    }

    pub fn needs_service(&self) -> bool {
        self.in_flight.is_some() || !self.lmp_out.is_empty() || self.new_connection.is_some()
    }
}

/// A slave as tracked by its master.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub am_addr: u8,
    pub addr: BdAddr,
    pub link: Link,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PiconetContext {
    pub role: Role,
    pub master_addr: BdAddr,
    /// The piconet (master) clock.
    pub clock: BtClock,
    /// Master clock minus this device's native clock, in µs.
    pub clock_offset_us: i64,
    pub am_addr: u8,
    pub members: Vec<Member>,
}

pub const MAX_ACTIVE_SLAVES: usize = 7;

impl PiconetContext {
    pub fn free_am_addr(&self) -> Option<u8> {
        (1..=MAX_ACTIVE_SLAVES as u8).find(|a| self.members.iter().all(|m| m.am_addr != *a))
    }

    pub fn member(&self, am: u8) -> Option<usize> {
        self.members.iter().position(|m| m.am_addr == am)
    }
}

/// A queued user payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxItem {
    pub dest: BdAddr,
    pub kind: PacketKind,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferFull;

/// Bounded FIFOs between the link manager and the baseband.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LinkBuffers {
    pub tx: VecDeque<TxItem>,
    pub rx: VecDeque<Vec<u8>>,
    pub capacity: usize,
    pub dropped: u64,
}

impl LinkBuffers {
    pub fn new(capacity: usize) -> Self {
        LinkBuffers { capacity, ..Default::default() }
    }

    /// Appends to the transmit FIFO; when full the new item is dropped.
    pub fn push_tx(&mut self, item: TxItem) -> Result<(), BufferFull> {
        if self.tx.len() >= self.capacity {
            self.dropped += 1;
            return Err(BufferFull);
        }
        self.tx.push_back(item);
        Ok(())
    }

    pub fn push_rx(&mut self, payload: Vec<u8>) -> Result<(), BufferFull> {
        if self.rx.len() >= self.capacity {
            self.dropped += 1;
            return Err(BufferFull);
        }
        self.rx.push_back(payload);
        Ok(())
    }

    /// Removes the oldest item addressed to `dest`.
    pub fn pop_for(&mut self, dest: BdAddr) -> Option<TxItem> {
        let i = self.tx.iter().position(|t| t.dest == dest)?;
        self.tx.remove(i)
    }

    pub fn has_for(&self, dest: BdAddr) -> bool {
        self.tx.iter().any(|t| t.dest == dest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RfGate {
    pub enable_tx_rf: bool,
    pub enable_rx_rf: bool,
    pub tuned_channel: u8,
}

/// What a device reports to the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    StateChanged { from: DeviceState, to: DeviceState },
    CommandRejected { command: &'static str, error: CommandError },
    PacketSent { kind: PacketKind, channel: u8, am_addr: u8, start: u64, bits: u32 },
    PacketReceived { kind: PacketKind, channel: u8, am_addr: u8 },
    ReceiveFailed { channel: u8, header: bool },
    InquiryResult { addr: BdAddr },
    InquiryComplete { slots: u64, responses: u32 },
    InquiryFailed { slots: u64, responses: u32 },
    PageComplete { slave: BdAddr, am_addr: u8, slots: u64 },
    PageFailed { target: BdAddr, slots: u64 },
    Synchronized { master: BdAddr, am_addr: u8 },
    LinkLost { peer: BdAddr },
    ModeInstalled { peer: BdAddr, kind: ModeKind, anchor: u32 },
    ModeEnded { peer: BdAddr },
    LmpRefused { opcode: Opcode },
    Hold(HoldPhase),
    DataDelivered { bytes: u32 },
    DataLost { lmp: bool },
    BufferDrop,
}

/// Round-robin poll order: the first eligible AM address after `last`,
/// wrapping around. `candidates` pairs each AM address with its eligibility.
pub fn next_poll(candidates: &[(u8, bool)], last: Option<u8>) -> Option<u8> {
    let mut eligible: Vec<u8> = candidates.iter().filter(|(_, e)| *e).map(|(a, _)| *a).collect();
    eligible.sort_unstable();
    let after = last.unwrap_or(0);
    eligible.iter().copied().find(|&a| a > after).or_else(|| eligible.first().copied())
}
