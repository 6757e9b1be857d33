//! Per-device baseband: the state machine together with its transmitter,
//! receiver, buffers, piconet context, clock and RF gating.
//!
//! The engine drives a [`Device`] through four entry points: [`Device::command`]
//! for host commands, [`Device::wake`] at clock edges, [`Device::radio_mut`]
//! for symbol-level transmit/receive, and [`Device::on_frame`] once the
//! receiver has a complete frame. Every decision is taken at a clock edge or
//! on frame arrival; between those the radio runs on its own.

mod radio;
mod types;

pub use radio::{Radio, RxFrame, RxWindow, TxFrame, MAX_FRAME_BITS};
pub use types::*;

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::airframe::{
    air_bits, build_packet, AccessCode, BdAddr, FhsRecord, LogicalChannel, Packet, PacketHeader, PacketKind,
    ParseOutcome, ID_BITS,
};
use crate::hopsel::{
    connection_channel, hop, inquiry_key, interlaced_scan_channel, scan_channel, scan_position, BtClock, HopContext,
    HopMode, CLK_MASK, CLOCK_PERIOD_US, HOP_SET_SIZE, SCAN_WINDOW_TICKS,
};
use crate::linkman::{clk_since, hold_active, hold_over, respond, sniff_window_open, HoldPhase, LmpPdu, ModeKind, ModeTimers, Negotiation};

const SLOT: u64 = 625;

/// A device found by inquiry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InquiryResult {
    pub addr: BdAddr,
    pub clock: BtClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PageProc {
    target: BdAddr,
    est: BtClock,
    start: u64,
    deadline: u64,
    origin: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScanPhase {
    Listen,
    Backoff { until: u64 },
    Answer { until: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Proc {
    Idle,
    Inquiry { start: u64, origin: u32, deadline: u64 },
    Scan(ScanPhase),
    Page(PageProc),
    MasterResponse { page: PageProc, channel: u8, am_addr: u8, deadline: u64 },
    PageScan,
    SlaveResponse { channel: u8, deadline: u64 },
    Connected,
}

/// One Bluetooth device.
#[derive(Debug, Clone)]
pub struct Device {
    addr: BdAddr,
    native: BtClock,
    state: DeviceState,
    cfg: BasebandConfig,
    timeouts: Timeouts,
    policy: HostPolicy,
    rx_latency: u64,
    rng: ChaCha8Rng,
    radio: Radio,
    buffers: LinkBuffers,
    piconet: Option<PiconetContext>,
    /// Link to the master when this device is a slave.
    uplink: Option<Link>,
    proc: Proc,
    next_wake: u64,
    rearm: Option<(u64, DeviceState)>,
    estimates: Vec<InquiryResult>,
    inquiry_found: Vec<InquiryResult>,
    page_queue: VecDeque<BdAddr>,
    awaiting: Option<u8>,
    last_polled: Option<u8>,
    sniff_window_end: u64,
    tuned: u8,
}

impl Device {
    pub fn new(
        addr: BdAddr,
        native: BtClock,
        cfg: BasebandConfig,
        timeouts: Timeouts,
        policy: HostPolicy,
        rx_latency_us: u32,
        rng: ChaCha8Rng,
    ) -> Self {
        Device {
            addr,
            native,
            state: DeviceState::Standby,
            cfg,
            timeouts,
            policy,
            rx_latency: rx_latency_us as u64,
            rng,
            radio: Radio::new(cfg.sync_threshold),
            buffers: LinkBuffers::new(cfg.buffer_capacity),
            piconet: None,
            uplink: None,
            proc: Proc::Idle,
            next_wake: u64::MAX,
            rearm: None,
            estimates: Vec::new(),
            inquiry_found: Vec::new(),
            page_queue: VecDeque::new(),
            awaiting: None,
            last_polled: None,
            sniff_window_end: 0,
            tuned: 0,
        }
    }

    pub fn addr(&self) -> BdAddr {
        self.addr
    }

    pub fn native_clock(&self) -> BtClock {
        self.native
    }

    pub fn state(&self) -> DeviceState {
        self.state
    }

    pub fn piconet(&self) -> Option<&PiconetContext> {
        self.piconet.as_ref()
    }

    pub fn uplink(&self) -> Option<&Link> {
        self.uplink.as_ref()
    }

    pub fn buffers(&self) -> &LinkBuffers {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut LinkBuffers {
        &mut self.buffers
    }

    pub fn inquiry_results(&self) -> &[InquiryResult] {
        &self.inquiry_found
    }

    pub fn radio_mut(&mut self) -> &mut Radio {
        &mut self.radio
    }

    pub fn radio(&self) -> &Radio {
        &self.radio
    }

    pub fn next_wake(&self) -> u64 {
        self.next_wake
    }

    pub fn tuned_channel(&self) -> u8 {
        self.tuned
    }

    pub fn note_tuned(&mut self, ch: u8) {
        self.tuned = ch;
    }

    /// Remembers a clock estimate for `addr`, as an earlier inquiry would have.
    pub fn set_clock_estimate(&mut self, addr: BdAddr, clock: BtClock) {
        self.estimates.retain(|e| e.addr != addr);
        self.estimates.push(InquiryResult { addr, clock });
    }

    /// Master side of an already established link, bypassing inquiry and page.
    pub fn attach_slave(&mut self, now: u64, slave: BdAddr) -> Option<u8> {
        let pico = self.piconet.get_or_insert_with(|| PiconetContext {
            role: Role::Master,
            master_addr: self.addr,
            clock: self.native,
            clock_offset_us: 0,
            am_addr: 0,
            members: Vec::new(),
        });
        let am = pico.free_am_addr()?;
        pico.members.push(Member { am_addr: am, addr: slave, link: Link::new(now) });
        if self.state != DeviceState::ConnectionActive {
            self.state = DeviceState::ConnectionActive;
        }
        self.proc = Proc::Connected;
        self.next_wake = self.compute_wake(now);
        Some(am)
    }

    /// Slave side of an already established link.
    pub fn attach_master(&mut self, now: u64, master: BdAddr, clock: BtClock, am_addr: u8) {
        self.piconet = Some(PiconetContext {
            role: Role::Slave,
            master_addr: master,
            clock,
            clock_offset_us: self.native.offset_to(&clock),
            am_addr,
            members: Vec::new(),
        });
        self.uplink = Some(Link::new(now));
        self.state = DeviceState::ConnectionActive;
        self.proc = Proc::Connected;
        self.next_wake = self.compute_wake(now);
    }

    pub fn enqueue(&mut self, item: TxItem, out: &mut Vec<Event>) {
        if self.buffers.push_tx(item).is_err() {
            out.push(Event::BufferDrop);
        }
    }

    fn role(&self) -> Option<Role> {
        self.piconet.as_ref().map(|p| p.role)
    }

    fn set_state(&mut self, to: DeviceState, out: &mut Vec<Event>) {
        if self.state == to {
            return;
        }
        debug_assert!(transition_allowed(self.state, to), "{} -> {}", self.state, to);
        out.push(Event::StateChanged { from: self.state, to });
        self.state = to;
    }

    fn reset_to_standby(&mut self, out: &mut Vec<Event>) {
        self.radio.reset();
        self.piconet = None;
        self.uplink = None;
        self.proc = Proc::Idle;
        self.awaiting = None;
        self.last_polled = None;
        self.rearm = None;
        self.page_queue.clear();
        self.set_state(DeviceState::Standby, out);
    }

    /// Clock whose edges schedule this device. Slaves listen on the master
    /// clock delayed by the known receive latency.
    fn schedule_clock(&self) -> BtClock {
        match (&self.piconet, self.state) {
            (Some(p), s) if p.role == Role::Slave && (s.is_connected() || s == DeviceState::Park) => {
                BtClock::new(p.clock.phase_us + CLOCK_PERIOD_US - self.rx_latency)
            }
            _ => self.native,
        }
    }

    fn compute_wake(&self, now: u64) -> u64 {
        match self.state {
            DeviceState::Standby => self.rearm.map_or(u64::MAX, |(at, _)| at.max(now + 1)),
            DeviceState::Park => u64::MAX,
            _ => self.schedule_clock().next_edge(now),
        }
    }

    pub fn command(&mut self, now: u64, cmd: Command, out: &mut Vec<Event>) -> Result<(), CommandError> {
        let illegal = CommandError::Illegal { state: self.state, command: cmd.name() };
        let slave_connected = self.role() == Some(Role::Slave) && self.state == DeviceState::ConnectionActive;
        match cmd {
            Command::EnableInquiry => {
                if self.state != DeviceState::Standby {
                    return Err(illegal);
                }
                self.rearm = None;
                self.proc = Proc::Inquiry {
                    start: now,
                    origin: self.native.clk(now),
                    deadline: now + self.timeouts.inquiry_timeout as u64 * SLOT,
                };
                self.inquiry_found.clear();
                self.set_state(DeviceState::Inquiry, out);
            }
            Command::EnableInquiryScan => {
                if self.state != DeviceState::Standby {
                    return Err(illegal);
                }
                self.rearm = None;
                self.proc = Proc::Scan(ScanPhase::Listen);
                self.set_state(DeviceState::InquiryScan, out);
                self.scan_listen(now);
            }
            Command::EnablePage(target) => {
                let master_ok = self.state == DeviceState::ConnectionActive && self.role() == Some(Role::Master);
                if self.state != DeviceState::Standby && !master_ok {
                    return Err(illegal);
                }
                if self.piconet.as_ref().is_some_and(|p| p.free_am_addr().is_none()) {
                    return Err(CommandError::PiconetFull);
                }
                self.rearm = None;
                self.start_page(now, target, out);
            }
            Command::EnablePageScan => {
                if !matches!(self.state, DeviceState::Standby | DeviceState::InquiryScan | DeviceState::Park) {
                    return Err(illegal);
                }
                self.rearm = None;
                self.enter_page_scan(now, out);
            }
            Command::EnableSniff { t_sniff, attempt } => {
                if !slave_connected {
                    return Err(illegal);
                }
                self.request_mode(LmpPdu::SniffReq { t_sniff, attempt })?;
            }
            Command::ExitSniff => {
                if self.state != DeviceState::Sniff {
                    return Err(illegal);
                }
                self.request_mode(LmpPdu::Unsniff)?;
            }
            Command::EnableHold { t_hold } => {
                if !slave_connected {
                    return Err(illegal);
                }
                self.request_mode(LmpPdu::HoldReq { t_hold })?;
            }
            Command::EnablePark => {
                if !slave_connected {
                    return Err(illegal);
                }
                self.request_mode(LmpPdu::ParkReq)?;
            }
            Command::DetachReset => self.reset_to_standby(out),
        }
        self.next_wake = self.compute_wake(now);
        Ok(())
    }

    fn request_mode(&mut self, pdu: LmpPdu) -> Result<(), CommandError> {
        let budget = self.cfg.lmp_retry_budget;
        let link = self.uplink.as_mut().ok_or(CommandError::Busy)?;
        if link.negotiation.is_some() {
            return Err(CommandError::Busy);
        }
        link.negotiation = Some(Negotiation::new(pdu, budget));
        link.lmp_out.push_back(pdu);
        Ok(())
    }

    fn start_page(&mut self, now: u64, target: BdAddr, out: &mut Vec<Event>) {
        let est = self.estimates.iter().find(|e| e.addr == target).map_or(self.native, |e| e.clock);
        self.proc = Proc::Page(PageProc {
            target,
            est,
            start: now,
            deadline: now + self.timeouts.page_timeout as u64 * SLOT,
            origin: self.native.clk(now),
        });
        self.awaiting = None;
        self.radio.stop_listening();
        self.set_state(DeviceState::Page, out);
    }

    fn enter_page_scan(&mut self, now: u64, out: &mut Vec<Event>) {
        self.proc = Proc::PageScan;
        self.set_state(DeviceState::PageScan, out);
        self.page_scan_listen(now);
    }

    /// Leaves a failed page response; page scanning resumes at the next scan window.
    fn page_scan_holdoff(&mut self, now: u64, out: &mut Vec<Event>) {
        let clk = self.native.clk(now);
        let at = self.native.edge_after(now, (SCAN_WINDOW_TICKS - clk % SCAN_WINDOW_TICKS) as u64);
        self.radio.stop_listening();
        self.proc = Proc::Idle;
        self.uplink = None;
        self.piconet = None;
        self.set_state(DeviceState::Standby, out);
        self.rearm = Some((at, DeviceState::PageScan));
    }

    fn send(&mut self, start: u64, channel: u8, packet: &Packet, uap: u8, out: &mut Vec<Event>) -> Option<u64> {
        let bits = build_packet(packet, uap).ok()?;
        let n = bits.len() as u32;
        if !self.radio.transmit(TxFrame { start, channel, bits }) {
            return None;
        }
        out.push(Event::PacketSent {
            kind: packet.kind,
            channel,
            am_addr: packet.header.map_or(0, |h| h.am_addr),
            start,
            bits: n,
        });
        Some(start + n as u64)
    }

    fn scan_listen(&mut self, now: u64) {
        let clk = self.native.clk(now);
        let ch = if self.cfg.interlaced_inquiry_scan {
            interlaced_scan_channel(HopMode::InquiryScan, inquiry_key(), clk)
        } else {
            scan_channel(HopMode::InquiryScan, inquiry_key(), clk)
        };
        self.continuous_listen(now, ch, AccessCode::giac(), 0);
    }

    fn page_scan_listen(&mut self, now: u64) {
        let ch = scan_channel(HopMode::PageScan, self.addr.hop_key(), self.native.clk(now));
        self.continuous_listen(now, ch, AccessCode::device(&self.addr), self.addr.uap());
    }

    fn continuous_listen(&mut self, now: u64, ch: u8, code: AccessCode, uap: u8) {
        match self.radio.window() {
            Some(w) if w.code == code && w.close_at == u64::MAX => self.radio.retune(ch),
            _ => {
                let open_at = now.max(self.radio.tx_busy_until());
                self.radio.listen(RxWindow { channel: ch, open_at, close_at: u64::MAX, code, uap });
            }
        }
    }

    fn expect_response(&mut self, at: u64, ch: u8, code: AccessCode, uap: u8) {
        let open_at = at + self.rx_latency;
        let close_at = open_at + self.cfg.listen_window_us as u64;
        self.radio.listen(RxWindow { channel: ch, open_at, close_at, code, uap });
    }

    /// Clock-edge processing.
    pub fn wake(&mut self, now: u64, out: &mut Vec<Event>) {
        match self.state {
            DeviceState::Standby => {
                if let Some((at, next)) = self.rearm {
                    if now >= at {
                        self.rearm = None;
                        match next {
                            DeviceState::PageScan => self.enter_page_scan(now, out),
                            DeviceState::InquiryScan => {
                                self.proc = Proc::Scan(ScanPhase::Listen);
                                self.set_state(DeviceState::InquiryScan, out);
                                self.scan_listen(now);
                            }
                            _ => {}
                        }
                    }
                }
            }
            DeviceState::Inquiry => self.inquiry_edge(now, out),
            DeviceState::InquiryScan | DeviceState::InquiryResponse => self.scan_edge(now, out),
            DeviceState::Page | DeviceState::MasterResponse => self.page_edge(now, out),
            DeviceState::PageScan => self.page_scan_listen(now),
            DeviceState::SlaveResponse => {
                if let Proc::SlaveResponse { deadline, .. } = self.proc {
                    if now >= deadline && !self.radio.receiving() {
                        self.page_scan_holdoff(now, out);
                    }
                }
            }
            DeviceState::ConnectionActive | DeviceState::Sniff | DeviceState::Hold => match self.role() {
                Some(Role::Master) => self.master_edge(now, out),
                Some(Role::Slave) => self.slave_edge(now, out),
                None => {}
            },
            DeviceState::Park => {}
        }
        self.next_wake = self.compute_wake(now);
    }

    fn inquiry_edge(&mut self, now: u64, out: &mut Vec<Event>) {
        let Proc::Inquiry { start, origin, deadline } = self.proc else {
            return;
        };
        if now >= deadline {
            let slots = (deadline - start) / SLOT;
            let responses = self.inquiry_found.len() as u32;
            out.push(Event::InquiryFailed { slots, responses });
            self.finish_inquiry(now, out);
            return;
        }
        let clk = self.native.clk(now);
        let x = scan_position(HopMode::InquiryScan, inquiry_key(), clk) as u32;
        let base = ((x + HOP_SET_SIZE - 8) % HOP_SET_SIZE) as u8;
        let ctx = HopContext::new(HopMode::Inquiry, inquiry_key(), clk).with_train(origin, base, self.cfg.n_train);
        if clk & 2 == 0 {
            let ch = hop(&ctx);
            self.send(now, ch, &Packet::id(AccessCode::giac()), 0, out);
        } else {
            let ch = hop(&HopContext { clock: clk.wrapping_sub(2) & CLK_MASK, ..ctx });
            self.expect_response(now, ch, AccessCode::giac(), 0);
        }
    }

    fn finish_inquiry(&mut self, now: u64, out: &mut Vec<Event>) {
        self.radio.stop_listening();
        self.proc = Proc::Idle;
        if self.policy.page_after_inquiry && !self.inquiry_found.is_empty() {
            self.page_queue = self.inquiry_found.iter().map(|r| r.addr).collect();
            let first = self.page_queue.pop_front().unwrap();
            self.start_page(now, first, out);
        } else {
            self.set_state(DeviceState::Standby, out);
        }
    }

    fn scan_edge(&mut self, now: u64, out: &mut Vec<Event>) {
        let Proc::Scan(phase) = self.proc else {
            return;
        };
        match phase {
            ScanPhase::Backoff { until } => {
                if now >= until {
                    let until = now + self.cfg.response_window_slots as u64 * SLOT;
                    self.proc = Proc::Scan(ScanPhase::Answer { until });
                    self.set_state(DeviceState::InquiryScan, out);
                    self.scan_listen(now);
                }
            }
            ScanPhase::Answer { until } => {
                if self.state == DeviceState::InquiryResponse {
                    if self.radio.tx_busy_until() > now {
                        return;
                    }
                    if self.policy.page_scan_after_response {
                        self.enter_page_scan(now, out);
                        return;
                    }
                    self.set_state(DeviceState::InquiryScan, out);
                }
                if now >= until {
                    self.proc = Proc::Scan(ScanPhase::Listen);
                }
                self.scan_listen(now);
            }
            ScanPhase::Listen => self.scan_listen(now),
        }
    }

    fn page_edge(&mut self, now: u64, out: &mut Vec<Event>) {
        let clk = self.native.clk(now);
        match self.proc {
            Proc::Page(p) => {
                if now >= p.deadline {
                    self.page_failed(now, p, out);
                    return;
                }
                let key = p.target.hop_key();
                let x_est = scan_position(HopMode::PageScan, key, p.est.clk(now)) as u32;
                let base = ((x_est + HOP_SET_SIZE - 8) % HOP_SET_SIZE) as u8;
                let ctx = HopContext::new(HopMode::Page, key, clk).with_train(p.origin, base, self.cfg.n_train);
                let code = AccessCode::device(&p.target);
                if clk & 2 == 0 {
                    let ch = hop(&ctx);
                    self.send(now, ch, &Packet::id(code), p.target.uap(), out);
                } else {
                    let ch = hop(&HopContext { clock: clk.wrapping_sub(2) & CLK_MASK, ..ctx });
                    self.expect_response(now, ch, code, p.target.uap());
                }
            }
            Proc::MasterResponse { page, channel, am_addr, deadline } => {
                if now >= page.deadline {
                    self.page_failed(now, page, out);
                    return;
                }
                let code = AccessCode::device(&page.target);
                if clk % 4 == 0 {
                    if now >= deadline {
                        self.proc = Proc::Page(page);
                        self.set_state(DeviceState::Page, out);
                        self.page_edge(now, out);
                        return;
                    }
                    let rec = FhsRecord { addr: self.addr, clk27_2: clk >> 2, am_addr };
                    let fhs = Packet::with_header(code, PacketHeader::new(0, PacketKind::Fhs), rec.encode());
                    self.send(now, channel, &fhs, page.target.uap(), out);
                } else if clk % 4 == 2 {
                    self.expect_response(now, channel, code, page.target.uap());
                }
            }
            _ => {}
        }
    }

    fn page_failed(&mut self, now: u64, p: PageProc, out: &mut Vec<Event>) {
        out.push(Event::PageFailed { target: p.target, slots: (p.deadline - p.start) / SLOT });
        self.after_page(now, out);
    }

    fn after_page(&mut self, now: u64, out: &mut Vec<Event>) {
        self.radio.stop_listening();
        if let Some(next) = self.page_queue.pop_front() {
            self.start_page(now, next, out);
            return;
        }
        if self.piconet.as_ref().is_some_and(|p| !p.members.is_empty()) {
            self.proc = Proc::Connected;
            self.set_state(DeviceState::ConnectionActive, out);
        } else {
            self.piconet = None;
            self.proc = Proc::Idle;
            self.set_state(DeviceState::Standby, out);
        }
    }

    fn master_edge(&mut self, now: u64, out: &mut Vec<Event>) {
        let clk = self.native.clk(now);
        if clk % 4 != 0 {
            return;
        }
        let sup = self.timeouts.supervision_timeout as u64 * SLOT;
        let sync = self.cfg.sync_period_slots as u64 * SLOT;
        let resync = 2 * self.cfg.resync_delay_slots;
        self.settle_awaiting(out);
        let Some(pico) = self.piconet.as_mut() else {
            return;
        };
        let mut lost = Vec::new();
        let mut failed_pages = Vec::new();
        pico.members.retain(|m| {
            if let Some(nc) = m.link.new_connection {
                if now >= nc.deadline {
                    failed_pages.push((m.addr, nc.page_start));
                    return false;
                }
            }
            let quiet = now.saturating_sub(m.link.last_heard);
            let allowance = match m.link.mode {
                LinkMode::Sniff(t) => sup + 2 * t.kind_period() * SLOT,
                LinkMode::Hold(t) => sup + t.kind_period() * SLOT,
                LinkMode::Active => sup,
            };
            if quiet > allowance {
                lost.push(m.addr);
                return false;
            }
            true
        });
        for peer in lost {
            out.push(Event::LinkLost { peer });
        }
        if let Some((target, start)) = failed_pages.first().copied() {
            let deadline = start + self.timeouts.page_timeout as u64 * SLOT;
            if now < deadline {
                let est = self.estimates.iter().find(|e| e.addr == target).map_or(self.native, |e| e.clock);
                self.proc = Proc::Page(PageProc { target, est, start, deadline, origin: self.native.clk(start) });
                self.set_state(DeviceState::Page, out);
                self.page_edge(now, out);
                return;
            }
            out.push(Event::PageFailed { target, slots: (deadline - start) / SLOT });
        }
        let pico = self.piconet.as_mut().unwrap();
        if pico.members.is_empty() {
            if let Some(next) = self.page_queue.pop_front() {
                self.start_page(now, next, out);
            } else {
                self.piconet = None;
                self.proc = Proc::Idle;
                self.set_state(DeviceState::Standby, out);
            }
            return;
        }
        if self.page_queue.front().is_some() && pico.members.iter().all(|m| m.link.new_connection.is_none()) {
            let next = self.page_queue.pop_front().unwrap();
            self.start_page(now, next, out);
            return;
        }
        if self.radio.tx_busy_until() > now {
            return;
        }
        let candidates: Vec<(u8, bool)> = pico
            .members
            .iter()
            .map(|m| {
                let l = &m.link;
                let (eligible, resync_due) = match l.mode {
                    LinkMode::Active => (true, false),
                    LinkMode::Sniff(t) => (sniff_window_open(&t, clk), false),
                    LinkMode::Hold(t) => {
                        let until = t.hold_until().unwrap_or(t.anchor);
                        let open = !hold_active(&t, clk) && clk_since(until, clk) >= resync && clk_since(until, clk) < 1 << 27;
                        (open, open)
                    }
                };
                let wants = resync_due
                    || l.needs_service()
                    || self.buffers.has_for(m.addr)
                    || now.saturating_sub(l.last_tx) >= sync;
                (m.am_addr, eligible && wants)
            })
            .collect();
        let Some(am) = next_poll(&candidates, self.last_polled) else {
            return;
        };
        self.last_polled = Some(am);
        let idx = pico.member(am).unwrap();
        let master_addr = pico.master_addr;
        let dest = pico.members[idx].addr;
        let link = &mut pico.members[idx].link;
        if let LinkMode::Hold(_) = link.mode {
            link.mode = LinkMode::Active;
            out.push(Event::ModeEnded { peer: dest });
        }
        let (kind, packet_ch, payload, seqn) = next_outgoing(link, &mut self.buffers, dest, PacketKind::Poll);
        let mut header = PacketHeader::new(am, kind);
        header.arqn = link.take_arqn();
        header.seqn = seqn;
        link.last_tx = now;
        let code = AccessCode::channel(&master_addr);
        let mut packet = Packet::with_header(code, header, payload);
        packet.channel = packet_ch;
        let ch = connection_channel(master_addr.hop_key(), clk >> 1);
        let end = self.send(now, ch, &packet, master_addr.uap(), out);
        let pico = self.piconet.as_mut().unwrap();
        if let Some(f) = pico.members[idx].link.in_flight.as_mut() {
            f.sent_end = end;
        }
        self.awaiting = Some(am);
        let rx_at = now + kind.slots() * SLOT;
        let rx_ch = connection_channel(master_addr.hop_key(), self.native.clk(rx_at) >> 1);
        self.expect_response(rx_at, rx_ch, code, master_addr.uap());
    }

    /// Called at the master's next transmit slot: a missing reply counts as a loss.
    fn settle_awaiting(&mut self, out: &mut Vec<Event>) {
        let Some(am) = self.awaiting.take() else {
            return;
        };
        let Some(pico) = self.piconet.as_mut() else {
            return;
        };
        let Some(idx) = pico.member(am) else {
            return;
        };
        let link = &mut pico.members[idx].link;
        if link.in_flight.as_ref().is_some_and(|f| f.sent_end.is_some()) {
            let lmp = link.in_flight.as_ref().unwrap().lmp.is_some();
            out.push(Event::DataLost { lmp });
            register_loss(link);
        }
    }

    fn slave_edge(&mut self, now: u64, out: &mut Vec<Event>) {
        let clk = self.schedule_clock().clk(now);
        let sup = self.timeouts.supervision_timeout as u64 * SLOT;
        let Some(pico) = self.piconet.as_ref() else {
            return;
        };
        let master = pico.master_addr;
        let code = AccessCode::channel(&master);
        let uap = master.uap();
        let key = master.hop_key();
        let Some(link) = self.uplink.as_mut() else {
            return;
        };
        if let Some(nc) = link.new_connection {
            if now >= nc.deadline {
                self.page_scan_holdoff(now, out);
                return;
            }
        }
        let allowance = match link.mode {
            LinkMode::Sniff(t) => sup + 2 * t.kind_period() * SLOT,
            _ => sup,
        };
        if now.saturating_sub(link.last_heard) > allowance {
            out.push(Event::LinkLost { peer: master });
            self.reset_to_standby(out);
            return;
        }
        if self.radio.tx_busy_until() > now || self.radio.receiving() {
            return;
        }
        let ch = connection_channel(key, clk >> 1);
        match link.mode {
            LinkMode::Active => {
                if clk % 4 == 0 {
                    let close_at = now + self.cfg.listen_window_us as u64;
                    self.radio.listen(RxWindow { channel: ch, open_at: now, close_at, code, uap });
                }
            }
            LinkMode::Sniff(t) => {
                if clk % 2 == 0 && sniff_window_open(&t, clk) {
                    let ModeKind::Sniff { t_sniff, attempt } = t.kind else {
                        return;
                    };
                    let slot = clk_since(t.anchor, clk) / 2 % t_sniff as u32;
                    let remaining = (attempt as u32 - slot) as u64;
                    if slot == 0 || self.radio.window().is_none() {
                        self.sniff_window_end = now + remaining * SLOT;
                        self.radio.listen(RxWindow { channel: ch, open_at: now, close_at: self.sniff_window_end, code, uap });
                    } else {
                        self.radio.retune(ch);
                    }
                }
            }
            LinkMode::Hold(t) => {
                if hold_active(&t, clk) {
                    self.radio.stop_listening();
                    return;
                }
                if !hold_over(&t, clk) {
                    if clk % 4 == 0 {
                        let close_at = now + self.cfg.listen_window_us as u64;
                        self.radio.listen(RxWindow { channel: ch, open_at: now, close_at, code, uap });
                    }
                    return;
                }
                if !link.hold_resync_started {
                    link.hold_resync_started = true;
                    link.last_heard = now;
                    out.push(Event::Hold(HoldPhase::Resync));
                }
                if clk % 2 == 0 || self.radio.window().is_none() {
                    self.radio.listen(RxWindow { channel: ch, open_at: now, close_at: u64::MAX, code, uap });
                }
            }
        }
    }

    /// Handles a frame the receiver finished collecting.
    pub fn on_frame(&mut self, now: u64, frame: RxFrame, out: &mut Vec<Event>) {
        let tx_start = frame.start.saturating_sub(self.rx_latency);
        let packet = match &frame.outcome {
            ParseOutcome::Ok(p) => {
                let am = p.header.map_or(0, |h| h.am_addr);
                out.push(Event::PacketReceived { kind: p.kind, channel: frame.channel, am_addr: am });
                Some(p.clone())
            }
            ParseOutcome::HeaderError => {
                out.push(Event::ReceiveFailed { channel: frame.channel, header: true });
                None
            }
            ParseOutcome::PayloadError => {
                out.push(Event::ReceiveFailed { channel: frame.channel, header: false });
                None
            }
            ParseOutcome::AccessMiss => None,
        };
        match self.state {
            DeviceState::Inquiry => {
                if let Some(p) = packet.filter(|p| p.kind == PacketKind::Fhs) {
                    self.inquiry_fhs(now, tx_start, &p, out);
                }
            }
            DeviceState::InquiryScan => {
                if packet.is_some_and(|p| p.kind == PacketKind::Id) {
                    self.scan_hit(now, tx_start, frame.channel, out);
                } else {
                    self.scan_listen(now);
                }
            }
            DeviceState::Page => {
                if packet.is_some_and(|p| p.kind == PacketKind::Id) {
                    if let Proc::Page(page) = self.proc {
                        let am_addr = self.piconet.as_ref().and_then(|p| p.free_am_addr()).unwrap_or(1);
                        let deadline = now + self.cfg.page_response_timeout_slots as u64 * SLOT;
                        self.proc = Proc::MasterResponse { page, channel: frame.channel, am_addr, deadline };
                        self.set_state(DeviceState::MasterResponse, out);
                    }
                }
            }
            DeviceState::MasterResponse => {
                if packet.is_some_and(|p| p.kind == PacketKind::Id) {
                    self.master_connected(now, out);
                }
            }
            DeviceState::PageScan => {
                if packet.is_some_and(|p| p.kind == PacketKind::Id) {
                    let at = tx_start + SLOT;
                    let code = AccessCode::device(&self.addr);
                    if at > now && self.send(at, frame.channel, &Packet::id(code), self.addr.uap(), out).is_some() {
                        let deadline = at + self.cfg.page_response_timeout_slots as u64 * SLOT;
                        self.proc = Proc::SlaveResponse { channel: frame.channel, deadline };
                        self.set_state(DeviceState::SlaveResponse, out);
                        self.radio.listen(RxWindow {
                            channel: frame.channel,
                            open_at: at + ID_BITS as u64,
                            close_at: u64::MAX,
                            code,
                            uap: self.addr.uap(),
                        });
                        return;
                    }
                }
                self.page_scan_listen(now);
            }
            DeviceState::SlaveResponse => {
                if let Some(p) = packet.filter(|p| p.kind == PacketKind::Fhs) {
                    if let Ok(rec) = FhsRecord::decode(&p.payload) {
                        let at = tx_start + SLOT;
                        let code = AccessCode::device(&self.addr);
                        if at > now && self.send(at, frame.channel, &Packet::id(code), self.addr.uap(), out).is_some() {
                            let clock = BtClock::from_sample(rec.clk27_2 << 2, tx_start);
                            self.attach_master(now, rec.addr, clock, rec.am_addr);
                            let link = self.uplink.as_mut().unwrap();
                            link.new_connection = Some(NewConnection {
                                deadline: at + self.cfg.new_connection_timeout_slots as u64 * SLOT,
                                page_start: now,
                            });
                            out.push(Event::StateChanged {
                                from: DeviceState::SlaveResponse,
                                to: DeviceState::ConnectionActive,
                            });
                            out.push(Event::Synchronized { master: rec.addr, am_addr: rec.am_addr });
                            self.radio.stop_listening();
                            self.next_wake = self.compute_wake(now);
                            return;
                        }
                    }
                }
                if let Proc::SlaveResponse { channel, .. } = self.proc {
                    let code = AccessCode::device(&self.addr);
                    self.radio.listen(RxWindow { channel, open_at: now, close_at: u64::MAX, code, uap: self.addr.uap() });
                }
            }
            DeviceState::ConnectionActive | DeviceState::Sniff | DeviceState::Hold => match self.role() {
                Some(Role::Master) => self.master_frame(now, frame.end, packet, out),
                Some(Role::Slave) => self.slave_frame(now, tx_start, packet, out),
                None => {}
            },
            _ => {}
        }
        self.next_wake = self.compute_wake(now);
    }

    fn inquiry_fhs(&mut self, now: u64, tx_start: u64, p: &Packet, out: &mut Vec<Event>) {
        let Proc::Inquiry { start, .. } = self.proc else {
            return;
        };
        let Ok(rec) = FhsRecord::decode(&p.payload) else {
            return;
        };
        if self.inquiry_found.iter().any(|r| r.addr == rec.addr) {
            return;
        }
        let clock = BtClock::from_sample(rec.clk27_2 << 2, tx_start);
        self.inquiry_found.push(InquiryResult { addr: rec.addr, clock });
        self.set_clock_estimate(rec.addr, clock);
        out.push(Event::InquiryResult { addr: rec.addr });
        if self.inquiry_found.len() as u32 >= self.cfg.inquiry_responses {
            let slots = (now - start).div_ceil(SLOT);
            out.push(Event::InquiryComplete { slots, responses: self.inquiry_found.len() as u32 });
            self.finish_inquiry(now, out);
        }
    }

    fn scan_hit(&mut self, now: u64, tx_start: u64, channel: u8, out: &mut Vec<Event>) {
        match self.proc {
            Proc::Scan(ScanPhase::Listen) => {
                let span = self.cfg.backoff_span_slots.max(1);
                let backoff = self.cfg.backoff_floor_slots as u64 + self.rng.gen_range(0..span) as u64;
                self.proc = Proc::Scan(ScanPhase::Backoff { until: now + backoff * SLOT });
                self.radio.stop_listening();
                self.set_state(DeviceState::InquiryResponse, out);
            }
            Proc::Scan(ScanPhase::Answer { .. }) => {
                let at = tx_start + SLOT;
                let rec = FhsRecord { addr: self.addr, clk27_2: self.native.clk(at) >> 2, am_addr: 0 };
                let fhs = Packet::with_header(AccessCode::giac(), PacketHeader::new(0, PacketKind::Fhs), rec.encode());
                if at > now && self.send(at, channel, &fhs, 0, out).is_some() {
                    self.radio.stop_listening();
                    self.set_state(DeviceState::InquiryResponse, out);
                } else {
                    self.scan_listen(now);
                }
            }
            _ => {}
        }
    }

    fn master_connected(&mut self, now: u64, out: &mut Vec<Event>) {
        let Proc::MasterResponse { page, am_addr, .. } = self.proc else {
            return;
        };
        let pico = self.piconet.get_or_insert_with(|| PiconetContext {
            role: Role::Master,
            master_addr: self.addr,
            clock: self.native,
            clock_offset_us: 0,
            am_addr: 0,
            members: Vec::new(),
        });
        let mut link = Link::new(now);
        link.new_connection = Some(NewConnection {
            deadline: now + self.cfg.new_connection_timeout_slots as u64 * SLOT,
            page_start: page.start,
        });
        pico.members.push(Member { am_addr, addr: page.target, link });
        self.proc = Proc::Connected;
        self.radio.stop_listening();
        self.set_state(DeviceState::ConnectionActive, out);
    }

    fn master_frame(&mut self, now: u64, frame_end: u64, packet: Option<Packet>, out: &mut Vec<Event>) {
        let Some(p) = packet else {
            return;
        };
        let Some(h) = p.header else {
            return;
        };
        if self.awaiting != Some(h.am_addr) {
            return;
        }
        self.awaiting = None;
        let pico = self.piconet.as_mut().unwrap();
        let Some(idx) = pico.member(h.am_addr) else {
            return;
        };
        let clock = pico.clock;
        let member = &mut pico.members[idx];
        let peer = member.addr;
        let link = &mut member.link;
        link.last_heard = now;
        if let Some(nc) = link.new_connection.take() {
            out.push(Event::PageComplete { slave: peer, am_addr: h.am_addr, slots: (now - nc.page_start).div_ceil(SLOT) });
        }
        let mut installs = Vec::new();
        match link.on_arqn(h.arqn) {
            AckResult::Delivered => {
                let f = link.in_flight.take().unwrap();
                if let (Some(LmpPdu::Accepted(_)), Some(req), Some(end)) = (f.lmp, link.pending_install.take(), f.sent_end) {
                    installs.push((req, anchor_after(&clock, end)));
                }
            }
            AckResult::Lost => {
                let lmp = link.in_flight.as_ref().unwrap().lmp.is_some();
                out.push(Event::DataLost { lmp });
                register_loss(link);
            }
            AckResult::NotPending => {}
        }
        let mut detach = false;
        if p.kind.is_data() && link.accept_payload(h.seqn, true) {
            match p.channel {
                LogicalChannel::User => {
                    out.push(Event::DataDelivered { bytes: p.payload.len() as u32 });
                    if self.buffers.push_rx(p.payload.clone()).is_err() {
                        out.push(Event::BufferDrop);
                    }
                }
                LogicalChannel::Lmp => {
                    if let Ok(pdu) = LmpPdu::decode(&p.payload) {
                        detach |= handle_lmp(link, pdu, &clock, frame_end, &mut installs, out);
                    }
                }
            }
        }
        for (req, anchor) in installs {
            self.master_install(idx, req, anchor, out);
        }
        if detach {
            let pico = self.piconet.as_mut().unwrap();
            pico.members.remove(idx);
        }
    }

    fn master_install(&mut self, idx: usize, req: LmpPdu, anchor: u32, out: &mut Vec<Event>) {
        let pico = self.piconet.as_mut().unwrap();
        let peer = pico.members[idx].addr;
        let link = &mut pico.members[idx].link;
        match mode_for(req, anchor) {
            Some(timers) => {
                out.push(Event::ModeInstalled { peer, kind: timers.kind, anchor: timers.anchor });
                match timers.kind {
                    ModeKind::Sniff { .. } => link.mode = LinkMode::Sniff(timers),
                    ModeKind::Hold { .. } => link.mode = LinkMode::Hold(timers),
                    ModeKind::Park => {
                        pico.members.remove(idx);
                    }
                }
            }
            None => {
                link.mode = LinkMode::Active;
                out.push(Event::ModeEnded { peer });
            }
        }
    }

    fn slave_frame(&mut self, now: u64, tx_start: u64, packet: Option<Packet>, out: &mut Vec<Event>) {
        let pico = self.piconet.as_ref().unwrap();
        let clock = pico.clock;
        let master = pico.master_addr;
        let my_am = pico.am_addr;
        let header = packet.as_ref().and_then(|p| p.header);
        let mine = header.is_some_and(|h| h.am_addr == my_am);
        if !mine {
            self.slave_relisten(now);
            return;
        }
        let p = packet.unwrap();
        let h = header.unwrap();
        let link = self.uplink.as_mut().unwrap();
        link.last_heard = now;
        link.new_connection = None;
        if let LinkMode::Hold(_) = link.mode {
            link.mode = LinkMode::Active;
            link.hold_resync_started = false;
            out.push(Event::Hold(HoldPhase::Exited));
            self.set_state(DeviceState::ConnectionActive, out);
            if let Some(t_hold) = self.policy.hold_repeat {
                let _ = self.request_mode(LmpPdu::HoldReq { t_hold });
            }
        }
        let link = self.uplink.as_mut().unwrap();
        match link.on_arqn(h.arqn) {
            AckResult::Delivered => {
                link.in_flight = None;
            }
            AckResult::Lost => {
                let f = link.in_flight.as_ref().unwrap();
                let lmp = f.lmp;
                out.push(Event::DataLost { lmp: lmp.is_some() });
                if register_loss(link) {
                    if let Some(pdu) = lmp {
                        out.push(Event::LmpRefused { opcode: pdu.opcode() });
                    }
                }
            }
            AckResult::NotPending => {}
        }
        let frame_end = tx_start + air_bits(p.kind, p.payload.len()) as u64;
        let mut installs = Vec::new();
        let mut detach = false;
        if p.kind.is_data() && link.accept_payload(h.seqn, true) {
            match p.channel {
                LogicalChannel::User => {
                    out.push(Event::DataDelivered { bytes: p.payload.len() as u32 });
                    if self.buffers.push_rx(p.payload.clone()).is_err() {
                        out.push(Event::BufferDrop);
                    }
                }
                LogicalChannel::Lmp => {
                    if let Ok(pdu) = LmpPdu::decode(&p.payload) {
                        detach = handle_lmp(link, pdu, &clock, frame_end, &mut installs, out);
                    }
                }
            }
        }
        if detach {
            self.reset_to_standby(out);
            return;
        }
        if matches!(p.kind, PacketKind::Poll) || p.kind.is_data() {
            let at = tx_start + p.kind.slots() * SLOT;
            let link = self.uplink.as_mut().unwrap();
            let (kind, lch, payload, seqn) = next_outgoing(link, &mut self.buffers, master, PacketKind::Null);
            let mut header = PacketHeader::new(my_am, kind);
            header.arqn = link.take_arqn();
            header.seqn = seqn;
            let mut reply = Packet::with_header(AccessCode::channel(&master), header, payload);
            reply.channel = lch;
            let ch = connection_channel(master.hop_key(), clock.clk(at) >> 1);
            if at > now {
                let end = self.send(at, ch, &reply, master.uap(), out);
                let link = self.uplink.as_mut().unwrap();
                link.last_tx = at;
                if let Some(f) = link.in_flight.as_mut() {
                    f.sent_end = end;
                }
                if let Some(pending) = link.pending_install.take() {
                    if let (Some(end), Some(LmpPdu::Accepted(_))) = (end, link.in_flight.as_ref().and_then(|f| f.lmp)) {
                        installs.push((pending, anchor_after(&clock, end)));
                    } else {
                        link.pending_install = Some(pending);
                    }
                }
            }
        }
        for (req, anchor) in installs {
            self.slave_install(now, req, anchor, out);
        }
        self.slave_relisten(now);
    }

    fn slave_install(&mut self, now: u64, req: LmpPdu, anchor: u32, out: &mut Vec<Event>) {
        let master = self.piconet.as_ref().unwrap().master_addr;
        let link = self.uplink.as_mut().unwrap();
        link.negotiation = None;
        match mode_for(req, anchor) {
            Some(timers) => {
                out.push(Event::ModeInstalled { peer: master, kind: timers.kind, anchor: timers.anchor });
                match timers.kind {
                    ModeKind::Sniff { .. } => {
                        link.mode = LinkMode::Sniff(timers);
                        self.set_state(DeviceState::Sniff, out);
                    }
                    ModeKind::Hold { .. } => {
                        link.mode = LinkMode::Hold(timers);
                        link.hold_resync_started = false;
                        out.push(Event::Hold(HoldPhase::Entered));
                        self.set_state(DeviceState::Hold, out);
                    }
                    ModeKind::Park => {
                        if let Some(p) = self.piconet.as_mut() {
                            p.am_addr = 0;
                        }
                        self.uplink = None;
                        self.radio.stop_listening();
                        self.set_state(DeviceState::Park, out);
                    }
                }
            }
            None => {
                link.mode = LinkMode::Active;
                out.push(Event::ModeEnded { peer: master });
                self.set_state(DeviceState::ConnectionActive, out);
            }
        }
        self.next_wake = self.compute_wake(now);
    }

    fn slave_relisten(&mut self, now: u64) {
        let Some(link) = self.uplink.as_ref() else {
            return;
        };
        let pico = self.piconet.as_ref().unwrap();
        let code = AccessCode::channel(&pico.master_addr);
        let uap = pico.master_addr.uap();
        let clk = self.schedule_clock().clk(now);
        let ch = connection_channel(pico.master_addr.hop_key(), clk >> 1);
        match link.mode {
            LinkMode::Sniff(_) if now < self.sniff_window_end => {
                let open_at = now.max(self.radio.tx_busy_until());
                self.radio.listen(RxWindow { channel: ch, open_at, close_at: self.sniff_window_end, code, uap });
            }
            LinkMode::Hold(t) if hold_over(&t, clk) => {
                self.radio.listen(RxWindow { channel: ch, open_at: now, close_at: u64::MAX, code, uap });
            }
            _ => {}
        }
    }
}

trait ModePeriod {
    fn kind_period(&self) -> u64;
}

impl ModePeriod for ModeTimers {
    fn kind_period(&self) -> u64 {
        match self.kind {
            ModeKind::Sniff { t_sniff, .. } => t_sniff as u64,
            ModeKind::Hold { t_hold } => t_hold as u64,
            ModeKind::Park => 0,
        }
    }
}

/// CLK of the first master transmit slot starting at or after `end`.
fn anchor_after(clock: &BtClock, end: u64) -> u32 {
    clock.clk(clock.next_slot_start(end, 0))
}

fn mode_for(req: LmpPdu, anchor: u32) -> Option<ModeTimers> {
    match req {
        LmpPdu::SniffReq { t_sniff, attempt } => Some(ModeTimers::sniff(anchor, t_sniff, attempt)),
        LmpPdu::HoldReq { t_hold } => Some(ModeTimers::hold(anchor, t_hold)),
        LmpPdu::ParkReq => Some(ModeTimers { kind: ModeKind::Park, anchor }),
        _ => None,
    }
}

/// Reacts to an incoming PDU. Returns true on detach.
fn handle_lmp(
    link: &mut Link,
    pdu: LmpPdu,
    clock: &BtClock,
    frame_end: u64,
    installs: &mut Vec<(LmpPdu, u32)>,
    out: &mut Vec<Event>,
) -> bool {
    match pdu {
        LmpPdu::Detach => return true,
        LmpPdu::Accepted(_) => {
            if let Some(n) = link.negotiation.take() {
                installs.push((n.pdu, anchor_after(clock, frame_end)));
            }
        }
        LmpPdu::NotAccepted(op) => {
            link.negotiation = None;
            out.push(Event::LmpRefused { opcode: op });
        }
        req => {
            let answer = respond(&req);
            if matches!(answer, LmpPdu::Accepted(_)) {
                link.pending_install = Some(req);
            }
            link.lmp_out.push_front(answer);
        }
    }
    false
}

/// Counts a failed delivery against the retry budget of a pending request.
fn register_loss(link: &mut Link) -> bool {
    if let Some(f) = link.in_flight.as_mut() {
        f.sent_end = None;
    }
    let is_request = link.in_flight.as_ref().and_then(|f| f.lmp).is_some_and(|p| p.is_request());
    if is_request {
        if let Some(n) = link.negotiation.as_mut() {
            if !n.try_send() {
                link.negotiation = None;
                link.in_flight = None;
                return true;
            }
        }
    }
    false
}

/// Picks what to send next on a link: a retransmission, a PDU, user data or `idle`.
fn next_outgoing(
    link: &mut Link,
    buffers: &mut LinkBuffers,
    dest: BdAddr,
    idle: PacketKind,
) -> (PacketKind, LogicalChannel, Vec<u8>, bool) {
    if link.in_flight.is_none() {
        if let Some(pdu) = link.lmp_out.pop_front() {
            if let (true, Some(n)) = (pdu.is_request(), link.negotiation.as_mut()) {
                n.try_send();
            }
            link.in_flight = Some(Outgoing {
                kind: PacketKind::Dm1,
                channel: LogicalChannel::Lmp,
                payload: pdu.encode(),
                lmp: Some(pdu),
                sent_end: None,
            });
        } else if let Some(item) = buffers.pop_for(dest) {
            link.in_flight = Some(Outgoing {
                kind: item.kind,
                channel: LogicalChannel::User,
                payload: item.payload,
                lmp: None,
                sent_end: None,
            });
        }
    }
    match &link.in_flight {
        Some(f) => (f.kind, f.channel, f.payload.clone(), link.tx_seqn),
        None => (idle, LogicalChannel::User, Vec::new(), link.tx_seqn),
    }
}
