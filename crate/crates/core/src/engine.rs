//! Scenario construction and the tick loop.
//!
//! Each simulated microsecond runs in two phases: every transmitter puts its
//! symbol on the air, then the channel resolves, adds noise and delays the
//! symbols, and every receiver observes its tuned channel. Stretches where the
//! air is silent and no receiver is mid-frame are skipped in one step; the RF
//! gate totals are credited for the skipped ticks, so results are identical to
//! stepping every tick.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::airframe::{capacity, sync_distance, AccessCode, BdAddr, PacketKind};
use crate::baseband::{
    transition_allowed, BasebandConfig, Command, Device, DeviceState, Event, HostPolicy, Role, TimeoutError, Timeouts,
    TxItem,
};
use crate::channel::{apply_noise, resolve, AirSymbol, ChannelError, ChannelParams, DelayLine};
use crate::hopsel::{BtClock, CLOCK_PERIOD_US, SLOT_US};
use crate::metrics::{Aggregate, DeviceActivity, RunMetrics};
use crate::{stream_rng, stream_seed, RNG_ID};

pub const SCHEMA_VERSION: u32 = 1;
/// Smallest sync-word distance accepted between the inquiry code and any device code.
pub const MIN_SYNC_DISTANCE: u32 = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct TimedCommand {
    pub at_slot: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub name: String,
    pub addr: BdAddr,
    /// Native clock phase; drawn from the run seed when absent.
    pub clock_phase_us: Option<u64>,
    pub commands: Vec<TimedCommand>,
    pub policy: HostPolicy,
    /// Devices whose clock this one knows exactly, as after an earlier inquiry.
    pub knows_clock_of: Vec<String>,
}

impl DeviceSpec {
    pub fn new(name: &str, addr: BdAddr) -> Self {
        DeviceSpec {
            name: name.into(),
            addr,
            clock_phase_us: None,
            commands: Vec::new(),
            policy: HostPolicy::default(),
            knows_clock_of: Vec::new(),
        }
    }

    pub fn at(mut self, slot: u64, command: Command) -> Self {
        self.commands.push(TimedCommand { at_slot: slot, command });
        self
    }
}

/// Periodic user traffic from `source` to `dest`.
#[derive(Debug, Clone, PartialEq)]
pub struct Traffic {
    pub source: String,
    pub dest: String,
    pub period_slots: u64,
    pub kind: PacketKind,
    pub payload_len: usize,
    pub start_slot: u64,
}

/// A link that exists when the run starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub master: String,
    pub slave: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopWhen {
    #[default]
    Never,
    /// First inquiry completion or failure.
    InquiryDone,
    /// First page completion or failure.
    PageDone,
    /// This many slaves are connected.
    PiconetSize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceLevel {
    /// Metrics only.
    #[default]
    Off,
    Events,
    /// Events plus every RF gate and state change.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub devices: Vec<DeviceSpec>,
    pub channel: ChannelParams,
    pub timeouts: Timeouts,
    pub baseband: BasebandConfig,
    pub traffic: Vec<Traffic>,
    pub connections: Vec<Connection>,
    pub duration_slots: u64,
    /// RF activity is counted from this slot on.
    pub measure_from_slot: u64,
    pub seed: u64,
    pub stop: StopWhen,
    pub trace: TraceLevel,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            devices: Vec::new(),
            channel: ChannelParams::default(),
            timeouts: Timeouts::default(),
            baseband: BasebandConfig::default(),
            traffic: Vec::new(),
            connections: Vec::new(),
            duration_slots: 4096,
            measure_from_slot: 0,
            seed: 0,
            stop: StopWhen::Never,
            trace: TraceLevel::Off,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    NoDevices,
    DuplicateName(String),
    DuplicateAddr { name: String, addr: BdAddr },
    UnknownDevice { field: String, name: String },
    ZeroDuration,
    MeasureOutsideRun(u64),
    Channel(ChannelError),
    Timeouts(TimeoutError),
    Traffic { index: usize, reason: &'static str },
    SyncWordTooClose { name: String, distance: u32 },
    EmptyGrid,
    ZeroRuns,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::NoDevices => f.write_str("devices: at least one device is required"),
            ScenarioError::DuplicateName(n) => write!(f, "devices.name: duplicate name {n:?}"),
            ScenarioError::DuplicateAddr { name, addr } => {
                write!(f, "devices.addr: {addr} of {name:?} is already used")
            }
            ScenarioError::UnknownDevice { field, name } => write!(f, "{field}: no device named {name:?}"),
            ScenarioError::ZeroDuration => f.write_str("duration_slots: must be positive"),
            ScenarioError::MeasureOutsideRun(s) => write!(f, "measure_from_slot: {s} is not inside the run"),
            ScenarioError::Channel(e) => write!(f, "channel: {e}"),
            ScenarioError::Timeouts(e) => write!(f, "timeouts: {e}"),
            ScenarioError::Traffic { index, reason } => write!(f, "traffic[{index}]: {reason}"),
            ScenarioError::SyncWordTooClose { name, distance } => {
                write!(f, "devices.addr: sync word of {name:?} is {distance} bits from the inquiry code")
            }
            ScenarioError::EmptyGrid => f.write_str("sweep grid is empty"),
            ScenarioError::ZeroRuns => f.write_str("runs per point must be positive"),
        }
    }
}

impl Scenario {
    fn index_of(&self, name: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.name == name)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.devices.is_empty() {
            return Err(ScenarioError::NoDevices);
        }
        for (i, d) in self.devices.iter().enumerate() {
            if self.devices[..i].iter().any(|o| o.name == d.name) {
                return Err(ScenarioError::DuplicateName(d.name.clone()));
            }
            if self.devices[..i].iter().any(|o| o.addr == d.addr) {
                return Err(ScenarioError::DuplicateAddr { name: d.name.clone(), addr: d.addr });
            }
            let giac = AccessCode::giac();
            for code in [AccessCode::device(&d.addr), AccessCode::channel(&d.addr)] {
                let distance = sync_distance(&giac, &code);
                if distance < MIN_SYNC_DISTANCE {
                    return Err(ScenarioError::SyncWordTooClose { name: d.name.clone(), distance });
                }
            }
            for k in &d.knows_clock_of {
                if self.index_of(k).is_none() {
                    return Err(ScenarioError::UnknownDevice { field: format!("devices.{}.knows_clock_of", d.name), name: k.clone() });
                }
            }
        }
        if self.duration_slots == 0 {
            return Err(ScenarioError::ZeroDuration);
        }
        if self.measure_from_slot >= self.duration_slots {
            return Err(ScenarioError::MeasureOutsideRun(self.measure_from_slot));
        }
        self.channel.validate().map_err(ScenarioError::Channel)?;
        self.timeouts.validate().map_err(ScenarioError::Timeouts)?;
        for (index, t) in self.traffic.iter().enumerate() {
            for (field, name) in [("source", &t.source), ("dest", &t.dest)] {
                if self.index_of(name).is_none() {
                    return Err(ScenarioError::UnknownDevice { field: format!("traffic[{index}].{field}"), name: name.clone() });
                }
            }
            if t.period_slots == 0 {
                return Err(ScenarioError::Traffic { index, reason: "period_slots must be positive" });
            }
            if !t.kind.is_data() {
                return Err(ScenarioError::Traffic { index, reason: "kind must be a data packet" });
            }
            if t.payload_len > capacity(t.kind) {
                return Err(ScenarioError::Traffic { index, reason: "payload_len exceeds the packet capacity" });
            }
        }
        for (i, c) in self.connections.iter().enumerate() {
            for (field, name) in [("master", &c.master), ("slave", &c.slave)] {
                if self.index_of(name).is_none() {
                    return Err(ScenarioError::UnknownDevice { field: format!("connections[{i}].{field}"), name: name.clone() });
                }
            }
        }
        Ok(())
    }
}

/// RF gates and state of one device, recorded whenever any of them changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub t: u64,
    pub device: u16,
    pub state: DeviceState,
    pub tx: bool,
    pub rx: bool,
    pub channel: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedEvent {
    pub t: u64,
    pub device: u16,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceMeta {
    pub seed: u64,
    pub schema_version: u32,
    pub rng: &'static str,
    pub end_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunTrace {
    pub devices: Vec<String>,
    pub addrs: Vec<BdAddr>,
    pub clocks: Vec<BtClock>,
    pub samples: Vec<Sample>,
    pub events: Vec<TimedEvent>,
    pub meta: TraceMeta,
}

#[derive(Debug)]
struct TrafficRt {
    source: usize,
    item: TxItem,
    period_us: u64,
    next: u64,
}

/// A built scenario, ready to run.
#[derive(Debug)]
pub struct World {
    devices: Vec<Device>,
    names: Vec<String>,
    ber: f64,
    delay: DelayLine,
    noise: ChaCha8Rng,
    commands: Vec<(u64, usize, Command)>,
    next_command: usize,
    traffic: Vec<TrafficRt>,
    now: u64,
    end: u64,
    measure_from: u64,
    stop: StopWhen,
    level: TraceLevel,
    activity: Vec<DeviceActivity>,
    last: Vec<Option<Sample>>,
    trace: RunTrace,
    metrics: RunMetrics,
    inquiry_done: bool,
    page_done: bool,
    stopped: bool,
    outputs: Vec<(usize, u8, AirSymbol)>,
}

pub fn build_world(s: &Scenario) -> Result<World, ScenarioError> {
    s.validate()?;
    let mut devices = Vec::with_capacity(s.devices.len());
    let mut clocks = Vec::with_capacity(s.devices.len());
    for d in &s.devices {
        let phase = d
            .clock_phase_us
            .unwrap_or_else(|| stream_rng(s.seed, &format!("phase/{}", d.name)).gen_range(0..CLOCK_PERIOD_US));
        let clock = BtClock::new(phase);
        clocks.push(clock);
        let rng = stream_rng(s.seed, &format!("device/{}", d.name));
        devices.push(Device::new(d.addr, clock, s.baseband, s.timeouts, d.policy, s.channel.rf_delay_us, rng));
    }
    for (i, d) in s.devices.iter().enumerate() {
        for k in &d.knows_clock_of {
            let j = s.index_of(k).unwrap();
            devices[i].set_clock_estimate(s.devices[j].addr, clocks[j]);
        }
    }
    let mut commands: Vec<(u64, usize, Command)> = s
        .devices
        .iter()
        .enumerate()
        .flat_map(|(i, d)| d.commands.iter().map(move |c| (c.at_slot * SLOT_US, i, c.command)))
        .collect();
    commands.sort_by_key(|c| (c.0, c.1));
    let traffic = s
        .traffic
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let source = s.index_of(&t.source).unwrap();
            let dest = s.devices[s.index_of(&t.dest).unwrap()].addr;
            let payload = (0..t.payload_len).map(|i| (i as u8).wrapping_mul(31).wrapping_add(k as u8)).collect();
            TrafficRt {
                source,
                item: TxItem { dest, kind: t.kind, payload },
                period_us: t.period_slots * SLOT_US,
                next: t.start_slot * SLOT_US,
            }
        })
        .collect();
    let names: Vec<String> = s.devices.iter().map(|d| d.name.clone()).collect();
    let mut world = World {
        activity: names.iter().map(|n| DeviceActivity { name: n.clone(), ..Default::default() }).collect(),
        last: alloc::vec![None; devices.len()],
        trace: RunTrace {
            devices: names.clone(),
            addrs: s.devices.iter().map(|d| d.addr).collect(),
            clocks,
            samples: Vec::new(),
            events: Vec::new(),
            meta: TraceMeta { seed: s.seed, schema_version: SCHEMA_VERSION, rng: RNG_ID, end_us: 0 },
        },
        metrics: RunMetrics { seed: s.seed, ..Default::default() },
        devices,
        names,
        ber: s.channel.ber,
        delay: DelayLine::new(s.channel.rf_delay_us),
        noise: stream_rng(s.seed, "channel"),
        commands,
        next_command: 0,
        traffic,
        now: 0,
        end: s.duration_slots * SLOT_US,
        measure_from: s.measure_from_slot * SLOT_US,
        stop: s.stop,
        level: s.trace,
        inquiry_done: false,
        page_done: false,
        stopped: false,
        outputs: Vec::new(),
    };
    for c in &s.connections {
        let m = s.index_of(&c.master).unwrap();
        let sl = s.index_of(&c.slave).unwrap();
        let (maddr, saddr) = (s.devices[m].addr, s.devices[sl].addr);
        if let Some(am) = world.devices[m].attach_slave(0, saddr) {
            let clock = world.devices[m].native_clock();
            world.devices[sl].attach_master(0, maddr, clock, am);
            world.record(0, sl, Event::Synchronized { master: maddr, am_addr: am });
        }
    }
    Ok(world)
}

impl World {
    pub fn device(&self, name: &str) -> Option<&Device> {
        self.names.iter().position(|n| n == name).map(|i| &self.devices[i])
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    fn record(&mut self, t: u64, device: usize, event: Event) {
        let m = &mut self.metrics;
        match &event {
            Event::InquiryComplete { slots, .. } if !self.inquiry_done => {
                self.inquiry_done = true;
                m.inquiry_success = true;
                m.inquiry_slots = Some(*slots);
            }
            Event::InquiryFailed { .. } if !self.inquiry_done => self.inquiry_done = true,
            Event::PageComplete { slots, .. } if !self.page_done => {
                self.page_done = true;
                m.page_success = true;
                m.page_slots = Some(*slots);
                m.connect_slots = Some(t.div_ceil(SLOT_US));
            }
            Event::PageFailed { .. } if !self.page_done => self.page_done = true,
            Event::DataLost { .. } => m.packets_lost += 1,
            Event::DataDelivered { .. } => m.packets_delivered += 1,
            Event::BufferDrop => m.buffer_drops += 1,
            Event::LinkLost { .. } => m.links_lost += 1,
            Event::PacketSent { kind, start, .. } if kind.is_data() && *start >= self.measure_from => {
                self.activity[device].data_slots += kind.slots();
            }
            _ => {}
        }
        if self.level != TraceLevel::Off {
            self.trace.events.push(TimedEvent { t, device: device as u16, event });
        }
    }

    fn flush(&mut self, t: u64, device: usize, events: &mut Vec<Event>) {
        for e in events.drain(..) {
            self.record(t, device, e);
        }
    }

    fn sample(&mut self, t: u64, i: usize, tx: bool, rx: bool) {
        if self.level != TraceLevel::Full {
            return;
        }
        let d = &self.devices[i];
        let channel = match (tx, d.radio().tx_symbol(t), d.radio().window()) {
            (true, Some((ch, _)), _) => ch,
            (_, _, Some(w)) if rx => w.channel,
            _ => self.last[i].map_or(0, |s| s.channel),
        };
        let s = Sample { t, device: i as u16, state: d.state(), tx, rx, channel };
        let changed = self.last[i].is_none_or(|p| (p.state, p.tx, p.rx, p.channel) != (s.state, s.tx, s.rx, s.channel));
        if changed {
            self.trace.samples.push(s);
            self.last[i] = Some(s);
        }
    }

    fn credit(&mut self, i: usize, from: u64, to: u64, tx: bool, rx: bool) {
        let from = from.max(self.measure_from);
        if to <= from {
            return;
        }
        let a = &mut self.activity[i];
        if tx {
            a.rf_tx_us += to - from;
        } else if rx {
            a.rf_rx_us += to - from;
        }
    }

    fn check_stop(&mut self) {
        self.stopped = match self.stop {
            StopWhen::Never => false,
            StopWhen::InquiryDone => self.inquiry_done,
            StopWhen::PageDone => self.page_done,
            StopWhen::PiconetSize(n) => {
                let slaves = self
                    .devices
                    .iter()
                    .filter(|d| d.state().is_connected() && d.piconet().is_some_and(|p| p.role == Role::Slave))
                    .filter(|d| d.uplink().is_some_and(|l| l.new_connection.is_none()))
                    .count();
                slaves >= n
            }
        };
    }

    fn step(&mut self, t: u64, events: &mut Vec<Event>) {
        while let Some(&(at, i, cmd)) = self.commands.get(self.next_command) {
            if at > t {
                break;
            }
            self.next_command += 1;
            if let Err(error) = self.devices[i].command(t, cmd, events) {
                events.push(Event::CommandRejected { command: cmd.name(), error });
            }
            self.flush(t, i, events);
        }
        for k in 0..self.traffic.len() {
            while self.traffic[k].next <= t {
                let src = self.traffic[k].source;
                let item = self.traffic[k].item.clone();
                self.traffic[k].next += self.traffic[k].period_us;
                self.devices[src].enqueue(item, events);
                self.flush(t, src, events);
            }
        }
        for i in 0..self.devices.len() {
            if self.devices[i].next_wake() <= t {
                self.devices[i].wake(t, events);
                self.flush(t, i, events);
            }
        }
        self.outputs.clear();
        for (i, d) in self.devices.iter().enumerate() {
            if let Some((ch, sym)) = d.radio().tx_symbol(t) {
                self.outputs.push((i, ch, sym));
            }
        }
        let mut resolved = resolve(&self.outputs);
        for (_, sym) in resolved.iter_mut() {
            *sym = apply_noise(*sym, self.ber, &mut self.noise);
        }
        self.delay.push(t, &resolved);
        self.delay.advance(t);
        for i in 0..self.devices.len() {
            let tx = self.devices[i].radio().tx_active(t);
            let heard = self.devices[i].radio_mut().listening(t);
            if let Some(ch) = heard {
                let sym = self.delay.observe(ch);
                if let Some(frame) = self.devices[i].radio_mut().observe(t, sym) {
                    self.devices[i].on_frame(t, frame, events);
                    // The host reads received payloads as soon as they arrive.
                    self.devices[i].buffers_mut().rx.clear();
                    self.flush(t, i, events);
                }
            }
            self.credit(i, t, t + 1, tx, heard.is_some());
            self.sample(t, i, tx, heard.is_some());
            self.devices[i].radio_mut().end_tick(t);
        }
    }

    /// Earliest tick after `t` that has to be simulated.
    fn next_tick(&mut self, t: u64) -> u64 {
        let n = t + 1;
        if !self.delay.is_quiet() || self.devices.iter().any(|d| d.radio().needs_ticks(n)) {
            return n;
        }
        let mut next = self.end;
        if let Some(&(at, _, _)) = self.commands.get(self.next_command) {
            next = next.min(at);
        }
        for tr in &self.traffic {
            next = next.min(tr.next);
        }
        for d in &self.devices {
            next = next.min(d.next_wake()).min(d.radio().next_change(t));
        }
        next.max(n)
    }

    /// Simulates up to simulation time `until` (µs), the end of the scenario
    /// or the stop condition, whichever comes first.
    pub fn advance(&mut self, until: u64) {
        let until = until.min(self.end);
        let mut events = Vec::new();
        let mut t = self.now;
        while t < until && !self.stopped {
            self.step(t, &mut events);
            self.check_stop();
            if self.stopped {
                t += 1;
                break;
            }
            let next = self.next_tick(t).min(until);
            if next > t + 1 {
                for i in 0..self.devices.len() {
                    let rx = self.devices[i].radio_mut().listening(t + 1).is_some();
                    self.credit(i, t + 1, next, false, rx);
                    self.sample(t + 1, i, false, rx);
                }
            }
            t = next;
        }
        self.now = t;
    }

    /// Runs until the end of the scenario or the stop condition.
    pub fn run(mut self) -> (RunTrace, RunMetrics) {
        self.advance(self.end);
        let t = self.now;
        let end = t.min(self.end);
        self.now = end;
        for a in &mut self.activity {
            a.total_us = end.saturating_sub(self.measure_from);
        }
        self.trace.meta.end_us = end;
        self.metrics.end_us = end;
        self.metrics.devices = self.activity;
        (self.trace, self.metrics)
    }
}

/// Builds and runs `s`.
pub fn run_scenario(s: &Scenario) -> Result<(RunTrace, RunMetrics), ScenarioError> {
    Ok(build_world(s)?.run())
}

/// How the runs of a sweep draw their seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeedPolicy {
    /// Every (point, run) pair has its own stream.
    #[default]
    Independent,
    /// Run `r` uses the same seed at every grid point (common random numbers).
    Common,
}

pub fn run_seed(policy: SeedPolicy, seed: u64, point: usize, run: u32) -> u64 {
    match policy {
        SeedPolicy::Independent => stream_seed(seed, &format!("point{point}/run{run}")),
        SeedPolicy::Common => stream_seed(seed, &format!("run{run}")),
    }
}

/// Runs every grid point `runs` times and aggregates each point.
pub fn monte_carlo(
    points: &[Scenario],
    runs: u32,
    seed: u64,
    policy: SeedPolicy,
) -> Result<Vec<Aggregate>, ScenarioError> {
    if points.is_empty() {
        return Err(ScenarioError::EmptyGrid);
    }
    if runs == 0 {
        return Err(ScenarioError::ZeroRuns);
    }
    for p in points {
        p.validate()?;
    }
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut agg: Option<Aggregate> = None;
        for r in 0..runs {
            let mut s = p.clone();
            s.seed = run_seed(policy, seed, i, r);
            let (_, m) = run_scenario(&s)?;
            let a = Aggregate::of(&m);
            agg = Some(match agg {
                Some(acc) => acc.merge(&a),
                None => a,
            });
        }
        out.push(agg.unwrap());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceViolation {
    TimeWentBack { index: usize },
    IllegalTransition { t: u64, device: String, from: DeviceState, to: DeviceState },
    HalfDuplex { t: u64, device: String },
    SlotDiscipline { t: u64, device: String },
}

impl fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceViolation::TimeWentBack { index } => write!(f, "trace entry {index} is earlier than its predecessor"),
            TraceViolation::IllegalTransition { t, device, from, to } => {
                write!(f, "{device} at {t} us: illegal transition {from} -> {to}")
            }
            TraceViolation::HalfDuplex { t, device } => write!(f, "{device} at {t} us: transmitter and receiver both on"),
            TraceViolation::SlotDiscipline { t, device } => {
                write!(f, "{device} at {t} us: connection packet outside its slot parity")
            }
        }
    }
}

/// Checks a trace for monotone time, legal transitions, half-duplex gates and
/// the master/slave slot parity of connection packets.
pub fn check_trace(trace: &RunTrace) -> Result<(), TraceViolation> {
    for (index, w) in trace.events.windows(2).enumerate() {
        if w[1].t < w[0].t {
            return Err(TraceViolation::TimeWentBack { index: index + 1 });
        }
    }
    let name = |d: u16| trace.devices[d as usize].clone();
    for s in &trace.samples {
        if s.tx && s.rx {
            return Err(TraceViolation::HalfDuplex { t: s.t, device: name(s.device) });
        }
    }
    let mut piconet_clock: Vec<Option<BtClock>> = alloc::vec![None; trace.devices.len()];
    let mut is_master = alloc::vec![false; trace.devices.len()];
    for e in &trace.events {
        let d = e.device as usize;
        match &e.event {
            Event::StateChanged { from, to } => {
                if !transition_allowed(*from, *to) {
                    return Err(TraceViolation::IllegalTransition { t: e.t, device: name(e.device), from: *from, to: *to });
                }
            }
            Event::Synchronized { master, .. } => {
                if let Some(m) = trace.addrs.iter().position(|a| a == master) {
                    piconet_clock[d] = Some(trace.clocks[m]);
                    is_master[m] = true;
                }
            }
            Event::PageComplete { .. } => is_master[d] = true,
            Event::PacketSent { kind, start, .. } if !matches!(kind, PacketKind::Id | PacketKind::Fhs) => {
                let (clock, residue) = if is_master[d] {
                    (Some(trace.clocks[d]), 0)
                } else {
                    (piconet_clock[d], 2)
                };
                if let Some(c) = clock {
                    if c.clk(*start) % 4 != residue {
                        return Err(TraceViolation::SlotDiscipline { t: *start, device: name(e.device) });
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(n: u64) -> BdAddr {
        BdAddr::from_u64(0x0002_5B00_0000 + n * 0x01_0203).unwrap()
    }

    #[test]
    fn empty_device_list_rejected() {
        assert_eq!(Scenario::default().validate(), Err(ScenarioError::NoDevices));
    }

    #[test]
    fn duplicates_rejected() {
        let mut s = Scenario::default();
        s.devices.push(DeviceSpec::new("a", addr(1)));
        s.devices.push(DeviceSpec::new("a", addr(2)));
        assert!(matches!(s.validate(), Err(ScenarioError::DuplicateName(_))));
        s.devices[1].name = "b".into();
        s.devices[1].addr = addr(1);
        assert!(matches!(s.validate(), Err(ScenarioError::DuplicateAddr { .. })));
    }

    #[test]
    fn standby_run_spans_duration() {
        let mut s = Scenario { duration_slots: 775, trace: TraceLevel::Full, ..Default::default() };
        s.devices.push(DeviceSpec::new("a", addr(1)));
        let (trace, m) = run_scenario(&s).unwrap();
        assert_eq!(m.end_us, 775 * 625);
        assert_eq!(m.devices[0].activity(), 0.0);
        assert_eq!(trace.meta.end_us, 775 * 625);
    }

    #[test]
    fn seeds_are_point_specific() {
        assert_ne!(run_seed(SeedPolicy::Independent, 1, 0, 0), run_seed(SeedPolicy::Independent, 1, 1, 0));
        assert_eq!(run_seed(SeedPolicy::Common, 1, 0, 3), run_seed(SeedPolicy::Common, 1, 5, 3));
    }

    #[test]
    fn empty_grid_rejected() {
        assert_eq!(monte_carlo(&[], 1, 0, SeedPolicy::Independent), Err(ScenarioError::EmptyGrid));
    }
}
