//! TOML scenario files.
//!
//! A file is deserialized into the `File` mirror below, then checked and
//! converted into an engine [`Scenario`]. Every error carries the path of the
//! offending field, and the line when the TOML parser can point at it.

use std::fmt;
use std::path::Path;

use bluesim_core::airframe::{BdAddr, PacketKind};
use bluesim_core::baseband::{BasebandConfig, Command, HostPolicy, Timeouts};
use bluesim_core::channel::ChannelParams;
use bluesim_core::engine::{Connection, DeviceSpec, Scenario, StopWhen, TimedCommand, TraceLevel, Traffic, SCHEMA_VERSION};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadError {
    /// Field path such as `devices[1].addr`, or empty for whole-file errors.
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl LoadError {
    fn at(field: impl Into<String>, message: impl Into<String>) -> Self {
        LoadError { field: field.into(), line: None, message: message.into() }
    }
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if !self.field.is_empty() {
            write!(f, "{}: ", self.field)?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for LoadError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    schema: u32,
    #[serde(default)]
    seed: u64,
    duration_slots: Option<u64>,
    #[serde(default)]
    measure_from_slot: u64,
    #[serde(default)]
    stop: StopFile,
    #[serde(default)]
    trace: TraceFile,
    #[serde(default)]
    channel: ChannelFile,
    #[serde(default)]
    timeouts: TimeoutsFile,
    #[serde(default)]
    baseband: BasebandFile,
    #[serde(default)]
    devices: Vec<DeviceFile>,
    #[serde(default)]
    traffic: Vec<TrafficFile>,
    #[serde(default)]
    connections: Vec<ConnectionFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StopFile {
    #[default]
    Never,
    InquiryDone,
    PageDone,
    PiconetSize(usize),
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TraceFile {
    #[default]
    Off,
    Events,
    Full,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    ber: Option<f64>,
    rf_delay_us: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeoutsFile {
    inquiry_timeout: Option<u32>,
    page_timeout: Option<u32>,
    sniff_timeout_time: Option<u16>,
    supervision_timeout: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasebandFile {
    listen_window_us: Option<u32>,
    sync_threshold: Option<u32>,
    backoff_floor_slots: Option<u32>,
    backoff_span_slots: Option<u32>,
    response_window_slots: Option<u32>,
    page_response_timeout_slots: Option<u32>,
    new_connection_timeout_slots: Option<u32>,
    sync_period_slots: Option<u32>,
    n_train: Option<u32>,
    resync_delay_slots: Option<u32>,
    lmp_retry_budget: Option<u32>,
    buffer_capacity: Option<usize>,
    inquiry_responses: Option<u32>,
    interlaced_inquiry_scan: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceFile {
    name: String,
    addr: String,
    clock_phase_us: Option<u64>,
    #[serde(default)]
    knows_clock_of: Vec<String>,
    #[serde(default)]
    page_after_inquiry: bool,
    #[serde(default)]
    page_scan_after_response: bool,
    hold_repeat: Option<u16>,
    #[serde(default)]
    commands: Vec<CommandFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandFile {
    at_slot: u64,
    cmd: String,
    target: Option<String>,
    t_sniff: Option<u16>,
    attempt: Option<u16>,
    t_hold: Option<u16>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficFile {
    source: String,
    dest: String,
    period_slots: u64,
    #[serde(default = "default_kind")]
    kind: String,
    payload_len: Option<usize>,
    #[serde(default)]
    start_slot: u64,
}

fn default_kind() -> String {
    "DM1".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConnectionFile {
    master: String,
    slave: String,
}

/// Command names accepted in `devices[].commands[].cmd`.
pub const COMMANDS: [&str; 9] = [
    "enable_inquiry",
    "enable_inquiry_scan",
    "enable_page",
    "enable_page_scan",
    "enable_sniff",
    "exit_sniff",
    "enable_hold",
    "enable_park",
    "detach_reset",
];

/// Closest candidate to `word`, if any is close enough to be a plausible typo.
pub fn suggest<'a>(word: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .into_iter()
        .map(|c| (strsim::damerau_levenshtein(word, c), c))
        .filter(|&(d, c)| d <= 3.max(c.len() / 3))
        .min_by_key(|&(d, _)| d)
        .map(|(_, c)| c)
}

/// Parses `00:02:5B:01:02:03` (or without separators) into an address.
pub fn parse_addr(s: &str) -> Option<BdAddr> {
    let hex: String = s.chars().filter(|c| *c != ':' && *c != '-').collect();
    if hex.len() != 12 {
        return None;
    }
    u64::from_str_radix(&hex, 16).ok().and_then(|v| BdAddr::from_u64(v).ok())
}

pub fn parse_kind(s: &str) -> Option<PacketKind> {
    PacketKind::ALL.into_iter().find(|k| format!("{k:?}").eq_ignore_ascii_case(s))
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Turns a serde message about an unknown field or variant into one that
/// proposes the closest valid name.
fn with_suggestion(message: &str) -> String {
    let Some(rest) = message.strip_prefix("unknown field `").or_else(|| message.strip_prefix("unknown variant `")) else {
        return message.to_string();
    };
    let Some((word, tail)) = rest.split_once('`') else {
        return message.to_string();
    };
    let expected: Vec<&str> = tail.split('`').skip(1).step_by(2).collect();
    match suggest(word, expected.iter().copied()) {
        Some(best) => format!("{}; did you mean `{best}`?", message.trim_end()),
        None => message.to_string(),
    }
}

fn from_toml_error(text: Option<&str>, e: &toml::de::Error) -> LoadError {
    let line = match (text, e.span()) {
        (Some(t), Some(span)) => Some(line_of(t, span.start)),
        _ => None,
    };
    let field = match (text, e.span()) {
        (Some(t), Some(span)) => t.get(span).map(|s| s.trim().to_string()).filter(|s| !s.contains('\n')).unwrap_or_default(),
        _ => String::new(),
    };
    let field = if field.len() > 40 { String::new() } else { field };
    LoadError { field, line, message: with_suggestion(e.message()) }
}

/// Parses and validates scenario text.
pub fn from_str(text: &str) -> Result<Scenario, LoadError> {
    let file: File = toml::from_str(text).map_err(|e| from_toml_error(Some(text), &e))?;
    convert(file)
}

/// Converts an already parsed (and possibly patched) TOML table.
pub fn from_value(value: toml::Value) -> Result<Scenario, LoadError> {
    let file = File::deserialize(value).map_err(|e| from_toml_error(None, &e))?;
    convert(file)
}

pub fn load(path: &Path) -> Result<Scenario, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::at("", format!("cannot read {}: {e}", path.display())))?;
    from_str(&text)
}

fn command(c: &CommandFile, path: &str, devices: &[DeviceFile]) -> Result<Command, LoadError> {
    let need = |v: Option<u16>, key: &str| v.ok_or_else(|| LoadError::at(format!("{path}.{key}"), format!("required by `{}`", c.cmd)));
    Ok(match c.cmd.as_str() {
        "enable_inquiry" => Command::EnableInquiry,
        "enable_inquiry_scan" => Command::EnableInquiryScan,
        "enable_page" => {
            let target = c.target.as_deref().ok_or_else(|| LoadError::at(format!("{path}.target"), "required by `enable_page`"))?;
            let addr = devices
                .iter()
                .find(|d| d.name == target)
                .and_then(|d| parse_addr(&d.addr))
                .or_else(|| parse_addr(target))
                .ok_or_else(|| LoadError::at(format!("{path}.target"), format!("{target:?} is neither a device name nor an address")))?;
            Command::EnablePage(addr)
        }
        "enable_page_scan" => Command::EnablePageScan,
        "enable_sniff" => Command::EnableSniff { t_sniff: need(c.t_sniff, "t_sniff")?, attempt: c.attempt.unwrap_or(2) },
        "exit_sniff" => Command::ExitSniff,
        "enable_hold" => Command::EnableHold { t_hold: need(c.t_hold, "t_hold")? },
        "enable_park" => Command::EnablePark,
        "detach_reset" => Command::DetachReset,
        other => {
            let mut msg = format!("unknown command {other:?}");
            if let Some(best) = suggest(other, COMMANDS) {
                msg.push_str(&format!("; did you mean `{best}`?"));
            }
            return Err(LoadError::at(format!("{path}.cmd"), msg));
        }
    })
}

fn convert(f: File) -> Result<Scenario, LoadError> {
    if f.schema != SCHEMA_VERSION {
        return Err(LoadError::at("schema", format!("unsupported schema version {} (expected {SCHEMA_VERSION})", f.schema)));
    }
    if f.devices.is_empty() {
        return Err(LoadError::at("devices", "at least one device is required"));
    }
    let names: Vec<&str> = f.devices.iter().map(|d| d.name.as_str()).collect();
    let known = |field: String, name: &str| -> Result<String, LoadError> {
        if names.contains(&name) {
            return Ok(name.to_string());
        }
        let mut msg = format!("no device named {name:?}");
        if let Some(best) = suggest(name, names.iter().copied()) {
            msg.push_str(&format!("; did you mean `{best}`?"));
        }
        Err(LoadError::at(field, msg))
    };

    let mut devices = Vec::with_capacity(f.devices.len());
    for (i, d) in f.devices.iter().enumerate() {
        let path = format!("devices[{i}]");
        if let Some(j) = f.devices[..i].iter().position(|o| o.name == d.name) {
            return Err(LoadError::at(format!("{path}.name"), format!("{:?} already used by devices[{j}]", d.name)));
        }
        let addr = parse_addr(&d.addr)
            .ok_or_else(|| LoadError::at(format!("{path}.addr"), format!("{:?} is not a 48-bit address like 00:02:5B:01:02:03", d.addr)))?;
        if let Some(j) = f.devices[..i].iter().position(|o| parse_addr(&o.addr) == Some(addr)) {
            return Err(LoadError::at(format!("{path}.addr"), format!("{addr} already used by devices[{j}]")));
        }
        let mut spec = DeviceSpec::new(&d.name, addr);
        spec.clock_phase_us = d.clock_phase_us;
        spec.policy = HostPolicy {
            page_after_inquiry: d.page_after_inquiry,
            page_scan_after_response: d.page_scan_after_response,
            hold_repeat: d.hold_repeat,
        };
        for (k, other) in d.knows_clock_of.iter().enumerate() {
            spec.knows_clock_of.push(known(format!("{path}.knows_clock_of[{k}]"), other)?);
        }
        for (k, c) in d.commands.iter().enumerate() {
            let command = command(c, &format!("{path}.commands[{k}]"), &f.devices)?;
            spec.commands.push(TimedCommand { at_slot: c.at_slot, command });
        }
        devices.push(spec);
    }

    let mut traffic = Vec::with_capacity(f.traffic.len());
    for (i, t) in f.traffic.iter().enumerate() {
        let path = format!("traffic[{i}]");
        let kind = parse_kind(&t.kind)
            .filter(|k| k.is_data())
            .ok_or_else(|| LoadError::at(format!("{path}.kind"), format!("{:?} is not a data packet type (DM1..DH5)", t.kind)))?;
        traffic.push(Traffic {
            source: known(format!("{path}.source"), &t.source)?,
            dest: known(format!("{path}.dest"), &t.dest)?,
            period_slots: t.period_slots,
            kind,
            payload_len: t.payload_len.unwrap_or(bluesim_core::airframe::capacity(kind)),
            start_slot: t.start_slot,
        });
    }
    let mut connections = Vec::with_capacity(f.connections.len());
    for (i, c) in f.connections.iter().enumerate() {
        connections.push(Connection {
            master: known(format!("connections[{i}].master"), &c.master)?,
            slave: known(format!("connections[{i}].slave"), &c.slave)?,
        });
    }

    let mut channel = ChannelParams::default();
    channel.ber = f.channel.ber.unwrap_or(channel.ber);
    channel.rf_delay_us = f.channel.rf_delay_us.unwrap_or(channel.rf_delay_us);

    let t = &f.timeouts;
    let d = Timeouts::default();
    let timeouts = Timeouts {
        inquiry_timeout: t.inquiry_timeout.unwrap_or(d.inquiry_timeout),
        page_timeout: t.page_timeout.unwrap_or(d.page_timeout),
        sniff_timeout_time: t.sniff_timeout_time.unwrap_or(d.sniff_timeout_time),
        supervision_timeout: t.supervision_timeout.unwrap_or(d.supervision_timeout),
    };

    let b = &f.baseband;
    let d = BasebandConfig::default();
    let baseband = BasebandConfig {
        listen_window_us: b.listen_window_us.unwrap_or(d.listen_window_us),
        sync_threshold: b.sync_threshold.unwrap_or(d.sync_threshold),
        backoff_floor_slots: b.backoff_floor_slots.unwrap_or(d.backoff_floor_slots),
        backoff_span_slots: b.backoff_span_slots.unwrap_or(d.backoff_span_slots),
        response_window_slots: b.response_window_slots.unwrap_or(d.response_window_slots),
        page_response_timeout_slots: b.page_response_timeout_slots.unwrap_or(d.page_response_timeout_slots),
        new_connection_timeout_slots: b.new_connection_timeout_slots.unwrap_or(d.new_connection_timeout_slots),
        sync_period_slots: b.sync_period_slots.unwrap_or(d.sync_period_slots),
        n_train: b.n_train.unwrap_or(d.n_train),
        resync_delay_slots: b.resync_delay_slots.unwrap_or(d.resync_delay_slots),
        lmp_retry_budget: b.lmp_retry_budget.unwrap_or(d.lmp_retry_budget),
        buffer_capacity: b.buffer_capacity.unwrap_or(d.buffer_capacity),
        inquiry_responses: b.inquiry_responses.unwrap_or(d.inquiry_responses),
        interlaced_inquiry_scan: b.interlaced_inquiry_scan.unwrap_or(d.interlaced_inquiry_scan),
    };

    let scenario = Scenario {
        devices,
        channel,
        timeouts,
        baseband,
        traffic,
        connections,
        duration_slots: f.duration_slots.unwrap_or(Scenario::default().duration_slots),
        measure_from_slot: f.measure_from_slot,
        seed: f.seed,
        stop: match f.stop {
            StopFile::Never => StopWhen::Never,
            StopFile::InquiryDone => StopWhen::InquiryDone,
            StopFile::PageDone => StopWhen::PageDone,
            StopFile::PiconetSize(n) => StopWhen::PiconetSize(n),
        },
        trace: match f.trace {
            TraceFile::Off => TraceLevel::Off,
            TraceFile::Events => TraceLevel::Events,
            TraceFile::Full => TraceLevel::Full,
        },
    };
    scenario.validate().map_err(|e| {
        let text = e.to_string();
        match text.split_once(": ") {
            Some((field, msg)) if !field.contains(' ') => LoadError::at(field, msg),
            _ => LoadError::at("", text),
        }
    })?;
    Ok(scenario)
}
