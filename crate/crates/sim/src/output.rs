//! CSV tables with a `#`-prefixed metadata block.

use std::io::{self, Write};

use bluesim_core::engine::SCHEMA_VERSION;
use bluesim_core::metrics::{Aggregate, Moments, RunMetrics};
use bluesim_core::RNG_ID;

/// Metadata carried by every output file.
pub fn meta_lines(seed: u64, extra: &[(&str, String)]) -> Vec<String> {
    let mut lines = vec![
        format!("bluesim {}", env!("CARGO_PKG_VERSION")),
        format!("schema_version={SCHEMA_VERSION}"),
        format!("rng={RNG_ID}"),
        format!("seed={seed}"),
    ];
    lines.extend(extra.iter().map(|(k, v)| format!("{k}={v}")));
    lines
}

fn write_meta<W: Write>(out: &mut W, meta: &[String]) -> io::Result<()> {
    for m in meta {
        writeln!(out, "# {m}")?;
    }
    Ok(())
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        String::new()
    }
}

fn opt(x: Option<u64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub const RUN_HEADER: [&str; 17] = [
    "device",
    "rf_tx_us",
    "rf_rx_us",
    "total_us",
    "activity",
    "data_slots",
    "duty_cycle",
    "seed",
    "inquiry_success",
    "inquiry_slots",
    "page_success",
    "page_slots",
    "connect_slots",
    "packets_delivered",
    "packets_lost",
    "buffer_drops",
    "links_lost",
];

/// One row per device; run-level columns repeat on every row.
pub fn write_run<W: Write>(out: W, meta: &[String], m: &RunMetrics) -> io::Result<()> {
    let mut out = out;
    write_meta(&mut out, meta)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_HEADER)?;
    for d in &m.devices {
        w.write_record([
            d.name.clone(),
            d.rf_tx_us.to_string(),
            d.rf_rx_us.to_string(),
            d.total_us.to_string(),
            num(d.activity()),
            d.data_slots.to_string(),
            num(d.duty_cycle()),
            m.seed.to_string(),
            m.inquiry_success.to_string(),
            opt(m.inquiry_slots),
            m.page_success.to_string(),
            opt(m.page_slots),
            opt(m.connect_slots),
            m.packets_delivered.to_string(),
            m.packets_lost.to_string(),
            m.buffer_drops.to_string(),
            m.links_lost.to_string(),
        ])?;
    }
    w.flush()
}

pub const SWEEP_FIXED: [&str; 15] = [
    "recipe",
    "x_name",
    "x_value",
    "variant",
    "runs",
    "inquiry_success",
    "inquiry_slots_mean",
    "inquiry_slots_sd",
    "page_success",
    "page_slots_mean",
    "page_slots_sd",
    "connect_slots_mean",
    "connect_slots_sd",
    "packets_lost_mean",
    "buffer_drops_mean",
];

/// Full sweep header: the fixed columns, then three per device.
pub fn sweep_header(devices: &[String]) -> Vec<String> {
    let mut h: Vec<String> = SWEEP_FIXED.iter().map(|s| s.to_string()).collect();
    for d in devices {
        h.push(format!("{d}_activity_mean"));
        h.push(format!("{d}_activity_sd"));
        h.push(format!("{d}_duty_cycle_mean"));
    }
    h
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Row<'a> {
    pub recipe: &'a str,
    pub x_name: &'a str,
    pub x_value: f64,
    pub variant: &'a str,
    pub agg: &'a Aggregate,
}

pub fn sweep_record(row: &Row<'_>, devices: usize) -> Vec<String> {
    let a = row.agg;
    let sd = |m: &Moments| if m.n == 0 { String::new() } else { num(m.stddev()) };
    let mut r = vec![
        row.recipe.to_string(),
        row.x_name.to_string(),
        format!("{}", row.x_value),
        row.variant.to_string(),
        a.runs.to_string(),
        num(a.inquiry_success_fraction()),
        num(a.inquiry_slots.mean_or_nan()),
        sd(&a.inquiry_slots),
        num(a.page_success_fraction()),
        num(a.page_slots.mean_or_nan()),
        sd(&a.page_slots),
        num(a.connect_slots.mean_or_nan()),
        sd(&a.connect_slots),
        num(a.packets_lost.mean_or_nan()),
        num(a.buffer_drops.mean_or_nan()),
    ];
    for i in 0..devices {
        let act = a.activity.get(i).copied().unwrap_or_default();
        let duty = a.duty_cycle.get(i).copied().unwrap_or_default();
        r.push(num(act.mean_or_nan()));
        r.push(sd(&act));
        r.push(num(duty.mean_or_nan()));
    }
    r
}

/// Sweep CSV writer that flushes after every row, so an interrupted sweep
/// leaves a readable partial table.
pub struct SweepWriter<W: Write> {
    out: W,
    devices: usize,
}

fn encode(record: &[String]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(record)?;
    w.into_inner().map_err(|e| e.into_error())
}

impl<W: Write> SweepWriter<W> {
    pub fn new(mut out: W, meta: &[String], devices: &[String]) -> io::Result<Self> {
        write_meta(&mut out, meta)?;
        out.write_all(&encode(&sweep_header(devices))?)?;
        out.flush()?;
        Ok(SweepWriter { out, devices: devices.len() })
    }

    pub fn row(&mut self, row: &Row<'_>) -> io::Result<()> {
        self.out.write_all(&encode(&sweep_record(row, self.devices))?)?;
        self.out.flush()
    }

    /// Appends the truncation marker after the rows written so far.
    pub fn truncated(&mut self, done: usize, total: usize) -> io::Result<()> {
        writeln!(self.out, "# truncated: interrupted after {done} of {total} points")?;
        self.out.flush()
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
