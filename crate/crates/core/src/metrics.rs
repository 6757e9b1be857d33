//! Observables derived from runs: RF activity, completion times, success
//! fractions, a linear power proxy and mergeable aggregates.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use crate::engine::RunTrace;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    EmptyWindow,
    UnknownDevice(usize),
    EmptyInput,
    InvalidPowerModel,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyWindow => f.write_str("activity window is empty"),
            MetricsError::UnknownDevice(i) => write!(f, "no device with index {i} in trace"),
            MetricsError::EmptyInput => f.write_str("nothing to aggregate"),
            MetricsError::InvalidPowerModel => f.write_str("power figures must be non-negative with idle below tx and rx"),
        }
    }
}

/// RF gate totals of one device over the measurement window.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeviceActivity {
    pub name: String,
    pub rf_tx_us: u64,
    pub rf_rx_us: u64,
    pub total_us: u64,
    /// Slots occupied by data packets this device sent.
    pub data_slots: u64,
}

impl DeviceActivity {
    pub fn activity(&self) -> f64 {
        if self.total_us == 0 {
            return 0.0;
        }
        (self.rf_tx_us + self.rf_rx_us) as f64 / self.total_us as f64
    }

    /// Data slots sent over the transmit slots available (half of all slots).
    pub fn duty_cycle(&self) -> f64 {
        let available = self.total_us / 1250;
        if available == 0 {
            return 0.0;
        }
        self.data_slots as f64 / available as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub seed: u64,
    pub inquiry_slots: Option<u64>,
    pub page_slots: Option<u64>,
    /// Slots from the start of the run until the first page completed.
    pub connect_slots: Option<u64>,
    pub inquiry_success: bool,
    pub page_success: bool,
    pub devices: Vec<DeviceActivity>,
    pub packets_lost: u64,
    pub packets_delivered: u64,
    pub buffer_drops: u64,
    pub links_lost: u64,
    pub end_us: u64,
}

impl RunMetrics {
    pub fn device(&self, name: &str) -> Option<&DeviceActivity> {
        self.devices.iter().find(|d| d.name == name)
    }
}

/// Fraction of `window` during which `device` had its transmitter or receiver on.
pub fn rf_activity(trace: &RunTrace, device: usize, window: Range<u64>) -> Result<f64, MetricsError> {
    if window.end <= window.start {
        return Err(MetricsError::EmptyWindow);
    }
    if device >= trace.devices.len() {
        return Err(MetricsError::UnknownDevice(device));
    }
    let mut on = 0u64;
    let mut level = false;
    let mut since = window.start;
    for s in trace.samples.iter().filter(|s| s.device as usize == device) {
        let t = s.t.clamp(window.start, window.end);
        if level {
            on += t - since;
        }
        since = t;
        level = s.tx || s.rx;
    }
    if level {
        on += window.end - since;
    }
    Ok(on as f64 / (window.end - window.start) as f64)
}

/// Linear power proxy, in mW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerModel {
    pub p_tx: f64,
    pub p_rx: f64,
    pub p_idle: f64,
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let ok = self.p_tx >= 0.0 && self.p_rx >= 0.0 && self.p_idle >= 0.0 && self.p_idle <= self.p_tx.min(self.p_rx);
        if ok {
            Ok(())
        } else {
            Err(MetricsError::InvalidPowerModel)
        }
    }
}

/// Energy in mJ spent by a device with the given activity.
pub fn energy(a: &DeviceActivity, model: &PowerModel) -> f64 {
    let idle = a.total_us.saturating_sub(a.rf_tx_us + a.rf_rx_us);
    (model.p_tx * a.rf_tx_us as f64 + model.p_rx * a.rf_rx_us as f64 + model.p_idle * idle as f64) * 1e-6
}

/// Running count, mean and sum of squared deviations. `merge` is associative
/// and commutative up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, o: &Moments) -> Moments {
        if self.n == 0 {
            return *o;
        }
        if o.n == 0 {
            return *self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n as f64 / n as f64,
            m2: self.m2 + o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64,
        }
    }

    /// Sample standard deviation; zero for fewer than two values.
    pub fn stddev(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        libm::sqrt(self.m2 / (self.n - 1) as f64)
    }

    pub fn mean_or_nan(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        iter.into_iter().for_each(|x| m.push(x));
        m
    }
}

/// Summary of many runs of one scenario. Time means cover successful runs only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregate {
    pub runs: u64,
    pub inquiry_ok: u64,
    pub page_ok: u64,
    pub inquiry_slots: Moments,
    pub page_slots: Moments,
    pub connect_slots: Moments,
    pub packets_lost: Moments,
    pub buffer_drops: Moments,
    /// Per device, in scenario order.
    pub activity: Vec<Moments>,
    pub duty_cycle: Vec<Moments>,
}

impl Aggregate {
    pub fn of(run: &RunMetrics) -> Aggregate {
        let one = |v: Option<u64>| v.map(|x| [x as f64].into_iter().collect()).unwrap_or_default();
        Aggregate {
            runs: 1,
            inquiry_ok: run.inquiry_success as u64,
            page_ok: run.page_success as u64,
            inquiry_slots: if run.inquiry_success { one(run.inquiry_slots) } else { Moments::default() },
            page_slots: if run.page_success { one(run.page_slots) } else { Moments::default() },
            connect_slots: one(run.connect_slots),
            packets_lost: one(Some(run.packets_lost)),
            buffer_drops: one(Some(run.buffer_drops)),
            activity: run.devices.iter().map(|d| [d.activity()].into_iter().collect()).collect(),
            duty_cycle: run.devices.iter().map(|d| [d.duty_cycle()].into_iter().collect()).collect(),
        }
    }

    pub fn merge(&self, o: &Aggregate) -> Aggregate {
        let zip = |a: &[Moments], b: &[Moments]| -> Vec<Moments> {
            (0..a.len().max(b.len()))
                .map(|i| {
                    let x = a.get(i).copied().unwrap_or_default();
                    x.merge(&b.get(i).copied().unwrap_or_default())
                })
                .collect()
        };
        Aggregate {
            runs: self.runs + o.runs,
            inquiry_ok: self.inquiry_ok + o.inquiry_ok,
            page_ok: self.page_ok + o.page_ok,
            inquiry_slots: self.inquiry_slots.merge(&o.inquiry_slots),
            page_slots: self.page_slots.merge(&o.page_slots),
            connect_slots: self.connect_slots.merge(&o.connect_slots),
            packets_lost: self.packets_lost.merge(&o.packets_lost),
            buffer_drops: self.buffer_drops.merge(&o.buffer_drops),
            activity: zip(&self.activity, &o.activity),
            duty_cycle: zip(&self.duty_cycle, &o.duty_cycle),
        }
    }

    pub fn inquiry_success_fraction(&self) -> f64 {
        self.inquiry_ok as f64 / self.runs.max(1) as f64
    }

    pub fn page_success_fraction(&self) -> f64 {
        self.page_ok as f64 / self.runs.max(1) as f64
    }
}

pub fn aggregate(runs: &[RunMetrics]) -> Result<Aggregate, MetricsError> {
    let (first, rest) = runs.split_first().ok_or(MetricsError::EmptyInput)?;
    Ok(rest.iter().fold(Aggregate::of(first), |acc, r| acc.merge(&Aggregate::of(r))))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_single_and_merge() {
        let a: Moments = [3.0].into_iter().collect();
        assert_eq!(a.mean, 3.0);
        assert_eq!(a.stddev(), 0.0);
        let b: Moments = [1.0, 2.0, 4.0].into_iter().collect();
        let ab = a.merge(&b);
        let all: Moments = [3.0, 1.0, 2.0, 4.0].into_iter().collect();
        assert!((ab.mean - all.mean).abs() < 1e-12);
        assert!((ab.m2 - all.m2).abs() < 1e-9);
        assert_eq!(ab.n, 4);
    }

    #[test]
    fn success_fraction_counts() {
        let mk = |ok| RunMetrics { page_success: ok, page_slots: ok.then_some(10), ..Default::default() };
        let agg = aggregate(&[mk(true), mk(false), mk(false), mk(true)]).unwrap();
        assert_eq!(agg.page_success_fraction(), 0.5);
        assert_eq!(agg.page_slots.n, 2);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn energy_arithmetic() {
        let m = PowerModel { p_tx: 2.0, p_rx: 2.0, p_idle: 1.0 };
        let idle = DeviceActivity { total_us: 1_000_000, ..Default::default() };
        assert!((energy(&idle, &m) - 1.0).abs() < 1e-12);
        assert_eq!(energy(&DeviceActivity::default(), &m), 0.0);
        assert!(PowerModel { p_tx: 1.0, p_rx: 1.0, p_idle: 2.0 }.validate().is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
    }
}
