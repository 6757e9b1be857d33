//! Parallel Monte Carlo over grid points.
//!
//! Runs of one point execute on the rayon pool; their aggregates are merged
//! in run order, so the output does not depend on the number of threads.
//! Rows are written and flushed point by point.

use std::io::{self, Write};
use std::sync::atomic::{AtomicBool, Ordering};

use bluesim_core::engine::{run_scenario, run_seed, ScenarioError, SeedPolicy};
use bluesim_core::metrics::Aggregate;
use rayon::prelude::*;

use crate::output::{Row, SweepWriter};
use crate::recipes::Point;

/// Environment variable holding the default number of worker threads.
pub const JOBS_ENV: &str = "BLUESIM_JOBS";

#[derive(Debug)]
pub enum SweepError {
    Scenario { point: usize, error: ScenarioError },
    Io(io::Error),
    /// Stopped by the interrupt flag after this many complete points.
    Interrupted { done: usize, total: usize },
}

impl From<io::Error> for SweepError {
    fn from(e: io::Error) -> Self {
        SweepError::Io(e)
    }
}

/// Thread count from [`JOBS_ENV`]; `None` lets rayon decide.
pub fn jobs_from_env() -> Result<Option<usize>, String> {
    match std::env::var(JOBS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(format!("{JOBS_ENV}={v:?} is not a thread count")),
        },
        Err(_) => Ok(None),
    }
}

/// Aggregates `runs` seeded runs of one point, or `None` if interrupted.
pub fn run_point(
    point: &Point,
    index: usize,
    runs: u32,
    seed: u64,
    policy: SeedPolicy,
    stop: &AtomicBool,
) -> Result<Option<Aggregate>, ScenarioError> {
    point.scenario.validate()?;
    let results: Vec<Option<Aggregate>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            if stop.load(Ordering::Relaxed) {
                return Ok(None);
            }
            let mut s = point.scenario.clone();
            s.seed = run_seed(policy, seed, index, r);
            run_scenario(&s).map(|(_, m)| Some(Aggregate::of(&m)))
        })
        .collect::<Result<_, _>>()?;
    let mut acc: Option<Aggregate> = None;
    for a in results {
        let a = match a {
            Some(a) => a,
            None => return Ok(None),
        };
        acc = Some(match acc {
            Some(x) => x.merge(&a),
            None => a,
        });
    }
    Ok(acc)
}

/// Runs every point and writes one row each. `progress` receives the index
/// of each finished point.
pub fn sweep<W: Write>(
    label: &str,
    points: &[Point],
    runs: u32,
    seed: u64,
    policy: SeedPolicy,
    out: &mut SweepWriter<W>,
    stop: &AtomicBool,
    mut progress: impl FnMut(usize, &Point),
) -> Result<Vec<Aggregate>, SweepError> {
    let mut aggs = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        match run_point(p, i, runs, seed, policy, stop) {
            Err(error) => return Err(SweepError::Scenario { point: i, error }),
            Ok(None) => {
                out.truncated(i, points.len())?;
                return Err(SweepError::Interrupted { done: i, total: points.len() });
            }
            Ok(Some(agg)) => {
                out.row(&Row { recipe: label, x_name: &p.x_name, x_value: p.x_value, variant: &p.variant, agg: &agg })?;
                progress(i, p);
                aggs.push(agg);
            }
        }
    }
    Ok(aggs)
}
