//! `bluesim run | sweep | validate`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use bluesim_core::engine::{build_world, check_trace, SeedPolicy, TraceLevel};
use clap::{Parser, Subcommand};

use crate::output::{meta_lines, write_run, SweepWriter};
use crate::recipes::{known_list, Point, Recipe};
use crate::sweep::{jobs_from_env, sweep, SweepError, JOBS_ENV};
use crate::{grid, scenario, vcd};

pub const EXIT_OK: i32 = 0;
/// Bad or missing input.
pub const EXIT_INPUT: i32 = 2;
/// A run violated a protocol invariant.
pub const EXIT_BREACH: i32 = 3;
pub const EXIT_INTERRUPTED: i32 = 130;

#[derive(Debug, Parser)]
#[command(name = "bluesim", version, about = "Bit-level Bluetooth piconet simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        /// Overrides the seed in the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Writes the waveform of every device.
        #[arg(long)]
        vcd: Option<PathBuf>,
        /// Writes per-device metrics.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Monte Carlo sweep of a built-in recipe or a grid file.
    #[command(after_help = format!("Recipes: {}\nWorker threads default to ${JOBS_ENV} (all cores when unset).", known_list()))]
    Sweep {
        /// Recipe id (fig6, fig7, fig8, fig10, fig11, fig12) or grid file.
        target: String,
        #[arg(long, default_value_t = 100)]
        runs: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; standard output when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

/// Parses `args` and executes; returns the process exit code.
pub fn main_with<I, T>(args: I, stop: &AtomicBool) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match cli.command {
        Cmd::Run { scenario, seed, vcd, csv } => run(&scenario, seed, vcd.as_deref(), csv.as_deref()),
        Cmd::Sweep { target, runs, seed, csv } => sweep_cmd(&target, runs, seed, csv.as_deref(), stop),
        Cmd::Validate { scenario } => validate(&scenario),
    }
}

fn input_error(path: &Path, e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {}: {e}", path.display());
    EXIT_INPUT
}

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new)
}

fn validate(path: &Path) -> i32 {
    match scenario::load(path) {
        Ok(s) => {
            println!("{}: ok ({} devices, {} slots)", path.display(), s.devices.len(), s.duration_slots);
            EXIT_OK
        }
        Err(e) => input_error(path, e),
    }
}

fn run(path: &Path, seed: Option<u64>, vcd_path: Option<&Path>, csv_path: Option<&Path>) -> i32 {
    let mut s = match scenario::load(path) {
        Ok(s) => s,
        Err(e) => return input_error(path, e),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.trace = TraceLevel::Full;
    let world = match build_world(&s) {
        Ok(w) => w,
        Err(e) => return input_error(path, e),
    };
    let (trace, metrics) = world.run();
    let meta = meta_lines(s.seed, &[("scenario", path.display().to_string())]);

    let written = (|| -> io::Result<()> {
        if let Some(p) = vcd_path {
            let mut w = create(p)?;
            vcd::write(&trace, &meta, &mut w)?;
            w.flush()?;
        }
        if let Some(p) = csv_path {
            let mut w = create(p)?;
            write_run(&mut w, &meta, &metrics)?;
            w.flush()?;
        }
        Ok(())
    })();
    if let Err(e) = written {
        eprintln!("error: cannot write output: {e}");
        return EXIT_INPUT;
    }

    println!("seed {}  simulated {} slots", s.seed, metrics.end_us / 625);
    let slots = |v: Option<u64>| v.map_or("-".to_string(), |n| n.to_string());
    println!("inquiry {}  page {}", slots(metrics.inquiry_slots), slots(metrics.page_slots));
    for d in &metrics.devices {
        println!("  {:<12} rf activity {:.4}  duty cycle {:.4}", d.name, d.activity(), d.duty_cycle());
    }
    if metrics.packets_lost + metrics.buffer_drops + metrics.links_lost > 0 {
        println!(
            "  lost packets {}  buffer drops {}  lost links {}",
            metrics.packets_lost, metrics.buffer_drops, metrics.links_lost
        );
    }
    match check_trace(&trace) {
        Ok(()) => EXIT_OK,
        Err(v) => {
            eprintln!("assertion breach: {v}");
            EXIT_BREACH
        }
    }
}

struct Plan {
    label: String,
    points: Vec<Point>,
    policy: SeedPolicy,
    devices: Vec<String>,
}

fn plan(target: &str) -> Result<Plan, i32> {
    if let Some(r) = Recipe::parse(target) {
        return Ok(Plan { label: r.id().into(), points: r.points(), policy: SeedPolicy::Independent, devices: r.devices() });
    }
    let path = Path::new(target);
    if path.is_file() {
        return grid::load(path)
            .map(|g| Plan { label: g.label, points: g.points, policy: g.policy, devices: g.devices })
            .map_err(|e| input_error(path, e));
    }
    if path.extension().is_some() || target.contains(std::path::MAIN_SEPARATOR) {
        eprintln!("error: {target}: no such grid file");
    } else {
        let mut msg = format!("error: unknown recipe {target:?}; known recipes: {}", known_list());
        if let Some(best) = scenario::suggest(target, Recipe::ALL.iter().map(|r| r.id())) {
            msg.push_str(&format!(" (did you mean `{best}`?)"));
        }
        eprintln!("{msg}");
    }
    Err(EXIT_INPUT)
}

fn sweep_cmd(target: &str, runs: u32, seed: u64, csv_path: Option<&Path>, stop: &AtomicBool) -> i32 {
    if runs == 0 {
        eprintln!("error: --runs must be at least 1");
        return EXIT_INPUT;
    }
    let plan = match plan(target) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let jobs = match jobs_from_env() {
        Ok(j) => j,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_INPUT;
        }
    };
    let policy = match plan.policy {
        SeedPolicy::Independent => "independent",
        SeedPolicy::Common => "common",
    };
    let meta = meta_lines(
        seed,
        &[("recipe", plan.label.clone()), ("runs", runs.to_string()), ("seed_policy", policy.into())],
    );
    let out: Box<dyn Write + Send> = match csv_path {
        Some(p) => match create(p) {
            Ok(w) => Box::new(w),
            Err(e) => return input_error(p, e),
        },
        None => Box::new(BufWriter::new(io::stdout())),
    };
    let mut writer = match SweepWriter::new(out, &meta, &plan.devices) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: cannot write output: {e}");
            return EXIT_INPUT;
        }
    };
    let total = plan.points.len();
    let started = std::time::Instant::now();
    let result = pool.install(|| {
        sweep(&plan.label, &plan.points, runs, seed, plan.policy, &mut writer, stop, |i, p| {
            let variant = if p.variant.is_empty() { String::new() } else { format!(" {}", p.variant) };
            eprintln!(
                "[{}/{total}] {} {}={}{variant} ({:.1}s)",
                i + 1,
                plan.label,
                p.x_name,
                p.x_value,
                started.elapsed().as_secs_f64()
            );
        })
    });
    let code = match result {
        Ok(_) => EXIT_OK,
        Err(SweepError::Interrupted { done, total }) => {
            eprintln!("interrupted after {done} of {total} points; partial table written");
            EXIT_INTERRUPTED
        }
        Err(SweepError::Scenario { point, error }) => {
            eprintln!("error: grid point {point}: {error}");
            EXIT_INPUT
        }
        Err(SweepError::Io(e)) => {
            eprintln!("error: cannot write output: {e}");
            EXIT_INPUT
        }
    };
    if let Err(e) = writer.finish() {
        eprintln!("error: cannot write output: {e}");
        return EXIT_INPUT;
    }
    code
}
