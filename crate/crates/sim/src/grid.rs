//! Custom sweep grids: one scenario file and one parameter to vary.
//!
//! ```toml
//! scenario = "page.toml"      # relative to the grid file
//! param = "channel.ber"       # dotted path; numeric segments index arrays
//! values = [0.0, 0.001, 0.01]
//! x_name = "ber"              # optional, defaults to `param`
//! seed_policy = "common"      # or "independent" (default)
//! ```

use std::path::Path;

use bluesim_core::engine::SeedPolicy;
use serde::Deserialize;

use crate::recipes::Point;
use crate::scenario::{self, LoadError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    scenario: String,
    param: String,
    values: Vec<toml::Value>,
    x_name: Option<String>,
    label: Option<String>,
    #[serde(default)]
    seed_policy: PolicyFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PolicyFile {
    #[default]
    Independent,
    Common,
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub label: String,
    pub points: Vec<Point>,
    pub policy: SeedPolicy,
    pub devices: Vec<String>,
}

/// Replaces (or creates) the value at dotted `path` inside `root`.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), String> {
    let mut cur = root;
    let segs: Vec<&str> = path.split('.').collect();
    if segs.iter().any(|s| s.is_empty()) {
        return Err(format!("malformed path {path:?}"));
    }
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        cur = match cur {
            toml::Value::Array(a) => {
                let k: usize = seg.parse().map_err(|_| format!("{seg:?} must be an array index"))?;
                let len = a.len();
                a.get_mut(k).ok_or_else(|| format!("index {k} out of range (length {len})"))?
            }
            toml::Value::Table(t) => {
                if last {
                    t.insert(seg.to_string(), value);
                    return Ok(());
                }
                t.entry(seg.to_string()).or_insert_with(|| toml::Value::Table(Default::default()))
            }
            _ => return Err(format!("{:?} is not a table or array", segs[..i].join("."))),
        };
        if last {
            *cur = value;
            return Ok(());
        }
    }
    unreachable!("path has at least one segment")
}

fn numeric(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Integer(i) => Some(*i as f64),
        toml::Value::Float(f) => Some(*f),
        toml::Value::Boolean(b) => Some(*b as u8 as f64),
        _ => None,
    }
}

pub fn load(path: &Path) -> Result<Grid, LoadError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| LoadError { field: String::new(), line: None, message: format!("cannot read {}: {e}", p.display()) })
    };
    let text = read(path)?;
    let grid: GridFile = toml::from_str(&text).map_err(|e| LoadError {
        field: String::new(),
        line: e.span().map(|s| text[..s.start].matches('\n').count() + 1),
        message: e.message().to_string(),
    })?;
    let field = |f: &str, m: String| LoadError { field: f.into(), line: None, message: m };
    if grid.values.is_empty() {
        return Err(field("values", "the grid is empty".into()));
    }
    let base_path = path.parent().unwrap_or(Path::new(".")).join(&grid.scenario);
    let base_text = read(&base_path).map_err(|e| field("scenario", e.message))?;
    // Checks the base file on its own first, for line-accurate diagnostics.
    let base = scenario::from_str(&base_text).map_err(|e| LoadError { field: format!("scenario: {}", e.field), ..e })?;
    let base_value: toml::Value = toml::from_str(&base_text).map_err(|e| field("scenario", e.message().to_string()))?;
    let x_name = grid.x_name.clone().unwrap_or_else(|| grid.param.clone());
    let mut points = Vec::with_capacity(grid.values.len());
    for (i, v) in grid.values.iter().enumerate() {
        let x = numeric(v).ok_or_else(|| field(&format!("values[{i}]"), "grid values must be numbers or booleans".into()))?;
        let mut doc = base_value.clone();
        set_path(&mut doc, &grid.param, v.clone()).map_err(|m| field("param", m))?;
        let scenario = scenario::from_value(doc).map_err(|e| LoadError {
            field: format!("values[{i}] ({}={v}): {}", grid.param, e.field),
            ..e
        })?;
        points.push(Point { x_name: x_name.clone(), x_value: x, variant: String::new(), scenario });
    }
    let label = grid
        .label
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "grid".into());
    Ok(Grid {
        label,
        points,
        policy: match grid.seed_policy {
            PolicyFile::Independent => SeedPolicy::Independent,
            PolicyFile::Common => SeedPolicy::Common,
        },
        devices: base.devices.iter().map(|d| d.name.clone()).collect(),
    })
}
