//! Cartesian-product batches over seeds and parameter grids.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{MapperKind, ScenarioConfig};
use super::metrics::{percentile, MetricsRow, METRICS_COLUMNS};
use super::runner::{run_scenario, RunOutcome};
use crate::error::{Error, Result};
use crate::safety::SafetyMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyVariant {
    pub mode: SafetyMode,
    /// Only meaningful for the CBF mode; the template's value if absent.
    #[serde(default)]
    pub gamma: Option<f64>,
}

/// Parameter grid; an empty list keeps the template's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchGrid {
    pub variants: Vec<SafetyVariant>,
    pub delta_safe: Vec<f64>,
    pub v_des: Vec<f64>,
    pub mapper: Vec<MapperKind>,
}

impl BatchGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every grid cell applied to the template, in a fixed order.
    pub fn expand(&self, template: &ScenarioConfig) -> Vec<ScenarioConfig> {
        let variants = if self.variants.is_empty() {
            vec![SafetyVariant { mode: template.safety.mode, gamma: None }]
        } else {
            self.variants.clone()
        };
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let deltas = or(&self.delta_safe, template.safety.delta_safe);
        let speeds = or(&self.v_des, template.tasks.v_des);
        let mappers = if self.mapper.is_empty() { vec![template.mapper] } else { self.mapper.clone() };
        let mut out = Vec::new();
        for mapper in &mappers {
            for var in &variants {
                for delta in &deltas {
                    for v in &speeds {
                        let mut c = template.clone();
                        c.mapper = *mapper;
                        c.safety.mode = var.mode;
                        if let Some(g) = var.gamma {
                            c.safety.gamma = g;
                        }
                        c.safety.delta_safe = *delta;
                        c.tasks.v_des = *v;
                        let mode = match var.mode {
                            SafetyMode::Cbf => format!("cbf{}", c.safety.gamma),
                            SafetyMode::Edf => "edf".into(),
                        };
                        c.name = format!("{}-{}-{}-d{}-v{}", template.name, mapper.as_str(), mode, delta, v);
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    /// Grid cell name; trials of one cell differ only in seed.
    pub cell: String,
    pub name: String,
    pub seed: u64,
    pub row: Option<MetricsRow>,
    pub error: Option<String>,
}

/// Runs every seed for every grid cell. Failed trials are recorded and the
/// batch continues. `sink` sees each trial as it finishes.
pub fn run_batch<F>(template: &ScenarioConfig, seeds: std::ops::Range<u64>, grid: &BatchGrid, mut sink: F) -> Vec<TrialResult>
where
    F: FnMut(&TrialResult, Option<&RunOutcome>),
{
    let mut results = Vec::new();
    for seed in seeds {
        for cfg in grid.expand(template) {
            let cell = cfg.name.clone();
            let name = format!("{cell}-s{seed}");
            let mut cfg = cfg;
            cfg.name = name.clone();
            let (res, outcome) = match run_scenario(&cfg, seed) {
                Ok(o) => (TrialResult { cell, name, seed, row: Some(o.metrics.clone()), error: None }, Some(o)),
                Err(e) => (TrialResult { cell, name, seed, row: None, error: Some(e.to_string()) }, None),
            };
            sink(&res, outcome.as_ref());
            results.push(res);
        }
    }
    results
}

pub const AGGREGATE_COLUMNS: [&str; 13] = [
    "mapper",
    "safety_mode",
    "gamma",
    "delta_safe",
    "v_des",
    "trials",
    "failed_trials",
    "collision_free_rate",
    "completion_rate",
    "mean_min_clearance",
    "p95_approach_near",
    "mean_path_length",
    "mean_completion_time",
];

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub mapper: String,
    pub safety_mode: String,
    pub gamma: f64,
    pub delta_safe: f64,
    pub v_des: f64,
    pub trials: usize,
    pub failed_trials: usize,
    pub collision_free_rate: f64,
    pub completion_rate: f64,
    pub mean_min_clearance: f64,
    /// 95th percentile of approach speeds pooled over all trials of the cell.
    pub p95_approach_near: Option<f64>,
    pub mean_path_length: f64,
    pub mean_completion_time: Option<f64>,
}

/// One row per grid cell, in the order cells first appear. Cells whose
/// trials all failed have no row.
pub fn aggregate(results: &[TrialResult]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in results {
        if !order.contains(&r.cell.as_str()) {
            order.push(&r.cell);
        }
    }
    order
        .into_iter()
        .filter_map(|cell| {
            let trials: Vec<&TrialResult> = results.iter().filter(|r| r.cell == cell).collect();
            let rows: Vec<&MetricsRow> = trials.iter().filter_map(|r| r.row.as_ref()).collect();
            let first = rows.first()?;
            let n = rows.len() as f64;
            let near: Vec<f64> = rows.iter().flat_map(|r| r.near_approach.iter().copied()).collect();
            let done: Vec<f64> = rows.iter().filter_map(|r| r.completion_time).collect();
            Some(AggregateRow {
                mapper: first.mapper.clone(),
                safety_mode: first.safety_mode.clone(),
                gamma: first.gamma,
                delta_safe: first.delta_safe,
                v_des: first.v_des,
                trials: rows.len(),
                failed_trials: trials.len() - rows.len(),
                collision_free_rate: rows.iter().filter(|r| r.collision_free).count() as f64 / n,
                completion_rate: done.len() as f64 / n,
                mean_min_clearance: rows.iter().map(|r| r.min_clearance).sum::<f64>() / n,
                p95_approach_near: percentile(&near, 95.0),
                mean_path_length: rows.iter().map(|r| r.path_length).sum::<f64>() / n,
                mean_completion_time: (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64),
            })
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    for r in rows {
        out.write_record(r.csv_fields()).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(w: W, rows: &[AggregateRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(AGGREGATE_COLUMNS).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.mapper.clone(),
            r.safety_mode.clone(),
            r.gamma.to_string(),
            r.delta_safe.to_string(),
            r.v_des.to_string(),
            r.trials.to_string(),
            r.failed_trials.to_string(),
            r.collision_free_rate.to_string(),
            r.completion_rate.to_string(),
            r.mean_min_clearance.to_string(),
            opt(r.p95_approach_near),
            r.mean_path_length.to_string(),
            opt(r.mean_completion_time),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
