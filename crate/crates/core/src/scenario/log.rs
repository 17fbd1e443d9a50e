//! Line-delimited JSON run log. Every record carries its simulated time
//! `t` and a `channel` tag.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::mapping::MapEvent;
use crate::world::{BoxObject, ScriptedChange};

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Completed,
    Collision,
    DurationCap,
    /// The controller or a subsystem reported an unrecoverable error.
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskEvent {
    Start,
    Complete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerEvent {
    /// A new path replaced the current one.
    Adopted,
    /// A replan was computed but the current path was kept.
    Kept,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "channel", rename_all = "snake_case")]
pub enum LogRecord {
    /// First record: the fully resolved configuration as TOML (JSON has no
    /// infinities, which joint limits use).
    Meta { t: f64, format_version: u32, seed: u64, config: String },
    /// Box poses, written at start and after every scripted change.
    World { t: f64, boxes: Vec<BoxObject>, fired: Vec<ScriptedChange> },
    State { t: f64, q: Vec<f64>, v: Vec<f64> },
    Command { t: f64, v: Vec<f64> },
    Snapshot { t: f64, version: u64, objects: Vec<u32>, occupied_cells: usize },
    Map { t: f64, event: MapEvent },
    /// Expected consistency of every library object after a mapper update.
    Consistency { t: f64, objects: Vec<(u32, f64)> },
    Solver {
        t: f64,
        stack: Vec<String>,
        status: String,
        qp_iterations: u32,
        qp_solves: u32,
        kkt_max: f64,
        h_min: Option<f64>,
        state_slack: f64,
        safety_slack: f64,
        out_of_bounds: bool,
        task_costs: Vec<f64>,
    },
    Planner {
        t: f64,
        event: PlannerEvent,
        snapshot_version: u64,
        length: Option<f64>,
        points: Vec<[f64; 2]>,
        reason: String,
    },
    Subtask { t: f64, index: usize, kind: String, name: Option<String>, stack: Vec<String>, event: SubtaskEvent },
    /// Ground-truth samples at control rate, for plotting.
    Metric { t: f64, clearance: f64, approach_speed: Option<f64> },
    Collision { t: f64, clearance: f64 },
    Anomaly { t: f64, message: String },
    End { t: f64, reason: EndReason },
}

impl LogRecord {
    pub fn time(&self) -> f64 {
        match self {
            LogRecord::Meta { t, .. }
            | LogRecord::World { t, .. }
            | LogRecord::State { t, .. }
            | LogRecord::Command { t, .. }
            | LogRecord::Snapshot { t, .. }
            | LogRecord::Map { t, .. }
            | LogRecord::Consistency { t, .. }
            | LogRecord::Solver { t, .. }
            | LogRecord::Planner { t, .. }
            | LogRecord::Subtask { t, .. }
            | LogRecord::Metric { t, .. }
            | LogRecord::Collision { t, .. }
            | LogRecord::Anomaly { t, .. }
            | LogRecord::End { t, .. } => *t,
        }
    }

    pub fn channel(&self) -> &'static str {
        match self {
            LogRecord::Meta { .. } => "meta",
            LogRecord::World { .. } => "world",
            LogRecord::State { .. } => "state",
            LogRecord::Command { .. } => "command",
            LogRecord::Snapshot { .. } => "snapshot",
            LogRecord::Map { .. } => "map",
            LogRecord::Consistency { .. } => "consistency",
            LogRecord::Solver { .. } => "solver",
            LogRecord::Planner { .. } => "planner",
            LogRecord::Subtask { .. } => "subtask",
            LogRecord::Metric { .. } => "metric",
            LogRecord::Collision { .. } => "collision",
            LogRecord::Anomaly { .. } => "anomaly",
            LogRecord::End { .. } => "end",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    /// Resolved configuration and seed from the leading meta record.
    pub fn meta(&self) -> Result<(ScenarioConfig, u64)> {
        match self.records.first() {
            Some(LogRecord::Meta { config, seed, format_version, .. }) => {
                if *format_version != LOG_FORMAT_VERSION {
                    return Err(Error::Format(format!("unsupported log format version {format_version}")));
                }
                let cfg: ScenarioConfig = toml::from_str(config).map_err(|e| Error::Format(format!("meta config: {e}")))?;
                Ok((cfg, *seed))
            }
            _ => Err(Error::Format("run log does not start with a meta record".into())),
        }
    }

    pub fn end(&self) -> Option<(f64, EndReason)> {
        self.records.iter().rev().find_map(|r| match r {
            LogRecord::End { t, reason } => Some((*t, *reason)),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *w, r).map_err(|e| Error::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        Ok(Self { records })
    }

    /// Checks that timestamps never decrease within a channel.
    pub fn timestamps_monotone(&self) -> bool {
        let mut last: std::collections::BTreeMap<&str, f64> = Default::default();
        self.records.iter().all(|r| {
            let prev = last.insert(r.channel(), r.time());
            prev.is_none_or(|p| r.time() >= p)
        })
    }
}
