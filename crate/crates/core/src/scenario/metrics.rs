//! Per-trial metrics, recomputed from the run log and the logged world.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::log::{EndReason, LogRecord, PlannerEvent, RunLog, SubtaskEvent};
use crate::error::{Error, Result};
use crate::geometry::RobotModel;
use crate::safety::SafetyMode;
use crate::world::{whole_body_clearance, WorldState};

/// Upper edges (m) of the ground-truth clearance bins for approach speed.
pub const APPROACH_BINS: [f64; 3] = [0.25, 0.5, 1.0];
/// Clearance below which approach speeds count as "near" (m).
pub const NEAR_DISTANCE: f64 = 0.5;

/// CSV column order of [`MetricsRow`].
pub const METRICS_COLUMNS: [&str; 27] = [
    "trial_id",
    "seed",
    "mapper",
    "safety_mode",
    "gamma",
    "delta_safe",
    "v_des",
    "collision_free",
    "min_clearance",
    "path_length",
    "completion_time",
    "end_reason",
    "end_time",
    "subtasks_completed",
    "subtasks_total",
    "min_h",
    "approach_mean_0_25",
    "approach_p95_0_25",
    "approach_mean_25_50",
    "approach_p95_25_50",
    "approach_mean_50_100",
    "approach_p95_50_100",
    "approach_p95_near",
    "near_samples",
    "replans_adopted",
    "max_kkt",
    "subtask_path_lengths",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub trial_id: String,
    pub seed: u64,
    pub mapper: String,
    pub safety_mode: String,
    pub gamma: f64,
    pub delta_safe: f64,
    pub v_des: f64,
    pub collision_free: bool,
    pub min_clearance: f64,
    pub path_length: f64,
    /// Time of script completion; `None` when the run did not complete.
    pub completion_time: Option<f64>,
    pub end_reason: EndReason,
    pub end_time: f64,
    pub subtasks_completed: usize,
    pub subtasks_total: usize,
    pub min_h: Option<f64>,
    /// `(mean, p95)` of approach speed per clearance bin.
    pub approach_bins: [(Option<f64>, Option<f64>); 3],
    pub approach_p95_near: Option<f64>,
    /// Approach speeds sampled within [`NEAR_DISTANCE`], for pooling.
    pub near_approach: Vec<f64>,
    pub replans_adopted: usize,
    pub max_kkt: f64,
    pub subtask_path_lengths: Vec<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn csv_fields(&self) -> Vec<String> {
        let mut f = vec![
            self.trial_id.clone(),
            self.seed.to_string(),
            self.mapper.clone(),
            self.safety_mode.clone(),
            self.gamma.to_string(),
            self.delta_safe.to_string(),
            self.v_des.to_string(),
            self.collision_free.to_string(),
            self.min_clearance.to_string(),
            self.path_length.to_string(),
            opt(self.completion_time),
            serde_json::to_value(self.end_reason).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            self.end_time.to_string(),
            self.subtasks_completed.to_string(),
            self.subtasks_total.to_string(),
            opt(self.min_h),
        ];
        for (mean, p95) in &self.approach_bins {
            f.push(opt(*mean));
            f.push(opt(*p95));
        }
        f.push(opt(self.approach_p95_near));
        f.push(self.near_approach.len().to_string());
        f.push(self.replans_adopted.to_string());
        f.push(self.max_kkt.to_string());
        f.push(self.subtask_path_lengths.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"));
        f
    }
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], p: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    Some(s[rank.min(s.len()) - 1])
}

fn mean(samples: &[f64]) -> Option<f64> {
    (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Whole-body clearance and the base speed toward the nearest obstacle,
/// measured along the negative ground-truth distance gradient at the
/// sphere closest to an obstacle. No approach speed without obstacles.
pub fn sample_metrics(world: &WorldState, model: &RobotModel, q: &DVector<f64>, v: &DVector<f64>) -> (f64, Option<f64>) {
    let clearance = whole_body_clearance(world, model, q);
    if world.boxes.is_empty() {
        return (clearance, None);
    }
    let centers = model.sphere_centers(q);
    let (j, _) = centers
        .iter()
        .zip(&model.spheres)
        .map(|(c, s)| world.signed_distance(c) - s.radius)
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("model has spheres");
    let Some((d, point)) = world.closest_obstacle(&centers[j]) else {
        return (clearance, None);
    };
    let away = centers[j] - point;
    if away.norm() < 1e-12 {
        return (clearance, Some(0.0));
    }
    let grad = if d < 0.0 { -away.normalize() } else { away.normalize() };
    let v_base = Vector3::new(v[0], v[1], 0.0);
    (clearance, Some(-v_base.dot(&grad)))
}

/// Recomputes the metrics of a run from its log alone.
pub fn compute_metrics(log: &RunLog) -> Result<MetricsRow> {
    let (cfg, seed) = log.meta()?;
    let model = &cfg.robot.model;
    let mut world = WorldState::new(Vec::new(), seed);
    let mut min_clearance = f64::INFINITY;
    let mut path_length = 0.0;
    let mut last_xy: Option<[f64; 2]> = None;
    let mut bins: [Vec<f64>; 3] = Default::default();
    let mut near = Vec::new();
    let mut active_subtask: Option<usize> = None;
    let mut subtask_lengths = vec![0.0; cfg.tasks.script.len()];
    let mut completed = 0;
    let mut min_h: Option<f64> = None;
    let mut replans = 0;
    let mut max_kkt: f64 = 0.0;
    let mut end = None;
    for r in &log.records {
        match r {
            LogRecord::World { boxes, .. } => world.boxes = boxes.clone(),
            LogRecord::State { q, v, .. } => {
                let q = DVector::from_column_slice(q);
                let v = DVector::from_column_slice(v);
                if q.len() != model.dof() || v.len() != model.dof() {
                    return Err(Error::Format("state record has the wrong dimension".into()));
                }
                let (c, approach) = sample_metrics(&world, model, &q, &v);
                min_clearance = min_clearance.min(c);
                if let Some(a) = approach {
                    if let Some(b) = APPROACH_BINS.iter().position(|&edge| c < edge) {
                        bins[b].push(a);
                    }
                    if c < NEAR_DISTANCE {
                        near.push(a);
                    }
                }
                let xy = [q[0], q[1]];
                if let Some(p) = last_xy {
                    let step = (xy[0] - p[0]).hypot(xy[1] - p[1]);
                    path_length += step;
                    if let Some(k) = active_subtask {
                        subtask_lengths[k] += step;
                    }
                }
                last_xy = Some(xy);
            }
            LogRecord::Subtask { index, event, .. } => match event {
                SubtaskEvent::Start => active_subtask = Some(*index),
                SubtaskEvent::Complete => {
                    completed += 1;
                    active_subtask = None;
                }
            },
            LogRecord::Solver { h_min: Some(h), kkt_max, .. } => {
                min_h = Some(min_h.map_or(*h, |m: f64| m.min(*h)));
                max_kkt = max_kkt.max(*kkt_max);
            }
            LogRecord::Solver { kkt_max, .. } => max_kkt = max_kkt.max(*kkt_max),
            LogRecord::Planner { event: PlannerEvent::Adopted, .. } => replans += 1,
            LogRecord::End { t, reason } => end = Some((*t, *reason)),
            _ => {}
        }
    }
    let (end_time, end_reason) = end.ok_or_else(|| Error::Format("run log has no end record".into()))?;
    let mode = match cfg.safety.mode {
        SafetyMode::Cbf => "cbf",
        SafetyMode::Edf => "edf",
    };
    Ok(MetricsRow {
        trial_id: cfg.name.clone(),
        seed,
        mapper: cfg.mapper.as_str().into(),
        safety_mode: mode.into(),
        gamma: cfg.safety.gamma,
        delta_safe: cfg.safety.delta_safe,
        v_des: cfg.tasks.v_des,
        collision_free: min_clearance > 0.0,
        min_clearance,
        path_length,
        completion_time: (end_reason == EndReason::Completed).then_some(end_time),
        end_reason,
        end_time,
        subtasks_completed: completed,
        subtasks_total: cfg.tasks.script.len(),
        min_h,
        approach_bins: [0, 1, 2].map(|b| (mean(&bins[b]), percentile(&bins[b], 95.0))),
        approach_p95_near: percentile(&near, 95.0),
        near_approach: near,
        replans_adopted: replans,
        max_kkt,
        subtask_path_lengths: subtask_lengths,
    })
}
