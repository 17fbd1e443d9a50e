//! Deterministic closed loop: sense, map, plan, solve, integrate.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DVector, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{MapperKind, ScenarioConfig, Subtask, TaskKind};
use super::log::{EndReason, LogRecord, PlannerEvent, RunLog, SubtaskEvent, LOG_FORMAT_VERSION};
use super::metrics::{compute_metrics, sample_metrics, MetricsRow};
use crate::error::{Error, Result};
use crate::geometry::{pose_error, rot_y, rot_z, rpy, FrameId, Pose3, RobotModel, RobotState, BASE_DOF};
use crate::mapping::{build_local_edf, cell_position, local_region, segment_cloud, MapSnapshot, ObjectLibrary, VoxelBaseline};
use crate::mpc::{extract_command, HtmpcController, Solution, SolveStatus, TrackingTask};
use crate::planner::{occupancy_from_snapshot, plan_path, time_parameterize, OccupancyGrid2D, PathPlan, ReferenceTrajectory};
use crate::world::{ground_truth_edf, render_depth, whole_body_clearance, ChangeScript, DelayQueue, DepthFrame, WorldState};

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub log: RunLog,
    pub metrics: MetricsRow,
    /// Wall-clock duration of every controller solve (s). Kept out of the
    /// log so that logs are reproducible.
    pub solve_times: Vec<f64>,
    pub end: EndReason,
    /// The last published map.
    pub map: MapSnapshot,
}

/// Applies the seed and expands the scene generator so the configuration
/// fully describes the run.
pub fn resolve(config: &ScenarioConfig, seed: u64) -> Result<ScenarioConfig> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    if let Some(g) = cfg.world.generator.take() {
        let mut boxes = g.generate(seed)?;
        cfg.world.boxes.append(&mut boxes);
    }
    cfg.validate()?;
    Ok(cfg)
}

enum Mapper {
    Object(ObjectLibrary),
    Voxel(VoxelBaseline),
    GroundTruth,
}

struct NavState {
    plan: Option<PathPlan>,
    reference: ReferenceTrajectory,
    /// Reference time; advances more slowly when tracking lags.
    progress: f64,
    last_replan: f64,
    grid: Option<OccupancyGrid2D>,
    goal: Vector2<f64>,
}

struct ManipState {
    ee_goal: Pose3,
    orientation: bool,
    base: Pose3,
    dwell: f64,
}

enum Active {
    None,
    Navigate(NavState),
    Manipulate(ManipState),
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    model: &'a RobotModel,
    world: WorldState,
    changes: ChangeScript,
    reached: BTreeSet<String>,
    robot: RobotState,
    rng: ChaCha8Rng,
    next_capture: Vec<f64>,
    queue: DelayQueue<DepthFrame>,
    mapper: Mapper,
    snapshot: MapSnapshot,
    field_center: Vector2<f64>,
    map_dirty: bool,
    fresh_snapshot: bool,
    controller: HtmpcController,
    subtask: usize,
    active: Active,
    dwell: f64,
    log: RunLog,
    solve_times: Vec<f64>,
}

fn planar(q: &DVector<f64>) -> Pose3 {
    Pose3::planar(q[0], q[1], q[2])
}

fn stack_names(stack: &[TaskKind]) -> Vec<String> {
    stack.iter().map(|k| k.as_str().to_string()).collect()
}

/// Point of `points` closest to `p` and the remaining polyline after it.
fn remaining_path(points: &[Vector2<f64>], p: &Vector2<f64>) -> Vec<Vector2<f64>> {
    if points.len() < 2 {
        return points.to_vec();
    }
    let mut best = (f64::INFINITY, 0, points[0]);
    for (k, w) in points.windows(2).enumerate() {
        let d = w[1] - w[0];
        let s = if d.norm_squared() > 0.0 { ((p - w[0]).dot(&d) / d.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
        let c = w[0] + d * s;
        let dist = (c - p).norm();
        if dist < best.0 {
            best = (dist, k, c);
        }
    }
    let mut out = vec![best.2];
    out.extend_from_slice(&points[best.1 + 1..]);
    out
}

fn polyline_length(points: &[Vector2<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        let model = &cfg.robot.model;
        let mut q = model.default_configuration();
        q[0] = cfg.robot.initial_pose[0];
        q[1] = cfg.robot.initial_pose[1];
        q[2] = cfg.robot.initial_pose[2];
        if let Some(arm) = &cfg.robot.initial_arm {
            for (i, v) in arm.iter().enumerate() {
                q[BASE_DOF + i] = *v;
            }
        }
        let world = WorldState::new(cfg.world.boxes.clone(), cfg.seed);
        let mapper = match cfg.mapper {
            MapperKind::Object => Mapper::Object(ObjectLibrary::new(cfg.mapping.clone())),
            MapperKind::Voxel => Mapper::Voxel(VoxelBaseline::new(cfg.mapping.voxel_size)),
            MapperKind::GroundTruth => Mapper::GroundTruth,
        };
        let field_center = Vector2::new(q[0], q[1]);
        let empty = build_local_edf(&[], &Vector3::new(q[0], q[1], 0.0), cfg.mapping.local_extent, cfg.mapping.theta_cutoff, cfg.mapping.voxel_size)?;
        let snapshot = MapSnapshot { version: 0, time: 0.0, objects: Arc::new(Vec::new()), edf: Arc::new(empty), theta_cutoff: cfg.mapping.theta_cutoff };
        let mut safety = cfg.safety.clone();
        if !cfg.mpc.self_collision {
            safety.self_collision_pairs = Some(Vec::new());
        }
        Ok(Self {
            cfg,
            model,
            world,
            changes: ChangeScript::new(cfg.world.changes.clone()),
            reached: BTreeSet::new(),
            robot: RobotState::at_rest(q),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            next_capture: vec![0.0; cfg.cameras.len()],
            queue: DelayQueue::default(),
            mapper,
            snapshot,
            field_center,
            map_dirty: cfg.mapper == MapperKind::GroundTruth,
            fresh_snapshot: false,
            controller: HtmpcController::new(model.clone(), cfg.mpc.clone(), Some(safety)),
            subtask: 0,
            active: Active::None,
            dwell: 0.0,
            log: RunLog::default(),
            solve_times: Vec::new(),
        })
    }

    fn log_state(&mut self, t: f64) {
        self.log.push(LogRecord::State { t, q: self.robot.q.as_slice().to_vec(), v: self.robot.v.as_slice().to_vec() });
        let (clearance, approach) = sample_metrics(&self.world, self.model, &self.robot.q, &self.robot.v);
        self.log.push(LogRecord::Metric { t, clearance, approach_speed: approach });
    }

    fn sense(&mut self, t: f64) {
        let frames = self.model.all_frames(&self.robot.q);
        for (c, spec) in self.cfg.cameras.iter().enumerate() {
            if t + 1e-9 < self.next_capture[c] {
                continue;
            }
            self.next_capture[c] += 1.0 / spec.rate_hz;
            let parent = self.model.frame_id(&spec.parent_frame).expect("validated camera frame");
            let pose = frames[parent.0].compose(&spec.mount());
            self.world.time = t;
            let frame = render_depth(&self.world, &pose, spec, &mut self.rng);
            self.queue.push(t + spec.latency, frame);
        }
    }

    fn update_map(&mut self, t: f64) -> Result<()> {
        let frames = self.queue.pop_ready(t + 1e-9);
        if !frames.is_empty() {
            let points: Vec<Vector3<f64>> = frames.iter().flat_map(|f| f.points()).collect();
            let segments = segment_cloud(&points, &self.cfg.mapping.segmentation);
            match &mut self.mapper {
                Mapper::Object(lib) => {
                    let events = lib.process_frame(&segments, &frames, t);
                    if !events.is_empty() {
                        self.map_dirty = true;
                    }
                    for e in events {
                        self.log.push(LogRecord::Map { t, event: e });
                    }
                    let objects = lib.objects.iter().map(|o| (o.id, o.expected_consistency())).collect();
                    self.log.push(LogRecord::Consistency { t, objects });
                }
                Mapper::Voxel(base) => {
                    let before = base.occupied.len();
                    base.update(&segments);
                    if base.occupied.len() != before {
                        self.map_dirty = true;
                    }
                }
                Mapper::GroundTruth => {}
            }
        }
        let here = Vector2::new(self.robot.q[0], self.robot.q[1]);
        let moved = (here - self.field_center).norm() > self.cfg.mapping.recenter_distance;
        if self.map_dirty || moved {
            self.publish(t, here)?;
        }
        Ok(())
    }

    fn publish(&mut self, t: f64, center: Vector2<f64>) -> Result<()> {
        let m = &self.cfg.mapping;
        let c3 = Vector3::new(center.x, center.y, 0.0);
        let (edf, objects) = match &self.mapper {
            Mapper::Object(lib) => (build_local_edf(&lib.surface_cells(), &c3, m.local_extent, m.theta_cutoff, m.voxel_size)?, lib.objects.clone()),
            Mapper::Voxel(base) => (base.local_edf(&c3, m.local_extent, m.theta_cutoff)?, Vec::new()),
            Mapper::GroundTruth => {
                let (lo, dims) = local_region(&c3, m.local_extent, m.voxel_size);
                let lower = cell_position(&lo, m.voxel_size);
                let upper = lower + Vector3::new((dims[0] - 1) as f64, (dims[1] - 1) as f64, (dims[2] - 1) as f64) * m.voxel_size;
                (ground_truth_edf(&self.world, lower, upper, m.voxel_size)?, Vec::new())
            }
        };
        let version = self.snapshot.version + 1;
        let ids = objects.iter().map(|o| o.id).collect();
        self.snapshot = MapSnapshot { version, time: t, objects: Arc::new(objects), edf: Arc::new(edf), theta_cutoff: m.theta_cutoff };
        self.field_center = center;
        self.map_dirty = false;
        self.fresh_snapshot = true;
        let occupied_cells = occupancy_from_snapshot(&self.snapshot, self.cfg.planner.band, self.inflation()).occupied_count();
        self.log.push(LogRecord::Snapshot { t, version, objects: ids, occupied_cells });
        Ok(())
    }

    fn inflation(&self) -> f64 {
        self.model.base_circumscribed_radius() + self.cfg.safety.delta_safe + self.cfg.planner.extra_inflation
    }

    fn base_xy(&self) -> Vector2<f64> {
        Vector2::new(self.robot.q[0], self.robot.q[1])
    }

    /// Planning grid covering the field, the robot and the remaining
    /// waypoints; space outside the published field is free.
    fn planning_grid(&self, waypoints: &[Vector2<f64>]) -> OccupancyGrid2D {
        let local = occupancy_from_snapshot(&self.snapshot, self.cfg.planner.band, self.inflation());
        let mut lo = local.origin;
        let mut hi = local.center([local.dims[0] as i64 - 1, local.dims[1] as i64 - 1]);
        for p in waypoints.iter().chain(std::iter::once(&self.base_xy())) {
            lo = lo.inf(&(p - Vector2::new(1.5, 1.5)));
            hi = hi.sup(&(p + Vector2::new(1.5, 1.5)));
        }
        local.embed(lo, hi)
    }

    fn start_subtask(&mut self, t: f64) -> Result<()> {
        self.dwell = 0.0;
        self.controller.reset();
        let Some(task) = self.cfg.tasks.script.get(self.subtask) else {
            self.active = Active::None;
            return Ok(());
        };
        self.log.push(LogRecord::Subtask {
            t,
            index: self.subtask,
            kind: task.kind().into(),
            name: task.name().map(String::from),
            stack: stack_names(&task.stack()),
            event: SubtaskEvent::Start,
        });
        let here = planar(&self.robot.q);
        self.active = match task {
            Subtask::Navigate { waypoints, .. } => {
                let goal = Vector2::from(*waypoints.last().expect("validated"));
                Active::Navigate(NavState {
                    plan: None,
                    reference: ReferenceTrajectory::constant(FrameId(0), here, t),
                    progress: t,
                    last_replan: f64::NEG_INFINITY,
                    grid: None,
                    goal,
                })
            }
            Subtask::Manipulate { target, orientation, dwell, base, .. } => {
                let rotation = orientation.map(|[r, p, y]| rpy(r, p, y)).unwrap_or_else(nalgebra::Matrix3::identity);
                let base = base.map(|[x, y, yaw]| Pose3::planar(x, y, yaw)).unwrap_or(here);
                Active::Manipulate(ManipState {
                    ee_goal: Pose3 { position: Vector3::from(*target), rotation },
                    orientation: orientation.is_some(),
                    base,
                    dwell: dwell.unwrap_or(self.cfg.tasks.tolerances.dwell),
                })
            }
        };
        Ok(())
    }

    fn replan(&mut self, t: f64) {
        let Some(Subtask::Navigate { waypoints, heading, .. }) = self.cfg.tasks.script.get(self.subtask) else {
            return;
        };
        let heading = *heading;
        let pc = &self.cfg.planner;
        let fresh = std::mem::take(&mut self.fresh_snapshot);
        let Active::Navigate(nav) = &self.active else {
            return;
        };
        let periodic = t - nav.last_replan >= pc.replan_period - 1e-9;
        // remaining waypoints: those not yet passed by the current plan
        let wps: Vec<Vector2<f64>> = waypoints.iter().map(|w| Vector2::from(*w)).collect();
        let remaining_wps = self.remaining_waypoints(&wps);
        let grid = self.planning_grid(&remaining_wps);
        let Active::Navigate(nav) = &self.active else {
            return;
        };
        let ref_xy = {
            let p = nav.reference.sample(nav.progress).0.position;
            Vector2::new(p.x, p.y)
        };
        let current_remaining = nav.plan.as_ref().map(|p| remaining_path(&p.points, &ref_xy));
        let corridor_changed = match (&nav.grid, &current_remaining) {
            (Some(old), Some(path)) if fresh => corridor_differs(old, &grid, path, pc.corridor),
            _ => false,
        };
        if nav.plan.is_some() && !corridor_changed && !periodic {
            return;
        }
        let start = self.base_xy();
        let version = self.snapshot.version;
        let result = plan_path(&grid, start, &remaining_wps, pc.snap_radius);
        let nav_done_plan = nav.plan.is_none();
        let v_base = Vector2::new(self.robot.v[0], self.robot.v[1]).norm();
        let yaw = self.robot.q[2];
        let progress = nav.progress;
        let sample_dt = pc.sample_dt;
        let lookahead = pc.heading_lookahead;
        let adopt_gain = pc.adopt_gain;
        let (v_des, a_ref) = (self.cfg.tasks.v_des, self.cfg.tasks.a_ref);
        let Active::Navigate(nav) = &mut self.active else {
            return;
        };
        nav.last_replan = t;
        match result {
            Err(e) => {
                log::debug!("t={t:.2}: planning failed: {e}");
                self.log.push(LogRecord::Planner { t, event: PlannerEvent::Failed, snapshot_version: version, length: None, points: Vec::new(), reason: e.to_string() });
            }
            Ok(plan) => {
                let blocked = current_remaining.as_ref().is_some_and(|path| path.windows(2).any(|w| !grid.segment_free(&w[0], &w[1])));
                let remaining_len = current_remaining.as_ref().map(|p| polyline_length(p) + (start - ref_xy).norm());
                let shorter = remaining_len.is_some_and(|r| plan.length() < r - adopt_gain);
                let reason = if nav_done_plan {
                    "initial"
                } else if blocked {
                    "current path blocked"
                } else if shorter {
                    "shorter path"
                } else {
                    ""
                };
                let points: Vec<[f64; 2]> = plan.points.iter().map(|p| [p.x, p.y]).collect();
                if reason.is_empty() {
                    self.log.push(LogRecord::Planner { t, event: PlannerEvent::Kept, snapshot_version: version, length: Some(plan.length()), points, reason: "current path still valid".into() });
                    nav.grid = Some(grid);
                    return;
                }
                match time_parameterize(FrameId(0), &plan.points, v_des, v_base, a_ref, heading, yaw, progress, sample_dt, lookahead) {
                    Ok(reference) => {
                        log::debug!("t={t:.2}: adopted {:.2} m path ({reason})", plan.length());
                        self.log.push(LogRecord::Planner { t, event: PlannerEvent::Adopted, snapshot_version: version, length: Some(plan.length()), points, reason: reason.into() });
                        nav.reference = reference;
                        nav.plan = Some(plan);
                        nav.grid = Some(grid);
                    }
                    Err(e) => self.log.push(LogRecord::Planner { t, event: PlannerEvent::Failed, snapshot_version: version, length: None, points, reason: e.to_string() }),
                }
            }
        }
    }

    /// Waypoints still ahead: drops leading waypoints already passed by the
    /// reference of the current plan.
    fn remaining_waypoints(&self, wps: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        let Active::Navigate(nav) = &self.active else {
            return wps.to_vec();
        };
        let Some(plan) = &nav.plan else {
            return wps.to_vec();
        };
        let p = nav.reference.sample(nav.progress).0.position;
        let ref_xy = Vector2::new(p.x, p.y);
        let rest = remaining_path(&plan.points, &ref_xy);
        // a waypoint is pending while it still lies on the remaining path
        let first_pending = wps
            .iter()
            .position(|w| rest.iter().any(|r| (r - w).norm() < 1e-9))
            .unwrap_or(wps.len() - 1);
        wps[first_pending..].to_vec()
    }

    fn build_stack(&self) -> (Vec<TrackingTask>, Vec<TaskKind>) {
        let cfg = self.cfg;
        let mpc = &cfg.mpc;
        let (dt, n) = (mpc.dt(), mpc.nodes);
        let w = &cfg.tasks.weights;
        let subtask = &cfg.tasks.script[self.subtask];
        let kinds = subtask.stack();
        let base_qe = [w.base_position, w.base_position, 0.0, 0.0, 0.0, w.base_yaw];
        let base_qd = [w.base_rate, w.base_rate, 0.0, 0.0, 0.0, w.base_rate];
        let ee = self.model.ee_frame();
        let tasks = kinds
            .iter()
            .map(|k| match (k, &self.active) {
                (TaskKind::Base, Active::Navigate(nav)) => nav.reference.task("base", nav.progress, dt, n, base_qe, base_qd),
                (TaskKind::Base, Active::Manipulate(m)) => TrackingTask::hold("base", FrameId(0), m.base, n, base_qe, base_qd),
                (TaskKind::EeLookahead, Active::Navigate(nav)) => {
                    let ee_now = self.model.frame_pose(&self.robot.q, ee).position;
                    let origin = nav.reference.sample(nav.progress).0.position;
                    let poses = (0..=n)
                        .map(|k| {
                            let tk = nav.progress + k as f64 * dt;
                            let base_k = nav.reference.sample(tk).0.position;
                            let eye = ee_now + (base_k - origin);
                            let mut target = nav.reference.sample(tk + cfg.tasks.preview).0.position;
                            target.z = cfg.tasks.lookahead_height;
                            let d = target - eye;
                            let horiz = d.x.hypot(d.y);
                            let yaw = if horiz > 0.05 { d.y.atan2(d.x) } else { self.robot.q[2] };
                            let pitch = (-d.z).atan2(horiz.max(1e-6)).clamp(-0.3, 1.2);
                            Pose3 { position: eye, rotation: rot_z(yaw) * rot_y(pitch) }
                        })
                        .collect();
                    let wl = w.lookahead;
                    TrackingTask {
                        name: "ee_lookahead".into(),
                        frame: ee,
                        poses,
                        twists: vec![(Vector3::zeros(), Vector3::zeros()); n + 1],
                        q_e: [0.0, 0.0, 0.0, wl, wl, wl],
                        q_edot: [0.0; 6],
                    }
                }
                (TaskKind::Ee, Active::Manipulate(m)) => {
                    let wo = if m.orientation { w.ee_orientation } else { 0.0 };
                    let wr = if m.orientation { w.ee_rate } else { 0.0 };
                    TrackingTask::hold("ee", ee, m.ee_goal, n, [w.ee_position, w.ee_position, w.ee_position, wo, wo, wo], [w.ee_rate, w.ee_rate, w.ee_rate, wr, wr, wr])
                }
                // validated configurations never combine these
                _ => TrackingTask::hold("base", FrameId(0), planar(&self.robot.q), n, base_qe, base_qd),
            })
            .collect();
        (tasks, kinds)
    }

    /// Advances the reference clock by the control period, slowed while the
    /// base lags the reference.
    fn advance_progress(&mut self, period: f64) {
        let [s0, s1] = self.cfg.tasks.progress_slowdown;
        let here = self.base_xy();
        if let Active::Navigate(nav) = &mut self.active {
            let p = nav.reference.sample(nav.progress).0.position;
            let err = (Vector2::new(p.x, p.y) - here).norm();
            let rate = ((s1 - err) / (s1 - s0)).clamp(0.0, 1.0);
            nav.progress += period * rate;
        }
    }

    /// True once the active subtask's terminal error has stayed within
    /// tolerance for its dwell time.
    fn subtask_done(&mut self, period: f64) -> bool {
        let tol = &self.cfg.tasks.tolerances;
        let (within, dwell) = match &self.active {
            Active::None => return true,
            Active::Navigate(nav) => {
                let finished = nav.plan.is_some() && nav.progress >= nav.reference.end_time();
                (finished && (self.base_xy() - nav.goal).norm() < tol.base_position, tol.dwell)
            }
            Active::Manipulate(m) => {
                let pose = self.model.frame_pose(&self.robot.q, self.model.ee_frame());
                let pos_ok = (pose.position - m.ee_goal.position).norm() < tol.ee_position;
                let rot_ok = !m.orientation || pose_error(&pose, &m.ee_goal).map(|e| e.fixed_rows::<3>(3).norm() < tol.orientation).unwrap_or(false);
                (pos_ok && rot_ok, m.dwell)
            }
        };
        if within {
            self.dwell += period;
        } else {
            self.dwell = 0.0;
        }
        within && self.dwell >= dwell - 1e-9
    }

    fn solve(&mut self, t: f64) -> Result<Solution> {
        let (stack, kinds) = self.build_stack();
        let x = self.robot.to_vector();
        let t0 = Instant::now();
        let sol = self.controller.solve(&stack, &x, Some(&self.snapshot.edf), 1)?;
        self.solve_times.push(t0.elapsed().as_secs_f64());
        let status = match &sol.status {
            SolveStatus::Optimal => "optimal".to_string(),
            SolveStatus::MaxIterations => "max_iterations".to_string(),
            SolveStatus::Emergency { task, reason } => format!("emergency(task {task}): {reason}"),
        };
        self.log.push(LogRecord::Solver {
            t,
            stack: stack_names(&kinds),
            status,
            qp_iterations: sol.qp_iterations,
            qp_solves: sol.qp_solves,
            kkt_max: sol.kkt_max,
            h_min: sol.h_min,
            state_slack: sol.slacks.state,
            safety_slack: sol.slacks.safety,
            out_of_bounds: sol.out_of_bounds,
            task_costs: sol.task_costs.clone(),
        });
        Ok(sol)
    }

    /// Integrates one control period; returns the collision clearance if
    /// the robot hit an obstacle.
    fn integrate(&mut self, sol: &Solution, t: f64) -> Result<Option<(f64, f64)>> {
        let h = self.cfg.control_period / self.cfg.substeps as f64;
        let acc = &self.model.acceleration_limits;
        self.log.push(LogRecord::Command { t, v: extract_command(sol, h, &self.cfg.mpc).as_slice().to_vec() });
        for j in 1..=self.cfg.substeps {
            let v_cmd = extract_command(sol, j as f64 * h, &self.cfg.mpc);
            let u = DVector::from_fn(self.model.dof(), |i, _| ((v_cmd[i] - self.robot.v[i]) / h).clamp(-acc[i], acc[i]));
            self.robot = crate::world::integrate_robot(&self.robot, &u, h, self.model)?.0;
            let c = whole_body_clearance(&self.world, self.model, &self.robot.q);
            if c <= 0.0 {
                return Ok(Some((t + j as f64 * h, c)));
            }
        }
        Ok(None)
    }
}

/// True when any cell within `corridor` of the path changed occupancy.
fn corridor_differs(old: &OccupancyGrid2D, new: &OccupancyGrid2D, path: &[Vector2<f64>], corridor: f64) -> bool {
    if path.is_empty() {
        return false;
    }
    for j in 0..new.dims[1] {
        for i in 0..new.dims[0] {
            let c = [i as i64, j as i64];
            let p = new.center(c);
            let near = if path.len() == 1 {
                (p - path[0]).norm() <= corridor
            } else {
                path.windows(2).any(|w| {
                    let d = w[1] - w[0];
                    let s = if d.norm_squared() > 0.0 { ((p - w[0]).dot(&d) / d.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
                    (w[0] + d * s - p).norm() <= corridor
                })
            };
            if near && new.is_occupied(c) != old.is_occupied(old.cell_of(&p)) {
                return true;
            }
        }
    }
    false
}

/// Runs one trial. Configuration problems are errors; runtime anomalies
/// end the run and are recorded in the log.
pub fn run_scenario(config: &ScenarioConfig, seed: u64) -> Result<RunOutcome> {
    let cfg = resolve(config, seed)?;
    let mut sim = Sim::new(&cfg)?;
    sim.log.push(LogRecord::Meta { t: 0.0, format_version: LOG_FORMAT_VERSION, seed, config: cfg.to_toml()? });
    sim.log.push(LogRecord::World { t: 0.0, boxes: sim.world.boxes.clone(), fired: Vec::new() });
    sim.log_state(0.0);
    let period = cfg.control_period;
    let steps = (cfg.duration / period + 1e-9).floor() as usize;
    let mut end = None;
    if cfg.tasks.script.is_empty() {
        end = Some((0.0, EndReason::Completed));
    } else {
        sim.start_subtask(0.0)?;
    }
    let mut k = 0;
    while end.is_none() {
        let t = k as f64 * period;
        if k >= steps {
            end = Some((t, EndReason::DurationCap));
            break;
        }
        let fired = sim.changes.advance(&mut sim.world, t, &sim.reached)?;
        if !fired.is_empty() {
            sim.log.push(LogRecord::World { t, boxes: sim.world.boxes.clone(), fired });
            if cfg.mapper == MapperKind::GroundTruth {
                sim.map_dirty = true;
            }
        }
        sim.sense(t);
        if let Err(e) = sim.update_map(t) {
            log::warn!("t={t:.2}: mapping failed: {e}");
            sim.log.push(LogRecord::Anomaly { t, message: format!("mapping: {e}") });
            end = Some((t, EndReason::Aborted));
            break;
        }
        if matches!(sim.active, Active::Navigate(_)) {
            sim.replan(t);
        }
        let sol = match sim.solve(t) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("t={t:.2}: controller failed: {e}");
                sim.log.push(LogRecord::Anomaly { t, message: format!("controller: {e}") });
                end = Some((t, EndReason::Aborted));
                break;
            }
        };
        if let SolveStatus::Emergency { reason, .. } = &sol.status {
            log::warn!("t={t:.2}: emergency braking: {reason}");
            sim.log.push(LogRecord::Anomaly { t, message: format!("emergency braking: {reason}") });
        }
        match sim.integrate(&sol, t)? {
            Some((tc, clearance)) => {
                sim.log_state(tc);
                log::warn!("t={tc:.2}: collision, clearance {clearance:.4} m");
                sim.log.push(LogRecord::Collision { t: tc, clearance });
                end = Some((tc, EndReason::Collision));
                break;
            }
            None => {}
        }
        let t_next = (k + 1) as f64 * period;
        sim.log_state(t_next);
        sim.advance_progress(period);
        // at most one transition per control period
        if sim.subtask_done(period) {
            let task = &cfg.tasks.script[sim.subtask];
            sim.log.push(LogRecord::Subtask {
                t: t_next,
                index: sim.subtask,
                kind: task.kind().into(),
                name: task.name().map(String::from),
                stack: stack_names(&task.stack()),
                event: SubtaskEvent::Complete,
            });
            if let Some(n) = task.name() {
                sim.reached.insert(n.to_string());
            }
            sim.subtask += 1;
            if sim.subtask >= cfg.tasks.script.len() {
                end = Some((t_next, EndReason::Completed));
            } else {
                sim.start_subtask(t_next)?;
            }
        }
        k += 1;
    }
    let (t_end, reason) = end.ok_or_else(|| Error::Contract("run ended without a reason".into()))?;
    sim.log.push(LogRecord::End { t: t_end, reason });
    let metrics = compute_metrics(&sim.log)?;
    Ok(RunOutcome { log: sim.log, metrics, solve_times: sim.solve_times, end: reason, map: sim.snapshot })
}
