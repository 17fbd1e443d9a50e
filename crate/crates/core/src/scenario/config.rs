use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RobotModel, BASE_DOF};
use crate::mapping::MappingConfig;
use crate::mpc::MpcConfig;
use crate::planner::{HeadingMode, PlannerConfig};
use crate::safety::SafetySpec;
use crate::world::{validate_script, BoxObject, DepthCameraSpec, ScriptedChange, Trigger, WorldState};

use super::scene::SceneGenerator;

/// Source of the distance field handed to the controller and planner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapperKind {
    /// Object library with per-object consistency.
    #[default]
    Object,
    /// Accumulating voxel map that never clears.
    Voxel,
    /// Exact field of the current world.
    GroundTruth,
}

impl MapperKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MapperKind::Object => "object",
            MapperKind::Voxel => "voxel",
            MapperKind::GroundTruth => "ground_truth",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    pub model: RobotModel,
    /// Initial base pose `[x, y, yaw]`.
    pub initial_pose: [f64; 3],
    /// Initial arm joint angles; the model's tucked configuration if absent.
    pub initial_arm: Option<Vec<f64>>,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self { model: RobotModel::reference(), initial_pose: [0.0; 3], initial_arm: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub boxes: Vec<BoxObject>,
    /// Random scene appended to `boxes`, drawn from the run seed.
    pub generator: Option<SceneGenerator>,
    pub changes: Vec<ScriptedChange>,
}

/// Entries of a task stack, highest priority first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Base pose tracking.
    Base,
    /// End-effector camera pointing at a point ahead on the base path.
    EeLookahead,
    /// End-effector pose tracking.
    Ee,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Base => "base",
            TaskKind::EeLookahead => "ee_lookahead",
            TaskKind::Ee => "ee",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Subtask {
    Navigate {
        #[serde(default)]
        name: Option<String>,
        waypoints: Vec<[f64; 2]>,
        #[serde(default = "tangent")]
        heading: HeadingMode,
        #[serde(default)]
        stack: Option<Vec<TaskKind>>,
    },
    Manipulate {
        #[serde(default)]
        name: Option<String>,
        /// End-effector position goal (m).
        target: [f64; 3],
        /// Optional orientation goal as roll, pitch, yaw.
        #[serde(default)]
        orientation: Option<[f64; 3]>,
        /// Time the goal must be held within tolerance (s).
        #[serde(default)]
        dwell: Option<f64>,
        /// Base pose `[x, y, yaw]` held at lower priority; the pose at
        /// subtask start if absent.
        #[serde(default)]
        base: Option<[f64; 3]>,
        #[serde(default)]
        stack: Option<Vec<TaskKind>>,
    },
}

fn tangent() -> HeadingMode {
    HeadingMode::Tangent
}

impl Subtask {
    pub fn kind(&self) -> &'static str {
        match self {
            Subtask::Navigate { .. } => "navigate",
            Subtask::Manipulate { .. } => "manipulate",
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Subtask::Navigate { name, .. } | Subtask::Manipulate { name, .. } => name.as_deref(),
        }
    }

    pub fn stack(&self) -> Vec<TaskKind> {
        match self {
            Subtask::Navigate { stack, .. } => stack.clone().unwrap_or_else(|| vec![TaskKind::Base, TaskKind::EeLookahead]),
            Subtask::Manipulate { stack, .. } => stack.clone().unwrap_or_else(|| vec![TaskKind::Ee, TaskKind::Base]),
        }
    }
}

/// Success tolerances; a subtask completes once its error stays below
/// tolerance for the dwell time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub base_position: f64,
    pub ee_position: f64,
    pub orientation: f64,
    pub dwell: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { base_position: 0.05, ee_position: 0.02, orientation: 0.05, dwell: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskWeights {
    pub base_position: f64,
    pub base_yaw: f64,
    pub base_rate: f64,
    pub ee_position: f64,
    pub ee_orientation: f64,
    pub ee_rate: f64,
    pub lookahead: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self { base_position: 10.0, base_yaw: 2.0, base_rate: 1.0, ee_position: 10.0, ee_orientation: 1.0, ee_rate: 1.0, lookahead: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Desired base cruise speed (m/s).
    pub v_des: f64,
    /// Acceleration used for the reference ramps (m/s^2).
    pub a_ref: f64,
    /// Look-ahead time along the base path for the camera task (s).
    pub preview: f64,
    /// Height of the look-ahead point (m).
    pub lookahead_height: f64,
    /// Tracking error (m) above which reference progress starts to slow,
    /// and the error at which it stops.
    pub progress_slowdown: [f64; 2],
    pub tolerances: Tolerances,
    pub weights: TaskWeights,
    pub script: Vec<Subtask>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            v_des: 0.7,
            a_ref: 0.8,
            preview: 1.5,
            lookahead_height: 0.3,
            progress_slowdown: [0.3, 0.6],
            tolerances: Tolerances::default(),
            weights: TaskWeights::default(),
            script: Vec::new(),
        }
    }
}

/// A forward-facing base camera and a hand camera, both limited to 3 m.
pub fn default_cameras() -> Vec<DepthCameraSpec> {
    let camera = |name: &str, parent: &str, mount_position, mount_rpy, horizontal_fov, vertical_fov, width, height| DepthCameraSpec {
        name: name.into(),
        parent_frame: parent.into(),
        mount_position,
        mount_rpy,
        horizontal_fov,
        vertical_fov,
        width,
        height,
        max_range: 3.0,
        noise_sigma: 0.0,
        latency: 0.0,
        rate_hz: 10.0,
    };
    vec![
        camera("base", "base", [0.42, 0.0, 0.45], [0.0, 0.3, 0.0], 1.3, 1.0, 52, 40),
        camera("ee", "ee", [0.0; 3], [0.0; 3], 1.2, 0.9, 48, 36),
    ]
}

fn default_period() -> f64 {
    0.1
}

fn default_substeps() -> usize {
    10
}

/// One closed-loop experiment. See `docs/scenario-schema.md` for the file
/// format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Simulated time cap (s).
    pub duration: f64,
    #[serde(default = "default_period")]
    pub control_period: f64,
    /// Integration substeps per control period.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub robot: RobotConfig,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default = "default_cameras")]
    pub cameras: Vec<DepthCameraSpec>,
    #[serde(default)]
    pub mapper: MapperKind,
    #[serde(default)]
    pub mapping: MappingConfig,
    #[serde(default)]
    pub safety: SafetySpec,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub tasks: TaskConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::Config("duration must be finite and non-negative".into()));
        }
        if !(self.control_period > 0.0) || self.substeps == 0 {
            return Err(Error::Config("control_period must be positive and substeps at least 1".into()));
        }
        let model = &self.robot.model;
        model.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(arm) = &self.robot.initial_arm {
            if arm.len() != model.dof() - BASE_DOF {
                return Err(Error::Config(format!("robot.initial_arm needs {} entries", model.dof() - BASE_DOF)));
            }
        }
        let world = WorldState::new(self.world.boxes.clone(), self.seed);
        world.validate()?;
        if let Some(g) = &self.world.generator {
            g.validate()?;
        } else {
            validate_script(&world, &self.world.changes)?;
        }
        for c in &self.cameras {
            c.validate()?;
            model.frame_id(&c.parent_frame).map_err(|_| Error::Config(format!("camera {}: unknown parent frame `{}`", c.name, c.parent_frame)))?;
        }
        self.mapping.validate()?;
        self.safety.validate(model)?;
        self.mpc.validate()?;
        self.planner.validate()?;
        let t = &self.tasks;
        if !(t.v_des > 0.0) || !(t.a_ref > 0.0) || !(t.preview >= 0.0) {
            return Err(Error::Config("tasks.v_des and tasks.a_ref must be positive".into()));
        }
        if !(t.progress_slowdown[1] > t.progress_slowdown[0]) || t.progress_slowdown[0] < 0.0 {
            return Err(Error::Config("tasks.progress_slowdown must be increasing".into()));
        }
        let mut names = BTreeSet::new();
        for (i, s) in t.script.iter().enumerate() {
            if let Some(n) = s.name() {
                if !names.insert(n.to_string()) {
                    return Err(Error::Config(format!("subtask {i}: duplicate name `{n}`")));
                }
            }
            let stack = s.stack();
            if stack.is_empty() || stack.iter().collect::<BTreeSet<_>>().len() != stack.len() {
                return Err(Error::Config(format!("subtask {i}: stack must be non-empty without repeats")));
            }
            match s {
                Subtask::Navigate { waypoints, .. } => {
                    if waypoints.is_empty() || waypoints.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(Error::Config(format!("subtask {i}: navigate needs finite waypoints")));
                    }
                    if stack.contains(&TaskKind::Ee) {
                        return Err(Error::Config(format!("subtask {i}: navigate has no end-effector goal")));
                    }
                }
                Subtask::Manipulate { dwell, target, .. } => {
                    if dwell.is_some_and(|d| !(d >= 0.0)) || target.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Config(format!("subtask {i}: invalid target or dwell")));
                    }
                    if stack.contains(&TaskKind::EeLookahead) {
                        return Err(Error::Config(format!("subtask {i}: manipulate has no base path to look ahead on")));
                    }
                }
            }
        }
        for (i, c) in self.world.changes.iter().enumerate() {
            if let Trigger::Waypoint(n) = &c.trigger {
                if !names.contains(n) {
                    return Err(Error::Config(format!("change {i}: trigger names unknown subtask `{n}`")));
                }
            }
        }
        Ok(())
    }
}
