//! Rigid-body math, robot kinematics and voxel-grid sampling.

mod pose;
mod robot;
mod so3;
mod state;
mod voxel;

pub use pose::{pose_error, Pose3};
pub(crate) use pose::pose_error_unchecked;
pub use robot::{ArmLink, CollisionSphere, FrameId, RobotModel, BASE_DOF, BASE_FRAME, SHOULDER_FRAME};
pub use so3::{hat, orthonormalize, rot_x, rot_y, rot_z, rpy, so3_exp, so3_log, validate_rotation, wrap_angle, ROTATION_TOL};
pub use state::RobotState;
pub use voxel::{FieldSample, VoxelGrid};
