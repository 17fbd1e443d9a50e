//! Map-driven reference generation: a 2-D occupancy slice of the distance
//! field, multi-waypoint A* with line-of-sight smoothing, and time
//! parameterized references for the base and end effector.

mod astar;
mod grid;
mod trajectory;

pub use astar::{astar, plan_path, smooth_path, PathPlan, Snap};
pub use grid::{occupancy_from_field, occupancy_from_snapshot, OccupancyGrid2D, PlannerConfig};
pub use trajectory::{time_parameterize, HeadingMode, ReferenceTrajectory};
