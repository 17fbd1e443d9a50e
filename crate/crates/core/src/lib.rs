//! Perceptive hierarchical-task MPC for mobile manipulation in semi-static
//! environments.
//!
//! The crate closes a simulated perception-action loop: a box world with
//! scripted changes is observed by raycast depth cameras, an object-level
//! mapper tracks per-object consistency and publishes truncated distance
//! fields, and a lexicographic MPC with barrier-function safety rows drives a
//! mobile manipulator through ordered navigation and manipulation subtasks.

pub mod error;
pub mod geometry;
pub mod mapping;
pub mod mpc;
pub mod planner;
pub mod safety;
pub mod scenario;
pub mod world;

pub use error::{Error, Result};
