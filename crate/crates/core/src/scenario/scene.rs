//! Seeded random box scenes with a guaranteed free corridor.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{occupancy_from_field, plan_path};
use crate::world::{ground_truth_edf, BoxObject, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneGenerator {
    /// Box centers are drawn inside `[x_min, y_min, x_max, y_max]`.
    pub area: [f64; 4],
    /// Boxes on the ground.
    pub ground_boxes: usize,
    /// Boxes stacked on top of a ground box.
    pub stacked_boxes: usize,
    pub edge: f64,
    /// Gap kept between ground footprints (m).
    pub spacing: f64,
    /// Endpoints of the corridor that must stay free.
    pub start: [f64; 2],
    pub goal: [f64; 2],
    /// Boxes keep at least this distance from the corridor endpoints (m).
    pub endpoint_clearance: f64,
    /// Inflation used by the corridor check (m).
    pub corridor_inflation: f64,
    pub max_attempts: usize,
    /// First box id.
    pub first_id: u32,
}

impl Default for SceneGenerator {
    fn default() -> Self {
        Self {
            area: [0.0, -2.5, 5.0, 2.5],
            ground_boxes: 6,
            stacked_boxes: 2,
            edge: 0.6,
            spacing: 0.3,
            start: [-0.8, 0.0],
            goal: [5.8, 0.0],
            endpoint_clearance: 1.0,
            corridor_inflation: 0.5,
            max_attempts: 200,
            first_id: 1,
        }
    }
}

impl SceneGenerator {
    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.area;
        if !(x1 > x0) || !(y1 > y0) || !(self.edge > 0.0) || !(self.spacing >= 0.0) {
            return Err(Error::Config("generator area, edge or spacing invalid".into()));
        }
        if self.stacked_boxes > self.ground_boxes {
            return Err(Error::Config("generator: more stacked than ground boxes".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("generator.max_attempts must be positive".into()));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Option<Vec<BoxObject>> {
        let [x0, y0, x1, y1] = self.area;
        let half = 0.5 * self.edge;
        let min_sep = self.edge * std::f64::consts::SQRT_2 + self.spacing;
        let ends = [Vector2::from(self.start), Vector2::from(self.goal)];
        let mut boxes: Vec<BoxObject> = Vec::new();
        let mut tries = 0;
        while boxes.len() < self.ground_boxes {
            tries += 1;
            if tries > 1000 {
                return None;
            }
            let p = Vector2::new(rng.random_range(x0 + half..x1 - half), rng.random_range(y0 + half..y1 - half));
            let yaw = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            if ends.iter().any(|e| (p - e).norm() < self.endpoint_clearance + half * std::f64::consts::SQRT_2) {
                continue;
            }
            if boxes.iter().any(|b| (Vector2::new(b.x, b.y) - p).norm() < min_sep) {
                continue;
            }
            let id = self.first_id + boxes.len() as u32;
            boxes.push(BoxObject { id, x: p.x, y: p.y, yaw, size: [self.edge; 3], level: 0 });
        }
        let mut bases: Vec<usize> = (0..boxes.len()).collect();
        for k in 0..self.stacked_boxes {
            let pick = bases.swap_remove(rng.random_range(0..bases.len()));
            let under = boxes[pick].clone();
            let id = self.first_id + (self.ground_boxes + k) as u32;
            boxes.push(BoxObject { id, level: 1, ..under });
        }
        Some(boxes)
    }

    /// True when a base of the corridor inflation can travel from start to
    /// goal on the ground-truth occupancy.
    pub fn corridor_free(&self, boxes: &[BoxObject]) -> bool {
        let world = WorldState::new(boxes.to_vec(), 0);
        let [x0, y0, x1, y1] = self.area;
        let lo = Vector3::new(x0.min(self.start[0]).min(self.goal[0]) - 1.0, y0.min(self.start[1]).min(self.goal[1]) - 1.0, 0.0);
        let hi = Vector3::new(x1.max(self.start[0]).max(self.goal[0]) + 1.0, y1.max(self.start[1]).max(self.goal[1]) + 1.0, 0.8);
        let Ok(field) = ground_truth_edf(&world, lo, hi, 0.1) else {
            return false;
        };
        let grid = occupancy_from_field(&field, [0.1, 0.8], self.corridor_inflation);
        plan_path(&grid, Vector2::from(self.start), &[Vector2::from(self.goal)], 0.0).is_ok()
    }

    /// Deterministic scene for `seed`; rejects draws without a corridor.
    pub fn generate(&self, seed: u64) -> Result<Vec<BoxObject>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9_e5ee_d000_0000);
        for _ in 0..self.max_attempts {
            if let Some(boxes) = self.draw(&mut rng) {
                if self.corridor_free(&boxes) {
                    return Ok(boxes);
                }
            }
        }
        Err(Error::Config(format!("no scene with a free corridor after {} attempts (seed {seed})", self.max_attempts)))
    }
}
