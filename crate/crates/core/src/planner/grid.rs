use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::mapping::MapSnapshot;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Height band `[lo, hi]` (m) of the field that counts as an obstacle.
    pub band: [f64; 2],
    /// Clearance added to the base radius when inflating obstacles.
    pub extra_inflation: f64,
    /// Occupied start or waypoint cells are moved to the nearest free cell
    /// within this radius (m).
    pub snap_radius: f64,
    /// Periodic replanning interval (s).
    pub replan_period: f64,
    /// Half-width (m) of the corridor around the current path watched for
    /// occupancy changes.
    pub corridor: f64,
    /// A replanned path replaces the current one only when the current path
    /// is blocked or the new path is shorter by this much (m).
    pub adopt_gain: f64,
    /// Spacing of reference samples (s).
    pub sample_dt: f64,
    /// Heading reference looks this far ahead along the path (m).
    pub heading_lookahead: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            band: [0.1, 1.6],
            extra_inflation: 0.1,
            snap_radius: 0.5,
            replan_period: 1.0,
            corridor: 0.6,
            adopt_gain: 0.2,
            sample_dt: 0.05,
            heading_lookahead: 0.3,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.band[1] > self.band[0]) {
            return Err(Error::Config("planner.band must be increasing".into()));
        }
        for (name, v) in [
            ("extra_inflation", self.extra_inflation),
            ("snap_radius", self.snap_radius),
            ("corridor", self.corridor),
            ("adopt_gain", self.adopt_gain),
            ("heading_lookahead", self.heading_lookahead),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("planner.{name} must be non-negative")));
            }
        }
        if !(self.replan_period > 0.0) || !(self.sample_dt > 0.0) {
            return Err(Error::Config("planner periods must be positive".into()));
        }
        Ok(())
    }
}

/// Boolean occupancy on the xy lattice of a distance field. Cell `(i, j)` is
/// centered at `origin + (i, j) * cell`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid2D {
    pub origin: Vector2<f64>,
    pub cell: f64,
    pub dims: [usize; 2],
    pub occupied: Vec<bool>,
    /// Snapshot version the grid was derived from.
    pub source_version: u64,
}

impl OccupancyGrid2D {
    pub fn free(origin: Vector2<f64>, cell: f64, dims: [usize; 2]) -> Self {
        Self { origin, cell, dims, occupied: vec![false; dims[0] * dims[1]], source_version: 0 }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.dims[0] * j
    }

    pub fn in_bounds(&self, c: [i64; 2]) -> bool {
        c[0] >= 0 && c[1] >= 0 && (c[0] as usize) < self.dims[0] && (c[1] as usize) < self.dims[1]
    }

    /// Out-of-bounds cells count as occupied.
    pub fn is_occupied(&self, c: [i64; 2]) -> bool {
        !self.in_bounds(c) || self.occupied[self.index(c[0] as usize, c[1] as usize)]
    }

    pub fn set(&mut self, c: [usize; 2], value: bool) {
        let idx = self.index(c[0], c[1]);
        self.occupied[idx] = value;
    }

    pub fn cell_of(&self, p: &Vector2<f64>) -> [i64; 2] {
        let r = (p - self.origin) / self.cell;
        [r.x.round() as i64, r.y.round() as i64]
    }

    pub fn center(&self, c: [i64; 2]) -> Vector2<f64> {
        self.origin + Vector2::new(c[0] as f64, c[1] as f64) * self.cell
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    /// Cells whose square touches the segment, found by walking the grid
    /// lines the segment crosses. Passing exactly through a corner reports
    /// both side cells.
    pub fn traversed_cells(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> Vec<[i64; 2]> {
        let ua = (a - self.origin) / self.cell + Vector2::new(0.5, 0.5);
        let ub = (b - self.origin) / self.cell + Vector2::new(0.5, 0.5);
        let mut c = [ua.x.floor() as i64, ua.y.floor() as i64];
        let end = [ub.x.floor() as i64, ub.y.floor() as i64];
        let d = ub - ua;
        let step = [d.x.signum() as i64, d.y.signum() as i64];
        let next = |u: f64, c: i64, s: i64| if s > 0 { (c + 1) as f64 - u } else { u - c as f64 };
        let t_delta = [if d.x != 0.0 { 1.0 / d.x.abs() } else { f64::INFINITY }, if d.y != 0.0 { 1.0 / d.y.abs() } else { f64::INFINITY }];
        let mut t_max = [
            if d.x != 0.0 { next(ua.x, c[0], step[0]) * t_delta[0] } else { f64::INFINITY },
            if d.y != 0.0 { next(ua.y, c[1], step[1]) * t_delta[1] } else { f64::INFINITY },
        ];
        let mut out = vec![c];
        let limit = (end[0] - c[0]).abs() + (end[1] - c[1]).abs() + 2;
        for _ in 0..limit {
            if c == end {
                break;
            }
            let tx = t_max[0];
            let ty = t_max[1];
            if tx.min(ty) > 1.0 {
                break;
            }
            if (tx - ty).abs() < 1e-12 {
                out.push([c[0] + step[0], c[1]]);
                out.push([c[0], c[1] + step[1]]);
                c = [c[0] + step[0], c[1] + step[1]];
                t_max[0] += t_delta[0];
                t_max[1] += t_delta[1];
            } else if tx < ty {
                c[0] += step[0];
                t_max[0] += t_delta[0];
            } else {
                c[1] += step[1];
                t_max[1] += t_delta[1];
            }
            out.push(c);
        }
        out
    }

    /// Grid on the same lattice covering `[lo, hi]`; cells outside `self`
    /// are free.
    pub fn embed(&self, lo: Vector2<f64>, hi: Vector2<f64>) -> OccupancyGrid2D {
        let a = self.cell_of(&lo);
        let b = self.cell_of(&hi);
        let (a, b) = ([a[0].min(b[0]), a[1].min(b[1])], [a[0].max(b[0]), a[1].max(b[1])]);
        let dims = [(b[0] - a[0] + 1) as usize, (b[1] - a[1] + 1) as usize];
        let mut out = OccupancyGrid2D::free(self.center(a), self.cell, dims);
        out.source_version = self.source_version;
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let c = [a[0] + i as i64, a[1] + j as i64];
                if self.in_bounds(c) && self.is_occupied(c) {
                    out.set([i, j], true);
                }
            }
        }
        out
    }

    pub fn segment_free(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
        self.traversed_cells(a, b).iter().all(|c| !self.is_occupied(*c))
    }
}

/// Cell `(i, j)` is occupied iff the minimum field value over the nodes in
/// the height band is below `inflation`, or below one cell size when the
/// inflation is smaller than that (surface nodes themselves).
pub fn occupancy_from_field(field: &VoxelGrid, band: [f64; 2], inflation: f64) -> OccupancyGrid2D {
    let [nx, ny, nz] = field.dims;
    let mut grid = OccupancyGrid2D::free(Vector2::new(field.origin.x, field.origin.y), field.voxel_size, [nx, ny]);
    let threshold = inflation.max(field.voxel_size);
    let ks: Vec<usize> = (0..nz)
        .filter(|&k| {
            let z = field.origin.z + k as f64 * field.voxel_size;
            z >= band[0] - 1e-9 && z <= band[1] + 1e-9
        })
        .collect();
    for j in 0..ny {
        for i in 0..nx {
            let min = ks.iter().map(|&k| field.get(i, j, k)).fold(f64::INFINITY, f64::min);
            if min < threshold {
                grid.set([i, j], true);
            }
        }
    }
    grid
}

pub fn occupancy_from_snapshot(snapshot: &MapSnapshot, band: [f64; 2], inflation: f64) -> OccupancyGrid2D {
    let mut grid = occupancy_from_field(&snapshot.edf, band, inflation);
    grid.source_version = snapshot.version;
    grid
}
