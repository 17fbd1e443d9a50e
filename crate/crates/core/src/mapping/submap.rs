//! World-aligned voxel lattices: per-object occupancy submaps and distance
//! fields built from sets of lattice cells.

use std::collections::BTreeSet;

use nalgebra::Vector3;

use super::edt::squared_edt;
use crate::geometry::VoxelGrid;

/// Integer lattice coordinate; node position is `index * voxel_size`.
pub type Cell = [i64; 3];

pub fn cell_of(p: &Vector3<f64>, voxel_size: f64) -> Cell {
    [0, 1, 2].map(|a| (p[a] / voxel_size).round() as i64)
}

pub fn cell_position(c: &Cell, voxel_size: f64) -> Vector3<f64> {
    Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) * voxel_size
}

/// Distance field over the lattice box `[lo, lo + dims)` to the nearest of
/// `surface`, truncated at `cutoff`. Cells farther than `cutoff` outside the
/// box are ignored since they cannot affect the truncated values; with an
/// infinite cutoff only cells inside the box are used.
pub fn distance_field<'a, I>(surface: I, lo: Cell, dims: [usize; 3], cutoff: f64, voxel_size: f64) -> VoxelGrid
where
    I: IntoIterator<Item = &'a Cell>,
{
    let pad = if cutoff.is_finite() { (cutoff / voxel_size).ceil() as i64 + 1 } else { 0 };
    let plo = lo.map(|v| v - pad);
    let pdims = [0, 1, 2].map(|a| dims[a] + 2 * pad as usize);
    let mut seeds = vec![false; pdims[0] * pdims[1] * pdims[2]];
    let mut any = false;
    for c in surface {
        let rel = [0, 1, 2].map(|a| c[a] - plo[a]);
        if (0..3).all(|a| rel[a] >= 0 && (rel[a] as usize) < pdims[a]) {
            seeds[rel[0] as usize + pdims[0] * (rel[1] as usize + pdims[1] * rel[2] as usize)] = true;
            any = true;
        }
    }
    let origin = cell_position(&lo, voxel_size);
    if !any {
        return VoxelGrid::filled(origin, voxel_size, dims, cutoff);
    }
    let d2 = squared_edt(pdims, &seeds);
    let p = pad as usize;
    let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let v = d2[(i + p) + pdims[0] * ((j + p) + pdims[1] * (k + p))];
                values.push((v.sqrt() * voxel_size).min(cutoff));
            }
        }
    }
    VoxelGrid { origin, voxel_size, dims, values }
}

/// Occupancy of one object on the world lattice plus its (untruncated)
/// distance field over a padded bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct Submap {
    pub voxel_size: f64,
    pub padding: usize,
    pub occupied: BTreeSet<Cell>,
    pub edf: VoxelGrid,
}

impl Submap {
    /// Builds a submap from points; `None` when there are no points.
    pub fn from_points(points: &[Vector3<f64>], voxel_size: f64, padding: usize) -> Option<Self> {
        let occupied: BTreeSet<Cell> = points.iter().map(|p| cell_of(p, voxel_size)).collect();
        if occupied.is_empty() {
            return None;
        }
        let edf = Self::field(&occupied, voxel_size, padding);
        Some(Self { voxel_size, padding, occupied, edf })
    }

    fn bounds(occupied: &BTreeSet<Cell>, padding: usize) -> (Cell, [usize; 3]) {
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for c in occupied {
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        let p = padding as i64;
        let lo = lo.map(|v| v - p);
        let dims = [0, 1, 2].map(|a| (hi[a] + p - lo[a] + 1) as usize);
        (lo, dims)
    }

    fn field(occupied: &BTreeSet<Cell>, voxel_size: f64, padding: usize) -> VoxelGrid {
        let (lo, dims) = Self::bounds(occupied, padding);
        distance_field(occupied, lo, dims, f64::INFINITY, voxel_size)
    }

    /// Adds the cells hit by `points` and recomputes the distance field;
    /// bounds grow as needed.
    pub fn integrate(&mut self, points: &[Vector3<f64>]) {
        let before = self.occupied.len();
        self.occupied.extend(points.iter().map(|p| cell_of(p, self.voxel_size)));
        if self.occupied.len() != before {
            self.edf = Self::field(&self.occupied, self.voxel_size, self.padding);
        }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum = self.occupied.iter().fold(Vector3::zeros(), |a, c| a + cell_position(c, self.voxel_size));
        sum / self.occupied.len() as f64
    }

    /// Cells whose distance value is at most `theta_zero`.
    pub fn surface_cells(&self, theta_zero: f64) -> Vec<Cell> {
        let lo = cell_of(&self.edf.origin, self.voxel_size);
        self.edf
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v <= theta_zero)
            .map(|(idx, _)| {
                let [i, j, k] = self.edf.unravel(idx);
                [lo[0] + i as i64, lo[1] + j as i64, lo[2] + k as i64]
            })
            .collect()
    }
}
