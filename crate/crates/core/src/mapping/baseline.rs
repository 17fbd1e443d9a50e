//! Static voxel-map baseline: observed surface cells stay occupied forever.

use std::collections::BTreeSet;

use nalgebra::Vector3;

use super::library::build_local_edf;
use super::segment::ObservationSegment;
use super::submap::{cell_of, Cell};
use crate::error::Result;
use crate::geometry::VoxelGrid;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoxelBaseline {
    pub voxel_size: f64,
    pub occupied: BTreeSet<Cell>,
}

impl VoxelBaseline {
    pub fn new(voxel_size: f64) -> Self {
        Self { voxel_size, occupied: BTreeSet::new() }
    }

    /// Marks every segment point's cell occupied. Nothing is ever cleared.
    pub fn update(&mut self, segments: &[ObservationSegment]) {
        for s in segments {
            self.occupied.extend(s.points.iter().map(|p| cell_of(p, self.voxel_size)));
        }
    }

    pub fn local_edf(&self, center: &Vector3<f64>, extent: [f64; 3], theta_cutoff: f64) -> Result<VoxelGrid> {
        let cells: Vec<Cell> = self.occupied.iter().copied().collect();
        build_local_edf(&cells, center, extent, theta_cutoff, self.voxel_size)
    }
}
