//! Object library: association, consistency filtering, fusion and change
//! handling.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::assignment::hungarian;
use super::consistency::{bayes_update, expected_consistency, ClampFlags, ConsistencyParams, MeasurementPair};
use super::segment::{ObservationSegment, SegmentationConfig};
use super::submap::{cell_position, distance_field, Cell, Submap};
use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::world::{DepthFrame, ReturnKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    pub voxel_size: f64,
    pub segmentation: SegmentationConfig,
    /// Measurement noise of the geometric consistency (m).
    pub tau: f64,
    pub delta_max: f64,
    /// Objects whose expected consistency drops below this are removed.
    pub theta_change: f64,
    /// Surface band of an object distance field (m).
    pub theta_zero: f64,
    /// Truncation distance of the published field (m).
    pub theta_cutoff: f64,
    /// Minimum fraction of segment points inside a submap to measure it.
    pub f_min: f64,
    /// Fraction of visible object cells that must be seen through before
    /// negative evidence is applied.
    pub f_miss: f64,
    /// Association gate on centroid distance (m).
    pub gate: f64,
    /// Semantic label reported for every matched observation.
    pub semantic_label: bool,
    /// Submap padding in voxels.
    pub submap_padding: usize,
    /// Matched segments are fused only when the measured change is at most
    /// this (m); larger changes update the belief without corrupting the
    /// stored geometry.
    pub fuse_max_delta: f64,
    /// Range tolerance for free-space tests, in voxels.
    pub occlusion_margin: f64,
    /// Size of the published local field around the robot (m).
    pub local_extent: [f64; 3],
    /// The published field is re-centered once the robot moves this far
    /// from its center (m).
    pub recenter_distance: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            segmentation: SegmentationConfig::default(),
            tau: 0.05,
            delta_max: 1.0,
            theta_change: 0.3,
            theta_zero: 0.05,
            theta_cutoff: 1.5,
            f_min: 0.2,
            f_miss: 0.5,
            gate: 0.8,
            semantic_label: false,
            submap_padding: 4,
            fuse_max_delta: 0.15,
            occlusion_margin: 2.0,
            local_extent: [8.0, 8.0, 2.0],
            recenter_distance: 1.0,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("voxel_size", self.voxel_size),
            ("tau", self.tau),
            ("delta_max", self.delta_max),
            ("theta_cutoff", self.theta_cutoff),
            ("gate", self.gate),
            ("segmentation.cluster_radius", self.segmentation.cluster_radius),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("mapping.{name} must be positive")));
            }
        }
        for (name, v) in [("theta_change", self.theta_change), ("f_min", self.f_min), ("f_miss", self.f_miss)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("mapping.{name} must lie in [0, 1]")));
            }
        }
        if self.local_extent.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("mapping.local_extent must be positive".into()));
        }
        if !(self.recenter_distance >= 0.0) {
            return Err(Error::Config("mapping.recenter_distance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectEntry {
    pub id: u32,
    pub anchor_position: Vector3<f64>,
    pub anchor_heading: f64,
    pub submap: Submap,
    pub params: ConsistencyParams,
    pub observation_count: u32,
    pub last_seen: f64,
}

impl ObjectEntry {
    pub fn expected_consistency(&self) -> f64 {
        expected_consistency(&self.params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MapEvent {
    Added { id: u32, time: f64, centroid: [f64; 3] },
    Updated { id: u32, time: f64, delta: f64, negative: bool, fused: bool, expected_consistency: f64 },
    Removed { id: u32, time: f64, expected_consistency: f64 },
    Clamp { id: u32, time: f64, flags: ClampFlags },
}

/// Outcome of [`geometric_consistency`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Consistency {
    Measured(f64),
    NoOverlap,
}

/// Mean submap distance at the segment points that fall inside the submap.
pub fn geometric_consistency(object: &ObjectEntry, segment: &ObservationSegment, f_min: f64, delta_max: f64) -> Consistency {
    let grid = &object.submap.edf;
    let inside: Vec<f64> = segment
        .points
        .iter()
        .filter(|p| grid.contains(p))
        .map(|p| grid.trilinear_sample(p).value)
        .collect();
    if segment.points.is_empty() || (inside.len() as f64) < f_min * segment.points.len() as f64 || inside.is_empty() {
        return Consistency::NoOverlap;
    }
    let mean = inside.iter().sum::<f64>() / inside.len() as f64;
    Consistency::Measured(mean.clamp(-delta_max, delta_max))
}

/// Visibility of an object's cells across a set of depth frames.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VisibilityCounts {
    /// Rays passed beyond the cell: free-space evidence.
    pub seen_through: usize,
    /// Rays ended at the cell.
    pub consistent: usize,
    /// Rays ended before the cell.
    pub occluded: usize,
    pub cells: usize,
}

impl VisibilityCounts {
    pub fn visible(&self) -> usize {
        self.seen_through + self.consistent
    }

    pub fn free_fraction(&self) -> f64 {
        if self.visible() == 0 {
            0.0
        } else {
            self.seen_through as f64 / self.visible() as f64
        }
    }
}

pub fn visibility(object: &ObjectEntry, frames: &[DepthFrame], margin: f64) -> VisibilityCounts {
    let mut out = VisibilityCounts { cells: object.submap.occupied.len(), ..Default::default() };
    for c in &object.submap.occupied {
        let p = cell_position(c, object.submap.voxel_size);
        for f in frames {
            if let Some((dist, ray)) = f.view_of(&p) {
                if ray.kind == ReturnKind::Miss || ray.range > dist + margin {
                    out.seen_through += 1;
                } else if ray.range >= dist - margin {
                    out.consistent += 1;
                } else {
                    out.occluded += 1;
                }
            }
        }
    }
    out
}

/// Result of [`associate`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Association {
    /// `(segment index, object index)` pairs.
    pub matched: Vec<(usize, usize)>,
    pub unmatched_segments: Vec<usize>,
    /// Objects inside the sensing frustum without a match.
    pub unobserved_expected: Vec<usize>,
}

/// Optimal centroid-distance assignment with gating. Objects count as
/// expected when at least `f_min` of their cells are visible (not occluded)
/// in some frame.
pub fn associate(
    segments: &[ObservationSegment],
    objects: &[ObjectEntry],
    frames: &[DepthFrame],
    cfg: &MappingConfig,
) -> Association {
    let mut out = Association::default();
    let mut object_matched = vec![false; objects.len()];
    if objects.is_empty() {
        out.unmatched_segments = (0..segments.len()).collect();
    } else if !segments.is_empty() {
        let cost: Vec<Vec<f64>> = segments
            .iter()
            .map(|s| objects.iter().map(|o| (s.centroid - o.submap.centroid()).norm()).collect())
            .collect();
        let assignment = hungarian(&cost);
        for (si, a) in assignment.iter().enumerate() {
            match a {
                Some(oi) if cost[si][*oi] <= cfg.gate => {
                    out.matched.push((si, *oi));
                    object_matched[*oi] = true;
                }
                _ => out.unmatched_segments.push(si),
            }
        }
    }
    let margin = cfg.occlusion_margin * cfg.voxel_size;
    for (oi, o) in objects.iter().enumerate() {
        if object_matched[oi] || frames.is_empty() {
            continue;
        }
        let vis = visibility(o, frames, margin);
        if vis.cells > 0 && vis.visible() as f64 >= cfg.f_min * vis.cells as f64 {
            out.unobserved_expected.push(oi);
        }
    }
    out
}

/// Object-level semi-static map.
#[derive(Clone, Debug)]
pub struct ObjectLibrary {
    pub config: MappingConfig,
    pub objects: Vec<ObjectEntry>,
    next_id: u32,
}

impl ObjectLibrary {
    pub fn new(config: MappingConfig) -> Self {
        Self { config, objects: Vec::new(), next_id: 1 }
    }

    fn update(&mut self, oi: usize, m: MeasurementPair, time: f64, events: &mut Vec<MapEvent>) {
        let cfg = &self.config;
        let o = &mut self.objects[oi];
        let (params, flags) = bayes_update(&o.params, &m, cfg.tau, cfg.delta_max);
        o.params = params;
        if flags.any() {
            events.push(MapEvent::Clamp { id: o.id, time, flags });
        }
    }

    fn instantiate(&mut self, seg: &ObservationSegment, time: f64, events: &mut Vec<MapEvent>) {
        let Some(submap) = Submap::from_points(&seg.points, self.config.voxel_size, self.config.submap_padding) else {
            return;
        };
        let id = self.next_id;
        self.next_id += 1;
        events.push(MapEvent::Added { id, time, centroid: seg.centroid.into() });
        self.objects.push(ObjectEntry {
            id,
            anchor_position: seg.centroid,
            anchor_heading: 0.0,
            submap,
            params: ConsistencyParams::prior(self.config.delta_max),
            observation_count: 1,
            last_seen: time,
        });
    }

    /// Runs one mapping cycle over the segments extracted from `frames`.
    pub fn process_frame(&mut self, segments: &[ObservationSegment], frames: &[DepthFrame], time: f64) -> Vec<MapEvent> {
        let mut events = Vec::new();
        let assoc = associate(segments, &self.objects, frames, &self.config);
        let mut fresh: Vec<usize> = assoc.unmatched_segments.clone();
        let mut negative: Vec<usize> = assoc.unobserved_expected.clone();
        let (f_min, delta_max) = (self.config.f_min, self.config.delta_max);

        for &(si, oi) in &assoc.matched {
            let seg = &segments[si];
            match geometric_consistency(&self.objects[oi], seg, f_min, delta_max) {
                Consistency::NoOverlap => {
                    fresh.push(si);
                    negative.push(oi);
                }
                Consistency::Measured(delta) => {
                    let m = MeasurementPair { delta, s: self.config.semantic_label };
                    self.update(oi, m, time, &mut events);
                    let fused = delta.abs() <= self.config.fuse_max_delta;
                    let o = &mut self.objects[oi];
                    if fused {
                        o.submap.integrate(&seg.points);
                    }
                    o.observation_count += 1;
                    o.last_seen = time;
                    events.push(MapEvent::Updated {
                        id: o.id,
                        time,
                        delta,
                        negative: false,
                        fused,
                        expected_consistency: o.expected_consistency(),
                    });
                }
            }
        }

        let margin = self.config.occlusion_margin * self.config.voxel_size;
        negative.sort_unstable();
        negative.dedup();
        for oi in negative {
            let vis = visibility(&self.objects[oi], frames, margin);
            if vis.visible() > 0 && vis.free_fraction() >= self.config.f_miss {
                let m = MeasurementPair { delta: self.config.delta_max, s: false };
                self.update(oi, m, time, &mut events);
                let o = &self.objects[oi];
                events.push(MapEvent::Updated {
                    id: o.id,
                    time,
                    delta: self.config.delta_max,
                    negative: true,
                    fused: false,
                    expected_consistency: o.expected_consistency(),
                });
            }
        }

        fresh.sort_unstable();
        for si in fresh {
            self.instantiate(&segments[si], time, &mut events);
        }

        let theta = self.config.theta_change;
        self.objects.retain(|o| {
            let ev = o.expected_consistency();
            if ev < theta {
                events.push(MapEvent::Removed { id: o.id, time, expected_consistency: ev });
                false
            } else {
                true
            }
        });
        events
    }

    /// Surface cells of all objects.
    pub fn surface_cells(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> = self
            .objects
            .iter()
            .flat_map(|o| o.submap.surface_cells(self.config.theta_zero))
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }
}

/// Lattice box of the published field around `center`: centered in x and y,
/// starting at the ground in z.
pub fn local_region(center: &Vector3<f64>, extent: [f64; 3], voxel_size: f64) -> (Cell, [usize; 3]) {
    let dims = extent.map(|e| (e / voxel_size).ceil() as usize + 1);
    let lo = [
        ((center.x - 0.5 * extent[0]) / voxel_size).floor() as i64,
        ((center.y - 0.5 * extent[1]) / voxel_size).floor() as i64,
        0,
    ];
    (lo, dims)
}

/// Truncated distance to the union of the given surface cells over the
/// local region.
pub fn build_local_edf(
    surface: &[Cell],
    center: &Vector3<f64>,
    extent: [f64; 3],
    theta_cutoff: f64,
    voxel_size: f64,
) -> Result<VoxelGrid> {
    if extent.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Contract("local field extent must be positive".into()));
    }
    let (lo, dims) = local_region(center, extent, voxel_size);
    Ok(distance_field(surface, lo, dims, theta_cutoff, voxel_size))
}
