//! Raycast depth cameras.
//!
//! Camera frame convention: `x` forward, `y` left, `z` up. Pixel `(u, v)`
//! maps to horizontal angle decreasing left to right and vertical angle
//! decreasing top to bottom, uniformly spaced in angle.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::WorldState;
use crate::error::{Error, Result};
use crate::geometry::{rpy, Pose3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthCameraSpec {
    pub name: String,
    pub parent_frame: String,
    /// Mount position in the parent frame.
    pub mount_position: [f64; 3],
    /// Mount orientation as roll, pitch, yaw in the parent frame.
    #[serde(default)]
    pub mount_rpy: [f64; 3],
    pub horizontal_fov: f64,
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
    pub max_range: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Delay between capture and delivery to the mapper (s).
    #[serde(default)]
    pub latency: f64,
    pub rate_hz: f64,
}

impl DepthCameraSpec {
    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if !(self.max_range > 0.0) {
            return Err(Error::Config(format!("camera {}: max_range must be > 0", self.name)));
        }
        if !fov_ok(self.horizontal_fov) || !fov_ok(self.vertical_fov) {
            return Err(Error::Config(format!("camera {}: fov must lie in (0, pi)", self.name)));
        }
        if !(self.latency >= 0.0) || !(self.noise_sigma >= 0.0) || !(self.rate_hz > 0.0) {
            return Err(Error::Config(format!("camera {}: latency/noise/rate out of range", self.name)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("camera {}: zero resolution", self.name)));
        }
        Ok(())
    }

    pub fn mount(&self) -> Pose3 {
        let [r, p, y] = self.mount_rpy;
        Pose3 { position: Vector3::from(self.mount_position), rotation: rpy(r, p, y) }
    }

    /// Unit ray direction in the camera frame.
    pub fn ray_direction(&self, u: usize, v: usize) -> Vector3<f64> {
        let ah = 0.5 * self.horizontal_fov * (1.0 - 2.0 * (u as f64 + 0.5) / self.width as f64);
        let av = 0.5 * self.vertical_fov * (1.0 - 2.0 * (v as f64 + 0.5) / self.height as f64);
        Vector3::new(1.0, ah.tan(), av.tan()).normalize()
    }

    /// Pixel whose ray is closest to the camera-frame point, if it lies in
    /// the field of view.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<(usize, usize)> {
        if p_cam.x <= 0.0 {
            return None;
        }
        let ah = p_cam.y.atan2(p_cam.x);
        let av = p_cam.z.atan2(p_cam.x);
        if ah.abs() > 0.5 * self.horizontal_fov || av.abs() > 0.5 * self.vertical_fov {
            return None;
        }
        let fu = (1.0 - ah / (0.5 * self.horizontal_fov)) * 0.5 * self.width as f64 - 0.5;
        let fv = (1.0 - av / (0.5 * self.vertical_fov)) * 0.5 * self.height as f64 - 0.5;
        let u = fu.round().clamp(0.0, (self.width - 1) as f64) as usize;
        let v = fv.round().clamp(0.0, (self.height - 1) as f64) as usize;
        Some((u, v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReturnKind {
    Object(u32),
    Ground,
    /// Nothing within max range: free-space evidence along the whole ray.
    Miss,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayReturn {
    /// World-frame unit direction.
    pub direction: Vector3<f64>,
    /// Measured range; `max_range` for misses.
    pub range: f64,
    pub kind: ReturnKind,
}

/// One rendered depth image in world coordinates.
#[derive(Clone, Debug)]
pub struct DepthFrame {
    pub time: f64,
    pub camera_pose: Pose3,
    pub spec: DepthCameraSpec,
    /// Row-major, `width * height`.
    pub returns: Vec<RayReturn>,
}

impl DepthFrame {
    pub fn origin(&self) -> Vector3<f64> {
        self.camera_pose.position
    }

    pub fn point(&self, r: &RayReturn) -> Vector3<f64> {
        self.camera_pose.position + r.direction * r.range
    }

    /// Hit points (object and ground) in the world frame.
    pub fn points(&self) -> Vec<Vector3<f64>> {
        self.returns
            .iter()
            .filter(|r| r.kind != ReturnKind::Miss)
            .map(|r| self.point(r))
            .collect()
    }

    pub fn miss_count(&self) -> usize {
        self.returns.iter().filter(|r| r.kind == ReturnKind::Miss).count()
    }

    pub fn ray_at(&self, u: usize, v: usize) -> &RayReturn {
        &self.returns[v * self.spec.width + u]
    }

    /// Range and pixel of a world point seen by this frame, if inside the
    /// field of view and within max range.
    pub fn view_of(&self, p: &Vector3<f64>) -> Option<(f64, &RayReturn)> {
        let local = self.camera_pose.inverse_transform_point(p);
        let dist = local.norm();
        if dist > self.spec.max_range {
            return None;
        }
        let (u, v) = self.spec.project(&local)?;
        Some((dist, self.ray_at(u, v)))
    }
}

/// Casts one ray per pixel against the boxes and the ground plane.
pub fn render_depth<R: Rng + ?Sized>(
    world: &WorldState,
    camera_pose: &Pose3,
    spec: &DepthCameraSpec,
    rng: &mut R,
) -> DepthFrame {
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma > 0"));
    let origin = camera_pose.position;
    let mut returns = Vec::with_capacity(spec.width * spec.height);
    for v in 0..spec.height {
        for u in 0..spec.width {
            let dir = camera_pose.rotation * spec.ray_direction(u, v);
            let mut best = f64::INFINITY;
            let mut kind = ReturnKind::Miss;
            for b in &world.boxes {
                if let Some(t) = b.ray_intersection(&origin, &dir) {
                    if t < best {
                        best = t;
                        kind = ReturnKind::Object(b.id);
                    }
                }
            }
            if dir.z < 0.0 {
                let t = (world.ground_z - origin.z) / dir.z;
                if t >= 0.0 && t < best {
                    best = t;
                    kind = ReturnKind::Ground;
                }
            }
            let mut range = best;
            if let (Some(n), true) = (&noise, kind != ReturnKind::Miss) {
                range += n.sample(rng);
            }
            if kind == ReturnKind::Miss || !(range <= spec.max_range) || range < 0.0 {
                returns.push(RayReturn { direction: dir, range: spec.max_range, kind: ReturnKind::Miss });
            } else {
                returns.push(RayReturn { direction: dir, range, kind });
            }
        }
    }
    DepthFrame { time: world.time, camera_pose: *camera_pose, spec: spec.clone(), returns }
}
