use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::rot_z;

/// Height-extruded box resting on the ground or on `level` boxes below it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxObject {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub yaw: f64,
    pub size: [f64; 3],
    /// Stack-height index: 0 on the ground, 1 on top of one box, ...
    #[serde(default)]
    pub level: u32,
}

impl BoxObject {
    pub fn cube(id: u32, x: f64, y: f64, edge: f64) -> Self {
        Self { id, x, y, yaw: 0.0, size: [edge; 3], level: 0 }
    }

    pub fn is_valid(&self) -> bool {
        self.size.iter().all(|s| *s > 0.0 && s.is_finite())
            && self.x.is_finite()
            && self.y.is_finite()
            && self.yaw.is_finite()
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.level as f64 * self.size[2] + 0.5 * self.size[2])
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::from(self.size) * 0.5
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rot_z(self.yaw)
    }

    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (p - self.center())
    }

    /// Signed distance to the box surface; negative inside.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        let local = self.to_local(p);
        let h = self.half_extents();
        let q = local.abs() - h;
        let outside = q.map(|v| v.max(0.0)).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }

    /// Closest point on the box surface.
    pub fn closest_surface_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let local = self.to_local(p);
        let h = self.half_extents();
        let mut c = Vector3::new(
            local.x.clamp(-h.x, h.x),
            local.y.clamp(-h.y, h.y),
            local.z.clamp(-h.z, h.z),
        );
        if c == local {
            // inside: project to the nearest face
            let gaps = [h.x - local.x.abs(), h.y - local.y.abs(), h.z - local.z.abs()];
            let a = (0..3).min_by(|&i, &j| gaps[i].total_cmp(&gaps[j])).unwrap_or(0);
            c[a] = h[a].copysign(if local[a] == 0.0 { 1.0 } else { local[a] });
        }
        self.center() + self.rotation() * c
    }

    /// Ray parameter of the first intersection with the box, if any.
    pub fn ray_intersection(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let r = self.rotation().transpose();
        let o = r * (origin - self.center());
        let d = r * dir;
        let h = self.half_extents();
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a].abs() > h[a] {
                    return None;
                }
                continue;
            }
            let t1 = (-h[a] - o[a]) / d[a];
            let t2 = (h[a] - o[a]) / d[a];
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            t_near = t_near.max(lo);
            t_far = t_far.min(hi);
            if t_near > t_far {
                return None;
            }
        }
        if t_far < 0.0 {
            return None;
        }
        Some(if t_near >= 0.0 { t_near } else { t_far })
    }

    /// Implicit surface residual: zero exactly on the boundary.
    pub fn surface_residual(&self, p: &Vector3<f64>) -> f64 {
        let local = self.to_local(p);
        let h = self.half_extents();
        (local.abs() - h).max()
    }

    /// Axis-aligned footprint corners of the (possibly rotated) box in xy.
    pub fn footprint_aabb(&self) -> ([f64; 2], [f64; 2]) {
        let h = self.half_extents();
        let (s, c) = self.yaw.sin_cos();
        let ex = (c * h.x).abs() + (s * h.y).abs();
        let ey = (s * h.x).abs() + (c * h.y).abs();
        ([self.x - ex, self.y - ey], [self.x + ex, self.y + ey])
    }
}
