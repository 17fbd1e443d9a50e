use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense scalar field sampled at the nodes `origin + index * voxel_size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub origin: Vector3<f64>,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

/// Result of [`VoxelGrid::trilinear_sample`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: Vector3<f64>,
    /// The query fell outside the grid and was evaluated at the nearest
    /// boundary point.
    pub clamped: bool,
}

impl VoxelGrid {
    pub fn new(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if !(voxel_size > 0.0) {
            return Err(Error::Contract("voxel size must be positive".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Contract("grid dims must be positive".into()));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Contract(format!(
                "value count {} does not match dims {:?}",
                values.len(),
                dims
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("voxel values"));
        }
        Ok(Self { origin, voxel_size, dims, values })
    }

    pub fn filled(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3], value: f64) -> Self {
        Self {
            origin,
            voxel_size,
            dims,
            values: vec![value; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    /// Upper corner of the sampled region.
    pub fn max_corner(&self) -> Vector3<f64> {
        self.origin
            + Vector3::new(
                (self.dims[0] - 1) as f64,
                (self.dims[1] - 1) as f64,
                (self.dims[2] - 1) as f64,
            ) * self.voxel_size
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let hi = self.max_corner();
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= hi[a])
    }

    /// Trilinear interpolation with the analytic gradient of the containing
    /// cell. Queries outside the grid are clamped to the boundary and flagged.
    pub fn trilinear_sample(&self, p: &Vector3<f64>) -> FieldSample {
        let hi = self.max_corner();
        let mut q = *p;
        let mut clamped = false;
        for a in 0..3 {
            let c = q[a].clamp(self.origin[a], hi[a]);
            if c != q[a] || !q[a].is_finite() {
                clamped = true;
            }
            q[a] = if c.is_finite() { c } else { self.origin[a] };
        }
        let s = self.voxel_size;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            if self.dims[a] == 1 {
                base[a] = 0;
                frac[a] = 0.0;
                continue;
            }
            let x = (q[a] - self.origin[a]) / s;
            let i = (x.floor() as isize).clamp(0, self.dims[a] as isize - 2) as usize;
            base[a] = i;
            frac[a] = (x - i as f64).clamp(0.0, 1.0);
        }
        let step = |a: usize| usize::from(self.dims[a] > 1);
        let (i0, j0, k0) = (base[0], base[1], base[2]);
        let (i1, j1, k1) = (i0 + step(0), j0 + step(1), k0 + step(2));
        let c000 = self.get(i0, j0, k0);
        let c100 = self.get(i1, j0, k0);
        let c010 = self.get(i0, j1, k0);
        let c110 = self.get(i1, j1, k0);
        let c001 = self.get(i0, j0, k1);
        let c101 = self.get(i1, j0, k1);
        let c011 = self.get(i0, j1, k1);
        let c111 = self.get(i1, j1, k1);
        let [fx, fy, fz] = frac;
        let c00 = c000 + (c100 - c000) * fx;
        let c10 = c010 + (c110 - c010) * fx;
        let c01 = c001 + (c101 - c001) * fx;
        let c11 = c011 + (c111 - c011) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        let value = c0 + (c1 - c0) * fz;

        let dx0 = (c100 - c000) + ((c110 - c010) - (c100 - c000)) * fy;
        let dx1 = (c101 - c001) + ((c111 - c011) - (c101 - c001)) * fy;
        let dx = dx0 + (dx1 - dx0) * fz;
        let dy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * fz;
        let dz = c1 - c0;
        let mut gradient = Vector3::new(dx, dy, dz) / s;
        for a in 0..3 {
            if self.dims[a] == 1 {
                gradient[a] = 0.0;
            }
        }
        FieldSample { value, gradient, clamped }
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
