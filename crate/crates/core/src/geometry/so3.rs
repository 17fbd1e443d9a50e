use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Orthonormality and determinant tolerance for rotation inputs.
pub const ROTATION_TOL: f64 = 1e-9;

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee_antisym(r: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Checks `RᵀR = I` and `det R = +1` within [`ROTATION_TOL`].
pub fn validate_rotation(r: &Matrix3<f64>) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entries".into()));
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::InvalidRotation(format!(
            "orthonormality error {ortho:.3e}, det {det:.12}"
        )));
    }
    Ok(())
}

/// Rodrigues exponential of an axis-angle vector.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Matrix logarithm of a rotation, returned as an axis-angle vector with
/// norm in `[0, π]`.
///
/// At exactly `π` the axis sign is ambiguous; the component with the largest
/// magnitude is made positive.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    validate_rotation(r)?;
    Ok(so3_log_unchecked(r))
}

pub(crate) fn so3_log_unchecked(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = vee_antisym(r);
    let sin_theta = 0.5 * v.norm();
    let cos_theta = (0.5 * (r.trace() - 1.0)).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if cos_theta >= 0.0 {
        // theta <= pi/2: the antisymmetric part is well conditioned
        let scale = if theta < 1e-6 {
            0.5 * (1.0 + theta * theta / 6.0)
        } else {
            0.5 * theta / sin_theta
        };
        return v * scale;
    }

    // theta > pi/2: recover the axis from the symmetric part, which is
    // (1 - cos θ) n nᵀ after removing cos θ I.
    let one_minus_cos = 1.0 - cos_theta;
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
    let i = (0..3)
        .max_by(|&a, &c| b[(a, a)].total_cmp(&b[(c, c)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = b.column(i).into_owned() / (b[(i, i)] * one_minus_cos).sqrt();
    axis /= axis.norm();
    let d = axis.dot(&v);
    if d < 0.0 || (d == 0.0 && largest_component(&axis) < 0.0) {
        axis = -axis;
    }
    axis * theta
}

fn largest_component(v: &Vector3<f64>) -> f64 {
    let mut best = v.x;
    for c in [v.y, v.z] {
        if c.abs() > best.abs() {
            best = c;
        }
    }
    best
}

/// Projects a near-rotation onto SO(3) via Gram-Schmidt on the columns.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let x = r.column(0).normalize();
    let mut y: Vector3<f64> = r.column(1).into_owned();
    y -= x * x.dot(&y);
    let y = y.normalize();
    let z = x.cross(&y);
    Matrix3::from_columns(&[x, y, z])
}

/// Roll-pitch-yaw (extrinsic x, y, z) rotation: `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn rpy(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    rot_z(yaw) * rot_y(pitch) * rot_x(roll)
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
        - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w += 2.0 * std::f64::consts::PI;
    }
    w
}
