use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::astar::polyline_length;
use crate::error::{Error, Result};
use crate::geometry::{rot_z, so3_exp, so3_log, wrap_angle, FrameId, Pose3};
use crate::mpc::TrackingTask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "yaw")]
pub enum HeadingMode {
    /// Face along the path, looking a short distance ahead.
    Tangent,
    Fixed(f64),
}

/// Timed pose samples for one frame, held constant after the last sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub frame: FrameId,
    pub times: Vec<f64>,
    pub poses: Vec<Pose3>,
    /// World-frame `(linear, angular)` velocity at each sample.
    pub twists: Vec<(Vector3<f64>, Vector3<f64>)>,
}

impl ReferenceTrajectory {
    pub fn constant(frame: FrameId, pose: Pose3, t0: f64) -> Self {
        Self { frame, times: vec![t0], poses: vec![pose], twists: vec![(Vector3::zeros(), Vector3::zeros())] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.poses.len() || self.times.len() != self.twists.len() {
            return Err(Error::Contract("reference samples are empty or inconsistent".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Contract("reference timestamps must increase".into()));
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_pose(&self) -> Pose3 {
        *self.poses.last().unwrap()
    }

    /// Interpolated pose and twist at time `t`; clamped to the first and
    /// last samples outside the sampled window (zero twist after the end).
    pub fn sample(&self, t: f64) -> (Pose3, (Vector3<f64>, Vector3<f64>)) {
        let n = self.times.len();
        if t <= self.times[0] {
            return (self.poses[0], if n == 1 { (Vector3::zeros(), Vector3::zeros()) } else { self.twists[0] });
        }
        if t >= self.times[n - 1] {
            return (self.poses[n - 1], (Vector3::zeros(), Vector3::zeros()));
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        let (a, b) = (&self.poses[k], &self.poses[k + 1]);
        let position = a.position + (b.position - a.position) * s;
        let w = so3_log(&(a.rotation.transpose() * b.rotation)).unwrap_or_else(|_| Vector3::zeros());
        let rotation: Matrix3<f64> = a.rotation * so3_exp(&(w * s));
        let (la, aa) = self.twists[k];
        let (lb, ab) = self.twists[k + 1];
        (Pose3 { position, rotation }, (la + (lb - la) * s, aa + (ab - aa) * s))
    }

    /// Tracking task over a horizon of `nodes` intervals starting at `t0`.
    pub fn task(&self, name: &str, t0: f64, dt: f64, nodes: usize, q_e: [f64; 6], q_edot: [f64; 6]) -> TrackingTask {
        let (poses, twists) = (0..=nodes).map(|k| self.sample(t0 + k as f64 * dt)).unzip();
        TrackingTask { name: name.into(), frame: self.frame, poses, twists, q_e, q_edot }
    }
}

/// Speed profile along a path of given length: ramp from the initial speed
/// to the cruise speed, cruise, then brake to rest, all at `a`. When the
/// path is too short to reach cruise speed the profile is triangular; when
/// it is too short to stop from the initial speed, braking is stretched
/// over the whole path.
#[derive(Clone, Copy, Debug)]
struct Profile {
    v0: f64,
    peak: f64,
    accel: f64,
    decel: f64,
    t_up: f64,
    t_cruise: f64,
    t_down: f64,
    d_up: f64,
    length: f64,
}

impl Profile {
    fn new(length: f64, v0: f64, v: f64, a: f64) -> Self {
        let v0 = v0.clamp(0.0, v);
        let stop = v0 * v0 / (2.0 * a);
        if stop >= length {
            let decel = if length > 0.0 { v0 * v0 / (2.0 * length) } else { a };
            let t_down = if v0 > 0.0 { v0 / decel } else { 0.0 };
            return Self { v0, peak: v0, accel: a, decel, t_up: 0.0, t_cruise: 0.0, t_down, d_up: 0.0, length };
        }
        let d_full = (v * v - v0 * v0) / (2.0 * a) + v * v / (2.0 * a);
        let peak = if d_full > length { ((2.0 * a * length + v0 * v0) / 2.0).sqrt() } else { v };
        let d_up = (peak * peak - v0 * v0) / (2.0 * a);
        let d_down = peak * peak / (2.0 * a);
        Self {
            v0,
            peak,
            accel: a,
            decel: a,
            t_up: (peak - v0) / a,
            t_cruise: ((length - d_up - d_down) / peak).max(0.0),
            t_down: peak / a,
            d_up,
            length,
        }
    }

    fn duration(&self) -> f64 {
        self.t_up + self.t_cruise + self.t_down
    }

    /// Arc length and speed at time `t`.
    fn at(&self, t: f64) -> (f64, f64) {
        if t <= self.t_up {
            return (self.v0 * t + 0.5 * self.accel * t * t, self.v0 + self.accel * t);
        }
        let t = t - self.t_up;
        if t <= self.t_cruise {
            return (self.d_up + self.peak * t, self.peak);
        }
        let r = (self.t_down - (t - self.t_cruise)).max(0.0);
        (self.length - 0.5 * self.decel * r * r, self.decel * r)
    }
}

fn point_at(points: &[Vector2<f64>], cumulative: &[f64], s: f64) -> (Vector2<f64>, Vector2<f64>) {
    let s = s.clamp(0.0, *cumulative.last().unwrap());
    let k = cumulative.partition_point(|&c| c <= s).clamp(1, points.len() - 1) - 1;
    let seg = points[k + 1] - points[k];
    let len = seg.norm();
    let dir = if len > 0.0 { seg / len } else { Vector2::zeros() };
    (points[k] + dir * (s - cumulative[k]), dir)
}

/// Constant-speed arc-length parameterization of a base path with
/// acceleration-limited ramps, sampled every `sample_dt` from `t0`. The
/// profile starts at speed `v_start` (clamped to `[0, v_des]`).
#[allow(clippy::too_many_arguments)]
pub fn time_parameterize(
    frame: FrameId,
    polyline: &[Vector2<f64>],
    v_des: f64,
    v_start: f64,
    a_max: f64,
    heading: HeadingMode,
    initial_yaw: f64,
    t0: f64,
    sample_dt: f64,
    heading_lookahead: f64,
) -> Result<ReferenceTrajectory> {
    if !(v_des > 0.0) || !(a_max > 0.0) || !(sample_dt > 0.0) {
        return Err(Error::Contract("speed, acceleration and sample spacing must be positive".into()));
    }
    if polyline.is_empty() {
        return Err(Error::Contract("path has no points".into()));
    }
    let mut points: Vec<Vector2<f64>> = vec![polyline[0]];
    for p in &polyline[1..] {
        if (p - points.last().unwrap()).norm() > 1e-9 {
            points.push(*p);
        }
    }
    let length = polyline_length(&points);
    let fixed_yaw = match heading {
        HeadingMode::Fixed(y) => y,
        HeadingMode::Tangent => initial_yaw,
    };
    if points.len() == 1 {
        return Ok(ReferenceTrajectory::constant(frame, Pose3::planar(points[0].x, points[0].y, fixed_yaw), t0));
    }
    let mut cumulative = vec![0.0];
    for w in points.windows(2) {
        cumulative.push(cumulative.last().unwrap() + (w[1] - w[0]).norm());
    }
    let profile = Profile::new(length, v_start, v_des, a_max);
    let duration = profile.duration();
    let steps = (duration / sample_dt).ceil().max(1.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut positions = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps + 1);
    let mut yaws = Vec::with_capacity(steps + 1);
    let mut yaw_prev = initial_yaw;
    for k in 0..=steps {
        let t = (k as f64 * sample_dt).min(duration);
        let (s, speed) = profile.at(t);
        let (p, dir) = point_at(&points, &cumulative, s);
        let yaw = match heading {
            HeadingMode::Fixed(y) => y,
            HeadingMode::Tangent => {
                let (ahead, _) = point_at(&points, &cumulative, s + heading_lookahead);
                let chord = if (ahead - p).norm() > 1e-6 { ahead - p } else { dir };
                if chord.norm() > 1e-9 {
                    // keep the yaw sequence continuous
                    yaw_prev + wrap_angle(chord.y.atan2(chord.x) - yaw_prev)
                } else {
                    yaw_prev
                }
            }
        };
        yaw_prev = yaw;
        times.push(t0 + t);
        positions.push(p);
        velocities.push(dir * speed.min(v_des));
        yaws.push(yaw);
        if t >= duration {
            break;
        }
    }
    let n = times.len();
    let mut poses = Vec::with_capacity(n);
    let mut twists = Vec::with_capacity(n);
    for k in 0..n {
        let yaw_rate = if n > 1 {
            let (a, b) = if k + 1 < n { (k, k + 1) } else { (k - 1, k) };
            (yaws[b] - yaws[a]) / (times[b] - times[a])
        } else {
            0.0
        };
        let last = k + 1 == n;
        poses.push(Pose3 { position: Vector3::new(positions[k].x, positions[k].y, 0.0), rotation: rot_z(yaws[k]) });
        let v = if last { Vector2::zeros() } else { velocities[k] };
        twists.push((Vector3::new(v.x, v.y, 0.0), Vector3::new(0.0, 0.0, if last { 0.0 } else { yaw_rate })));
    }
    Ok(ReferenceTrajectory { frame, times, poses, twists })
}
