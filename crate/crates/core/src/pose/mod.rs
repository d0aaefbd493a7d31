//! Rigid geometry: Kabsch alignment and 6D head pose from 2D landmarks.

mod head;
mod kabsch;
pub mod linalg;
mod template;

pub use head::{fit_head_pose, project_weak_perspective, CameraModel, FitOptions, HeadPose};
pub use kabsch::{kabsch, weighted_residual};
pub use linalg::{Mat3, Vec3};
pub use template::{head_normal, Template3D, HEAD_SEMI_AXES};

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use linalg::{norm, sub};

/// Rotation (proper, orthonormal) plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Mat3::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        linalg::add(self.rotation * p, self.translation)
    }

    /// Checks `RᵀR = I` and `det R = +1` within `tol`.
    pub fn check_rotation(&self, tol: f64) -> Result<()> {
        let r = &self.rotation;
        let orth = (r.transpose() * *r - Mat3::IDENTITY).frobenius();
        let det = r.det();
        if orth > tol || (det - 1.0).abs() > tol {
            return Err(Error::Numeric(format!(
                "rotation not proper: |RᵀR - I| = {orth:e}, det = {det}"
            )));
        }
        Ok(())
    }
}

/// Geodesic angle between two rotations, in degrees.
///
/// Equal to `acos((trace(R1ᵀR2) - 1) / 2)`; evaluated through `atan2` of the
/// sine and cosine parts so small angles keep full precision.
pub fn rotation_distance(r1: &Mat3, r2: &Mat3) -> f64 {
    let d = r1.transpose() * *r2;
    let cos = ((d.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let axis = [d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]];
    let sin = (norm(axis) / 2.0).min(1.0);
    sin.atan2(cos).to_degrees()
}

pub fn translation_distance(t1: &Vec3, t2: &Vec3) -> f64 {
    norm(sub(*t1, *t2))
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
}

/// Yaw about the vertical (y) axis, then pitch about x, then roll about z,
/// composed intrinsically: `R = Ry(yaw) · Rx(pitch) · Rz(roll)`. Radians.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn from_degrees(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            yaw: yaw.to_radians(),
            pitch: pitch.to_radians(),
            roll: roll.to_radians(),
        }
    }

    pub fn to_degrees(&self) -> [f64; 3] {
        [self.yaw.to_degrees(), self.pitch.to_degrees(), self.roll.to_degrees()]
    }
}

pub fn rotation_from_euler(e: &EulerAngles) -> Mat3 {
    rot_y(e.yaw) * rot_x(e.pitch) * rot_z(e.roll)
}

/// Inverse of `rotation_from_euler`. The flag is set near |pitch| = 90°,
/// where yaw and roll are no longer separable (roll is then reported as 0).
pub fn euler_from_rotation(r: &Mat3) -> (EulerAngles, bool) {
    let sp = (-r[(1, 2)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let cp = (r[(1, 0)].powi(2) + r[(1, 1)].powi(2)).sqrt();
    if cp < 1e-9 {
        // R = Ry(yaw ± roll) · Rx(±90°): fold everything into yaw
        let yaw = (-r[(2, 0)]).atan2(r[(0, 0)]);
        return (EulerAngles { yaw, pitch, roll: 0.0 }, true);
    }
    let yaw = r[(0, 2)].atan2(r[(2, 2)]);
    let roll = r[(1, 0)].atan2(r[(1, 1)]);
    (EulerAngles { yaw, pitch, roll }, cp < 1e-6)
}

/// Pose report rows: `sample_id,yaw_deg,pitch_deg,roll_deg,tx,ty,tz,residual,converged`.
pub fn format_pose_report(rows: &[(String, HeadPose)]) -> String {
    let mut out = String::from("sample_id,yaw_deg,pitch_deg,roll_deg,tx,ty,tz,residual,converged\n");
    for (id, pose) in rows {
        let (e, _) = euler_from_rotation(&pose.transform.rotation);
        let [y, p, r] = e.to_degrees();
        let t = pose.transform.translation;
        let _ = writeln!(
            out,
            "{id},{y:.6},{p:.6},{r:.6},{:.6},{:.6},{:.6},{:.9},{}",
            t[0], t[1], t[2], pose.residual_rms, pose.converged
        );
    }
    out
}

pub fn write_pose_report(rows: &[(String, HeadPose)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_pose_report(rows)).map_err(|e| Error::io(path, e))
}

/// Unit quaternion `(w, x, y, z)` of a rotation matrix.
pub fn quaternion_from_rotation(r: &Mat3) -> [f64; 4] {
    let tr = r.trace();
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (r[(2, 1)] - r[(1, 2)]) / s, (r[(0, 2)] - r[(2, 0)]) / s, (r[(1, 0)] - r[(0, 1)]) / s]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [(r[(2, 1)] - r[(1, 2)]) / s, 0.25 * s, (r[(0, 1)] + r[(1, 0)]) / s, (r[(0, 2)] + r[(2, 0)]) / s]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [(r[(0, 2)] - r[(2, 0)]) / s, (r[(0, 1)] + r[(1, 0)]) / s, 0.25 * s, (r[(1, 2)] + r[(2, 1)]) / s]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [(r[(1, 0)] - r[(0, 1)]) / s, (r[(0, 2)] + r[(2, 0)]) / s, (r[(1, 2)] + r[(2, 1)]) / s, 0.25 * s]
    };
    let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
    q.map(|v| v / n)
}
