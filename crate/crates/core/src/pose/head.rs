use serde::{Deserialize, Serialize};

use super::linalg::{add, cross, nearest_rotation, norm, rotation_from_axis_angle, scale, solve_dense, sub, Mat3, Vec3};
use super::{RigidTransform, Template3D};
use crate::error::{Error, Result};
use crate::types::{LandmarkSet, Point2};

/// Camera used to interpret the scale of a scaled-orthographic fit.
///
/// With a focal length the model is weak perspective: image =
/// `principal + (focal / tz) · (R·X + t)_xy`, so the full 3D translation is
/// recoverable. Without one, `tz` is reported as 0 and `tx, ty` are the image
/// offset divided by the fitted scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub focal_px: Option<f64>,
    pub principal: (f64, f64),
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            focal_px: None,
            principal: (0.0, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop once a step changes the parameters by less than this.
    pub step_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadPose {
    pub transform: RigidTransform,
    /// Pixels per template unit.
    pub scale: f64,
    /// Weighted RMS reprojection error in pixels.
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
    /// RMS residual after initialization and after every accepted iteration.
    pub residual_history: Vec<f64>,
}

/// Projects template points under a weak-perspective camera with a focal length.
pub fn project_weak_perspective(template: &Template3D, pose: &RigidTransform, focal_px: f64, principal: (f64, f64)) -> LandmarkSet {
    let s = focal_px / pose.translation[2];
    LandmarkSet {
        points: template
            .points
            .iter()
            .map(|x| {
                let c = pose.apply(*x);
                Point2::new(principal.0 + s * c[0], principal.1 + s * c[1])
            })
            .collect(),
    }
}

#[derive(Clone, Copy)]
struct Params {
    rotation: Mat3,
    scale: f64,
    offset: (f64, f64),
}

fn cost(params: &Params, template: &[Vec3], obs: &[Point2], w: &[f64]) -> f64 {
    template
        .iter()
        .zip(obs)
        .zip(w)
        .map(|((x, p), wi)| {
            let y = params.rotation * *x;
            let ex = params.scale * y[0] + params.offset.0 - p.x;
            let ey = params.scale * y[1] + params.offset.1 - p.y;
            wi * (ex * ex + ey * ey)
        })
        .sum()
}

/// Linear scaled-orthographic initialization: fit a 2×3 affine map, then
/// project its rows onto the nearest rotation.
fn initialize(template: &[Vec3], obs: &[Point2], w: &[f64], total: f64) -> Result<Params> {
    let xc = scale(template.iter().zip(w).fold([0.0; 3], |a, (x, wi)| add(a, scale(*x, *wi))), 1.0 / total);
    let pc = obs
        .iter()
        .zip(w)
        .fold((0.0, 0.0), |a, (p, wi)| (a.0 + wi * p.x, a.1 + wi * p.y));
    let pc = (pc.0 / total, pc.1 / total);

    let mut m = Mat3::ZERO;
    let mut bx = [0.0; 3];
    let mut by = [0.0; 3];
    for ((x, p), &wi) in template.iter().zip(obs).zip(w) {
        let d = sub(*x, xc);
        m = m + Mat3::outer(scale(d, wi), d);
        bx = add(bx, scale(d, wi * (p.x - pc.0)));
        by = add(by, scale(d, wi * (p.y - pc.1)));
    }
    let minv = m.inverse().ok_or_else(|| {
        Error::Degenerate("weighted template points are coplanar; scaled-orthographic fit is undetermined".into())
    })?;
    let r1 = minv * bx;
    let r2 = minv * by;
    let (n1, n2) = (norm(r1), norm(r2));
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(Error::Degenerate("landmarks collapse to a point".into()));
    }
    let s = 0.5 * (n1 + n2);
    let u1 = scale(r1, 1.0 / n1);
    let u2 = scale(r2, 1.0 / n2);
    let u3 = cross(u1, u2);
    let rotation = nearest_rotation(&Mat3([u1, u2, scale(u3, 1.0 / norm(u3).max(f64::MIN_POSITIVE))]));
    let rx = rotation * xc;
    Ok(Params {
        rotation,
        scale: s,
        offset: (pc.0 - s * rx[0], pc.1 - s * rx[1]),
    })
}

/// Fits template rotation, scale and image offset to 2D landmarks.
///
/// Scaled-orthographic initialization followed by damped Gauss–Newton on the
/// reprojection error, with rotation updates `R ← R·exp([ω]×)`. Steps that do
/// not reduce the cost are rejected and the damping raised, so the residual
/// never increases. Zero weights drop landmarks from the fit.
pub fn fit_head_pose(
    landmarks: &LandmarkSet,
    template: &Template3D,
    camera: &CameraModel,
    weights: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<HeadPose> {
    let n = template.len();
    if landmarks.len() != n {
        return Err(Error::CountMismatch {
            expected: n,
            got: landmarks.len(),
        });
    }
    let ones;
    let w = match weights {
        Some(w) if w.len() != n => return Err(Error::CountMismatch { expected: n, got: w.len() }),
        Some(w) => w,
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if w.iter().filter(|v| **v > 0.0).count() < 4 {
        return Err(Error::Degenerate("need at least 4 landmarks with positive weight".into()));
    }

    let pts = &template.points;
    let obs = &landmarks.points;
    let mut params = initialize(pts, obs, w, total)?;
    let mut c = cost(&params, pts, obs, w);
    let rms = |c: f64| (c / total).sqrt();
    let mut history = vec![rms(c)];
    let mut lambda = 1e-6;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        // normal equations over (ω, s, ox, oy)
        let mut jtj = vec![vec![0.0; 6]; 6];
        let mut jte = vec![0.0; 6];
        for ((x, p), &wi) in pts.iter().zip(obs).zip(w) {
            if wi == 0.0 {
                continue;
            }
            let y = params.rotation * *x;
            let e = [params.scale * y[0] + params.offset.0 - p.x, params.scale * y[1] + params.offset.1 - p.y];
            // d(R·exp([ω]×)·X)/dω at ω = 0 is -R·[X]×
            let drot = (params.rotation * Mat3::skew(*x)) * -params.scale;
            let rows = [
                [drot[(0, 0)], drot[(0, 1)], drot[(0, 2)], y[0], 1.0, 0.0],
                [drot[(1, 0)], drot[(1, 1)], drot[(1, 2)], y[1], 0.0, 1.0],
            ];
            for (row, ek) in rows.iter().zip(e) {
                for a in 0..6 {
                    jte[a] += wi * row[a] * ek;
                    for b in 0..6 {
                        jtj[a][b] += wi * row[a] * row[b];
                    }
                }
            }
        }
        let mut accepted = false;
        let mut step_norm = 0.0;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for (k, row) in a.iter_mut().enumerate() {
                row[k] += lambda * (jtj[k][k] + 1e-12);
            }
            let Some(delta) = solve_dense(a, jte.iter().map(|v| -v).collect()) else {
                lambda *= 10.0;
                continue;
            };
            let cand = Params {
                rotation: params.rotation * rotation_from_axis_angle([delta[0], delta[1], delta[2]]),
                scale: params.scale + delta[3],
                offset: (params.offset.0 + delta[4], params.offset.1 + delta[5]),
            };
            let cc = cost(&cand, pts, obs, w);
            step_norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            if cc <= c && cand.scale > 0.0 {
                params = cand;
                c = cc;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                break;
            }
            if step_norm < opts.step_tolerance {
                break;
            }
            lambda *= 10.0;
        }
        if accepted {
            history.push(rms(c));
        }
        if !accepted || step_norm < opts.step_tolerance * (1.0 + params.scale) {
            converged = true;
            break;
        }
    }

    if !c.is_finite() {
        return Err(Error::Numeric("head pose fit diverged".into()));
    }
    let s = params.scale;
    let translation = match camera.focal_px {
        Some(f) => [(params.offset.0 - camera.principal.0) / s, (params.offset.1 - camera.principal.1) / s, f / s],
        None => [(params.offset.0 - camera.principal.0) / s, (params.offset.1 - camera.principal.1) / s, 0.0],
    };
    let transform = RigidTransform {
        rotation: nearest_rotation(&params.rotation),
        translation,
    };
    transform.check_rotation(1e-9)?;
    Ok(HeadPose {
        transform,
        scale: s,
        residual_rms: rms(c),
        converged,
        iterations,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{rotation_distance, rotation_from_euler, EulerAngles};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn project_ortho(t: &Template3D, r: &Mat3, s: f64, off: (f64, f64)) -> LandmarkSet {
        LandmarkSet {
            points: t
                .points
                .iter()
                .map(|x| {
                    let y = *r * *x;
                    Point2::new(s * y[0] + off.0, s * y[1] + off.1)
                })
                .collect(),
        }
    }

    #[test]
    fn identity_self_consistency() {
        let t = Template3D::synthetic_68();
        let lm = project_ortho(&t, &Mat3::IDENTITY, 1.0, (0.0, 0.0));
        let pose = fit_head_pose(&lm, &t, &CameraModel::default(), None, &FitOptions::default()).unwrap();
        assert!(rotation_distance(&pose.transform.rotation, &Mat3::IDENTITY).to_radians() < 1e-6);
        assert!(pose.residual_rms < 1e-9);
    }

    #[test]
    fn recovers_yaw_30() {
        let t = Template3D::synthetic_68();
        let r = rotation_from_euler(&EulerAngles::from_degrees(30.0, 0.0, 0.0));
        let lm = project_ortho(&t, &r, 0.4, (50.0, 60.0));
        let pose = fit_head_pose(&lm, &t, &CameraModel::default(), None, &FitOptions::default()).unwrap();
        assert!(rotation_distance(&pose.transform.rotation, &r).to_radians() < 1e-3);
        assert!((pose.scale - 0.4).abs() < 1e-9);
    }

    #[test]
    fn weak_perspective_translation() {
        let t = Template3D::synthetic_5();
        let truth = RigidTransform {
            rotation: rotation_from_euler(&EulerAngles::from_degrees(-12.0, 8.0, 4.0)),
            translation: [10.0, -5.0, 600.0],
        };
        let cam = CameraModel { focal_px: Some(300.0), principal: (16.0, 16.0) };
        let lm = project_weak_perspective(&t, &truth, 300.0, (16.0, 16.0));
        let pose = fit_head_pose(&lm, &t, &cam, None, &FitOptions::default()).unwrap();
        assert!(rotation_distance(&pose.transform.rotation, &truth.rotation).to_radians() < 1e-6);
        for k in 0..3 {
            assert!((pose.transform.translation[k] - truth.translation[k]).abs() < 1e-6 * 600.0);
        }
    }

    #[test]
    fn residual_non_increasing_under_noise() {
        let t = Template3D::synthetic_68();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 2.0).unwrap();
        for _ in 0..50 {
            let r = rotation_from_euler(&EulerAngles::from_degrees(25.0, -10.0, 5.0));
            let mut lm = project_ortho(&t, &r, 0.5, (40.0, 40.0));
            for p in &mut lm.points {
                p.x += noise.sample(&mut rng);
                p.y += noise.sample(&mut rng);
            }
            let pose = fit_head_pose(&lm, &t, &CameraModel::default(), None, &FitOptions::default()).unwrap();
            for w in pose.residual_history.windows(2) {
                assert!(w[1] <= w[0]);
            }
            pose.transform.check_rotation(1e-9).unwrap();
        }
    }

    #[test]
    fn errors() {
        let t = Template3D::synthetic_5();
        let lm = LandmarkSet::from_xy(&[(0.0, 0.0); 4]).unwrap();
        assert!(matches!(
            fit_head_pose(&lm, &t, &CameraModel::default(), None, &FitOptions::default()),
            Err(Error::CountMismatch { .. })
        ));
        let lm = LandmarkSet::from_xy(&[(1.0, 1.0); 5]).unwrap();
        assert!(fit_head_pose(&lm, &t, &CameraModel::default(), None, &FitOptions::default()).is_err());
    }
}
