use super::linalg::{add, scale, sub, svd3, Mat3, Vec3};
use super::RigidTransform;
use crate::error::{Error, Result};

fn weighted_centroid(points: &[Vec3], w: &[f64], total: f64) -> Vec3 {
    let s = points
        .iter()
        .zip(w)
        .fold([0.0; 3], |acc, (p, &wi)| add(acc, scale(*p, wi)));
    scale(s, 1.0 / total)
}

/// Least-squares rigid transform with `R·p + t ≈ q`, minimizing
/// `Σ wᵢ ‖R·pᵢ + t − qᵢ‖²` over proper rotations.
pub fn kabsch(p: &[Vec3], q: &[Vec3], weights: Option<&[f64]>) -> Result<RigidTransform> {
    if p.len() != q.len() {
        return Err(Error::CountMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    if p.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 correspondences, got {}", p.len())));
    }
    let ones;
    let w = match weights {
        Some(w) if w.len() != p.len() => {
            return Err(Error::CountMismatch {
                expected: p.len(),
                got: w.len(),
            })
        }
        Some(w) => w,
        None => {
            ones = vec![1.0; p.len()];
            &ones
        }
    };
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all weights are zero".into()));
    }

    let pc = weighted_centroid(p, w, total);
    let qc = weighted_centroid(q, w, total);
    let mut h = Mat3::ZERO;
    let mut spread = 0.0;
    for ((pi, qi), &wi) in p.iter().zip(q).zip(w) {
        let a = sub(*pi, pc);
        let b = sub(*qi, qc);
        h = h + Mat3::outer(scale(a, wi), b);
        spread += wi * (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    }
    let (u, sigma, v) = svd3(&h);
    if !(spread > 0.0) || sigma[0] <= 1e-14 * spread {
        return Err(Error::Degenerate("points are coincident (rank 0 cross-covariance)".into()));
    }
    if sigma[1].abs() <= 1e-10 * sigma[0] {
        return Err(Error::Degenerate("points are collinear (rank 1 cross-covariance)".into()));
    }
    // H = U Σ Vᵀ  =>  R = V · diag(1, 1, d) · Uᵀ with d fixing reflections
    let d = (v * u.transpose()).det().signum();
    let rotation = v * Mat3::diag([1.0, 1.0, d]) * u.transpose();
    let translation = sub(qc, rotation * pc);
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

pub fn weighted_residual(p: &[Vec3], q: &[Vec3], weights: Option<&[f64]>, t: &RigidTransform) -> f64 {
    p.iter()
        .zip(q)
        .enumerate()
        .map(|(i, (pi, qi))| {
            let e = sub(t.apply(*pi), *qi);
            weights.map_or(1.0, |w| w[i]) * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
        })
        .sum()
}
