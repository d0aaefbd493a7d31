//! Fixed-size 3×3 linear algebra: products, rotations, and a Jacobi-based SVD.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

pub type Vec3 = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.0[r][c]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.0[r][c]
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, rhs: Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[r][k] * rhs.0[k][c]).sum();
            }
        }
        Mat3(out)
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        [dot(self.0[0], v), dot(self.0[1], v), dot(self.0[2], v)]
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(self, s: f64) -> Mat3 {
        Mat3(self.0.map(|row| row.map(|v| v * s)))
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, rhs: Mat3) -> Mat3 {
        let mut out = self.0;
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] += rhs.0[r][c];
            }
        }
        Mat3(out)
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, rhs: Mat3) -> Mat3 {
        self + rhs * -1.0
    }
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3([[c0[0], c1[0], c2[0]], [c0[1], c1[1], c2[1]], [c0[2], c1[2], c2[2]]])
    }

    pub fn col(&self, c: usize) -> Vec3 {
        [self.0[0][c], self.0[1][c], self.0[2][c]]
    }

    pub fn row(&self, r: usize) -> Vec3 {
        self.0[r]
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]])
    }

    pub fn det(&self) -> f64 {
        dot(self.0[0], cross(self.0[1], self.0[2]))
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn inverse(&self) -> Option<Mat3> {
        let d = self.det();
        if d.abs() < f64::MIN_POSITIVE || !d.is_finite() {
            return None;
        }
        let m = self.transpose();
        let c0 = cross(m.0[1], m.0[2]);
        let c1 = cross(m.0[2], m.0[0]);
        let c2 = cross(m.0[0], m.0[1]);
        Some(Mat3([c0, c1, c2]) * (1.0 / d))
    }

    pub fn outer(a: Vec3, b: Vec3) -> Mat3 {
        Mat3([
            [a[0] * b[0], a[0] * b[1], a[0] * b[2]],
            [a[1] * b[0], a[1] * b[1], a[1] * b[2]],
            [a[2] * b[0], a[2] * b[1], a[2] * b[2]],
        ])
    }

    pub fn skew(v: Vec3) -> Mat3 {
        Mat3([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    }

    pub fn diag(d: Vec3) -> Mat3 {
        Mat3([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Rodrigues' formula; `axis_angle` is the rotation vector (axis · angle).
pub fn rotation_from_axis_angle(axis_angle: Vec3) -> Mat3 {
    let theta = norm(axis_angle);
    let k = Mat3::skew(axis_angle);
    if theta < 1e-8 {
        // second-order expansion keeps the result orthonormal to machine precision
        return Mat3::IDENTITY + k + k * k * 0.5;
    }
    let (s, c) = theta.sin_cos();
    Mat3::IDENTITY + k * (s / theta) + k * k * ((1.0 - c) / (theta * theta))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are returned in descending order with matching eigenvector columns.
pub fn symmetric_eigen(a: &Mat3) -> (Vec3, Mat3) {
    let mut m = *a;
    let mut v = Mat3::IDENTITY;
    let scale = m.frobenius().max(f64::MIN_POSITIVE);
    for _sweep in 0..64 {
        let off = (m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2)).sqrt();
        if off <= 1e-300 || off <= f64::EPSILON * 1e-3 * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = m[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // m <- Jᵀ m J
            for k in 0..3 {
                let mkp = m[(k, p)];
                let mkq = m[(k, q)];
                m[(k, p)] = c * mkp - s * mkq;
                m[(k, q)] = s * mkp + c * mkq;
            }
            for k in 0..3 {
                let mpk = m[(p, k)];
                let mqk = m[(q, k)];
                m[(p, k)] = c * mpk - s * mqk;
                m[(q, k)] = s * mpk + c * mqk;
            }
            for k in 0..3 {
                let vkp = v[(k, p)];
                let vkq = v[(k, q)];
                v[(k, p)] = c * vkp - s * vkq;
                v[(k, q)] = s * vkp + c * vkq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    let evals = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    order.sort_by(|&i, &j| evals[j].total_cmp(&evals[i]));
    let values = order.map(|i| evals[i]);
    let vecs = Mat3::from_cols(v.col(order[0]), v.col(order[1]), v.col(order[2]));
    (values, vecs)
}

/// Thin SVD `a = U · diag(σ) · Vᵀ` with σ descending.
///
/// `V` comes from the Jacobi eigenvectors of `aᵀa`; `U` is obtained by
/// normalizing and Gram–Schmidt-orthogonalizing the columns of `a·V`. Columns
/// of `U` belonging to vanishing singular values are completed by cross
/// products, so `U` is always orthonormal.
pub fn svd3(a: &Mat3) -> (Mat3, Vec3, Mat3) {
    let (_, v) = symmetric_eigen(&(a.transpose() * *a));
    let b = *a * v;
    let cols = [b.col(0), b.col(1), b.col(2)];
    let sigma = cols.map(norm);
    let tiny = sigma[0].max(f64::MIN_POSITIVE) * 1e-13;

    let u0 = if sigma[0] > f64::MIN_POSITIVE {
        scale(cols[0], 1.0 / sigma[0])
    } else {
        [1.0, 0.0, 0.0]
    };
    let u1 = if sigma[1] > tiny {
        let w = sub(cols[1], scale(u0, dot(u0, cols[1])));
        scale(w, 1.0 / norm(w))
    } else {
        any_orthogonal(u0)
    };
    let c = cross(u0, u1);
    let u2 = if sigma[2] > tiny && dot(c, cols[2]) < 0.0 {
        scale(c, -1.0)
    } else {
        c
    };
    let sigma = [sigma[0], sigma[1], if sigma[2] > tiny { dot(u2, cols[2]) } else { sigma[2] }];
    (Mat3::from_cols(u0, u1, u2), sigma, v)
}

fn any_orthogonal(u: Vec3) -> Vec3 {
    let pick = if u[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let w = cross(u, pick);
    scale(w, 1.0 / norm(w))
}

/// Closest proper rotation to `m` in the Frobenius sense.
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let (u, _, v) = svd3(m);
    let d = (u * v.transpose()).det().signum();
    u * Mat3::diag([1.0, 1.0, d]) * v.transpose()
}

/// Solves the dense linear system `a x = b` by Gaussian elimination with
/// partial pivoting. Returns `None` for a numerically singular matrix.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut impl Rng) -> Mat3 {
        Mat3([[0; 3]; 3].map(|r| r.map(|_: i32| rng.random_range(-3.0..3.0))))
    }

    fn max_abs(m: &Mat3) -> f64 {
        m.0.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = random_mat(&mut rng);
            let s = a + a.transpose();
            let (vals, v) = symmetric_eigen(&s);
            let back = v * Mat3::diag(vals) * v.transpose();
            assert!(max_abs(&(back - s)) < 1e-12);
            assert!(max_abs(&(v.transpose() * v - Mat3::IDENTITY)) < 1e-13);
            assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        }
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let a = random_mat(&mut rng);
            let (u, s, v) = svd3(&a);
            let back = u * Mat3::diag(s) * v.transpose();
            assert!(max_abs(&(back - a)) < 1e-10, "{:?}", back - a);
            assert!(max_abs(&(u.transpose() * u - Mat3::IDENTITY)) < 1e-12);
        }
    }

    #[test]
    fn svd_rank_one() {
        let a = Mat3::outer([1.0, 2.0, 3.0], [0.5, -1.0, 2.0]);
        let (u, s, v) = svd3(&a);
        assert!(s[1].abs() < 1e-12 && s[2].abs() < 1e-12);
        let back = u * Mat3::diag(s) * v.transpose();
        assert!(max_abs(&(back - a)) < 1e-12);
        assert!(max_abs(&(u.transpose() * u - Mat3::IDENTITY)) < 1e-12);
    }

    #[test]
    fn rodrigues_quarter_turn() {
        let r = rotation_from_axis_angle([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let p = r * [1.0, 0.0, 0.0];
        assert!((p[0]).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
        assert!((r.det() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_and_solve() {
        let a = Mat3([[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]]);
        let inv = a.inverse().unwrap();
        assert!(max_abs(&(a * inv - Mat3::IDENTITY)) < 1e-14);
        let x = solve_dense(a.0.iter().map(|r| r.to_vec()).collect(), vec![1.0, 2.0, 3.0]).unwrap();
        let ax = a * [x[0], x[1], x[2]];
        assert!((ax[0] - 1.0).abs() < 1e-14 && (ax[1] - 2.0).abs() < 1e-14 && (ax[2] - 3.0).abs() < 1e-14);
        assert!(Mat3::outer([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]).inverse().is_none());
    }
}
