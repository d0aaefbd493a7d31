//! Correlation coefficients with significance, and a chi-square goodness-of-fit test.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value of the t-test for zero correlation.
    pub p_value: f64,
    pub n: usize,
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::CountMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("need at least 2 pairs, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("correlation inputs must be finite".into()));
    }
    Ok(())
}

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("one of the inputs is constant".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn t_test(r: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

pub fn pearson_test(a: &[f64], b: &[f64]) -> Result<Correlation> {
    let r = pearson(a, b)?;
    Ok(Correlation { r, p_value: t_test(r, a.len()), n: a.len() })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with a t-approximation p-value.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check_pair(a, b)?;
    let r = pearson(&average_ranks(a), &average_ranks(b))?;
    Ok(Correlation { r, p_value: t_test(r, a.len()), n: a.len() })
}

/// Pearson chi-square statistic of `observed` counts against `probs`, and its
/// upper-tail p-value with `k - 1` degrees of freedom.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != probs.len() {
        return Err(Error::CountMismatch { expected: probs.len(), got: observed.len() });
    }
    if observed.len() < 2 || probs.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidArgument("need at least two categories with positive probability".into()));
    }
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = n as f64 * p;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).expect("positive degrees of freedom");
    Ok((stat, dist.sf(stat)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let e = [1.0, 2.0, 4.0, 8.0];
        assert!((pearson(&e, &e).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = e.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &e).unwrap() + 1.0).abs() < 1e-15);
        // hand-expanded: means 2.75 and 3; deviations (-1.75,-.75,.25,2.25), (-1,-2,1,2)
        let sxy = 1.75 + 1.5 + 0.25 + 4.5;
        let sxx = 1.75f64.powi(2) + 0.75f64.powi(2) + 0.25f64.powi(2) + 2.25f64.powi(2);
        let syy = 1.0 + 4.0 + 1.0 + 4.0;
        let r = pearson(&[1.0, 2.0, 3.0, 5.0], &[2.0, 1.0, 4.0, 5.0]).unwrap();
        assert!((r - sxy / (sxx * syy as f64).sqrt()).abs() < 1e-12);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn pearson_affine_invariance_and_symmetry() {
        let a = [0.3, 1.9, -2.0, 4.4, 0.0, 1.1];
        let b = [1.0, 2.5, -0.5, 3.0, 0.7, 0.2];
        let r = pearson(&a, &b).unwrap();
        assert!((pearson(&b, &a).unwrap() - r).abs() < 1e-15);
        let a2: Vec<f64> = a.iter().map(|v| 3.0 * v + 7.0).collect();
        assert!((pearson(&a2, &b).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn p_values() {
        // r = 0.5 with n = 27: t = 0.5 * sqrt(25 / 0.75) = 2.88675, two-sided p ~ 0.00801
        let c = t_test(0.5, 27);
        assert!((c - 0.00801).abs() < 2e-4, "{c}");
        assert_eq!(t_test(1.0, 10), 0.0);
    }

    #[test]
    fn ranks_and_spearman() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap();
        assert!((s.r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chi_square() {
        let (stat, p) = chi_square_gof(&[100, 300, 600], &[0.1, 0.3, 0.6]).unwrap();
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        // (60-50)^2/50 + (40-50)^2/50 = 4 with df 1 -> p ~ 0.0455
        let (stat, p) = chi_square_gof(&[60, 40], &[0.5, 0.5]).unwrap();
        assert!((stat - 4.0).abs() < 1e-12);
        assert!((p - 0.0455).abs() < 1e-3);
    }
}
