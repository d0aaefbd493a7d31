//! Landmark losses with a per-landmark validity term.
//!
//! Every predicted landmark is a triplet `(x1, x2, v)`. Besides the two
//! coordinate residuals, a third residual compares `v` with the distance `d`
//! between predicted and annotated position, so the network learns to report
//! its own error. `d` is treated as a label by default: no gradient flows
//! from the third residual into the coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LandmarkSet, Point2, Triplet, TripletVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterNorm {
    /// `½ r²`
    L2,
    /// `|r|`
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerDistance {
    Euclidean,
    Manhattan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub outer: OuterNorm,
    pub inner_distance: InnerDistance,
    pub detach_distance_target: bool,
    pub aggregation: Aggregation,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            outer: OuterNorm::L1,
            inner_distance: InnerDistance::Manhattan,
            detach_distance_target: true,
            aggregation: Aggregation::Mean,
        }
    }
}

impl LossConfig {
    pub fn new(outer: OuterNorm, inner_distance: InnerDistance) -> Self {
        Self {
            outer,
            inner_distance,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ResidualTriple {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

impl ResidualTriple {
    pub fn sum(&self) -> f64 {
        self.r1 + self.r2 + self.r3
    }
}

/// Plain per-coordinate loss between estimate `x` and target `y`.
pub fn pointwise_loss(x: f64, y: f64, outer: OuterNorm) -> f64 {
    let r = y - x;
    match outer {
        OuterNorm::L2 => 0.5 * r * r,
        OuterNorm::L1 => r.abs(),
    }
}

/// Derivative of `pointwise_loss` w.r.t. the estimate. Subgradient 0 at the kink.
fn pointwise_grad(x: f64, y: f64, outer: OuterNorm) -> f64 {
    match outer {
        OuterNorm::L2 => x - y,
        OuterNorm::L1 => sign0(x - y),
    }
}

#[inline]
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn inner_distance(x1: f64, x2: f64, g: Point2, kind: InnerDistance) -> f64 {
    let (dx, dy) = (x1 - g.x, x2 - g.y);
    match kind {
        InnerDistance::Euclidean => (dx * dx + dy * dy).sqrt(),
        InnerDistance::Manhattan => dx.abs() + dy.abs(),
    }
}

pub fn validation_residual(t: &Triplet, g: Point2, cfg: &LossConfig) -> ResidualTriple {
    let d = inner_distance(t.x, t.y, g, cfg.inner_distance);
    ResidualTriple {
        r1: pointwise_loss(t.x, g.x, cfg.outer),
        r2: pointwise_loss(t.y, g.y, cfg.outer),
        r3: pointwise_loss(t.validity, d, cfg.outer),
    }
}

fn check_counts(pred: &TripletVector, gt: &LandmarkSet) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::CountMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

fn normalizer(cfg: &LossConfig, landmarks: usize) -> f64 {
    match cfg.aggregation {
        Aggregation::Mean if landmarks > 0 => 1.0 / (3 * landmarks) as f64,
        _ => 1.0,
    }
}

pub fn total_loss(pred: &TripletVector, gt: &LandmarkSet, cfg: &LossConfig) -> Result<f64> {
    check_counts(pred, gt)?;
    let sum: f64 = pred
        .triplets
        .iter()
        .zip(&gt.points)
        .map(|(t, &g)| validation_residual(t, g, cfg).sum())
        .sum();
    Ok(match cfg.aggregation {
        Aggregation::Mean if !gt.is_empty() => sum / (3 * gt.len()) as f64,
        _ => sum,
    })
}

/// Gradient of `total_loss` w.r.t. the flat `(x, y, v)` prediction layout.
pub fn loss_gradient(pred: &TripletVector, gt: &LandmarkSet, cfg: &LossConfig) -> Result<Vec<f64>> {
    check_counts(pred, gt)?;
    let scale = normalizer(cfg, gt.len());
    let mut grad = Vec::with_capacity(3 * pred.len());
    for (t, &g) in pred.triplets.iter().zip(&gt.points) {
        let d = inner_distance(t.x, t.y, g, cfg.inner_distance);
        // d(r3)/d(v) = -outer'(d - v); d(r3)/d(d) = outer'(d - v)
        let dr3_dd = pointwise_grad(d, t.validity, cfg.outer);
        let mut gx = pointwise_grad(t.x, g.x, cfg.outer);
        let mut gy = pointwise_grad(t.y, g.y, cfg.outer);
        if !cfg.detach_distance_target {
            let (dx, dy) = (t.x - g.x, t.y - g.y);
            let (dd_dx, dd_dy) = match cfg.inner_distance {
                InnerDistance::Euclidean if d > 0.0 => (dx / d, dy / d),
                InnerDistance::Euclidean => (0.0, 0.0),
                InnerDistance::Manhattan => (sign0(dx), sign0(dy)),
            };
            gx += dr3_dd * dd_dx;
            gy += dr3_dd * dd_dy;
        }
        grad.extend([gx * scale, gy * scale, -dr3_dd * scale]);
    }
    Ok(grad)
}

/// Mean of per-sample `total_loss` over a batch.
pub fn batch_loss(preds: &[TripletVector], gts: &[LandmarkSet], cfg: &LossConfig) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::CountMismatch {
            expected: gts.len(),
            got: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("batch has no samples".into()));
    }
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        sum += total_loss(p, g, cfg)?;
    }
    Ok(sum / preds.len() as f64)
}
