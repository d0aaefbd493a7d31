//! Eye-index schemes and the inter-ocular normalizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LandmarkSet, Point2};

/// Zero-based landmark indices whose means define the two eye centers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EyeScheme {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl EyeScheme {
    /// Multi-PIE 68-point layout: eye contours at 1-based 37–42 and 43–48.
    pub fn multipie_68() -> Self {
        Self {
            left: (36..42).collect(),
            right: (42..48).collect(),
        }
    }

    /// Five-point layout: left eye, right eye, nose tip, mouth corners.
    pub fn five_point() -> Self {
        Self {
            left: vec![0],
            right: vec![1],
        }
    }

    /// Default scheme for a landmark count, if one is known.
    pub fn for_count(count: usize) -> Result<Self> {
        match count {
            68 => Ok(Self::multipie_68()),
            5 => Ok(Self::five_point()),
            n => Err(Error::InvalidArgument(format!(
                "no default eye scheme for {n} landmarks; configure one explicitly"
            ))),
        }
    }

    pub fn validate(&self, count: usize) -> Result<()> {
        if self.left.is_empty() || self.right.is_empty() {
            return Err(Error::InvalidArgument("eye index lists must be non-empty".into()));
        }
        if let Some(&i) = self.left.iter().chain(&self.right).find(|&&i| i >= count) {
            return Err(Error::InvalidArgument(format!(
                "eye index {i} out of range for {count} landmarks"
            )));
        }
        Ok(())
    }

    pub fn eye_centers(&self, set: &LandmarkSet) -> Result<(Point2, Point2)> {
        self.validate(set.len())?;
        Ok((mean_of(set, &self.left), mean_of(set, &self.right)))
    }
}

fn mean_of(set: &LandmarkSet, idx: &[usize]) -> Point2 {
    let n = idx.len() as f64;
    let (sx, sy) = idx
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &i| (sx + set.points[i].x, sy + set.points[i].y));
    Point2::new(sx / n, sy / n)
}

/// Distance between the two eye centers.
pub fn interocular_distance(set: &LandmarkSet, scheme: &EyeScheme) -> Result<f64> {
    let (l, r) = scheme.eye_centers(set)?;
    let d = l.distance(&r);
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::DegenerateNormalizer(format!(
            "eye centers coincide at ({:.3}, {:.3})",
            l.x, l.y
        )));
    }
    Ok(d)
}
