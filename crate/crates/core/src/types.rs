//! Domain types shared by every stage of the pipeline.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel 8-bit image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "image buffer has {} bytes, expected {}x{}={}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Intensities scaled to [0, 1], the network's input convention.
    pub fn to_unit_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    pub fn mean_intensity(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&p| f64::from(p)).sum::<f64>() / self.data.len() as f64
    }
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Ground-truth 2D annotation of one face.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LandmarkSet {
    pub points: Vec<Point2>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "landmark {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { points })
    }

    pub fn from_xy(coords: &[(f64, f64)]) -> Result<Self> {
        Self::new(coords.iter().map(|&(x, y)| Point2::new(x, y)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }
}

/// One predicted landmark: position plus the predicted magnitude of its own error.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Triplet {
    pub x: f64,
    pub y: f64,
    pub validity: f64,
}

/// Network output for one image, laid out as `(x, y, v)` per landmark.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TripletVector {
    pub triplets: Vec<Triplet>,
}

impl TripletVector {
    pub fn new(triplets: Vec<Triplet>) -> Self {
        Self { triplets }
    }

    /// Interprets a flat `[x0, y0, v0, x1, y1, v1, ...]` buffer.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() % 3 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "flat output length {} is not a multiple of 3",
                values.len()
            )));
        }
        Ok(Self {
            triplets: values
                .chunks_exact(3)
                .map(|c| Triplet {
                    x: c[0],
                    y: c[1],
                    validity: c[2],
                })
                .collect(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.triplets
            .iter()
            .flat_map(|t| [t.x, t.y, t.validity])
            .collect()
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn positions(&self) -> LandmarkSet {
        LandmarkSet {
            points: self
                .triplets
                .iter()
                .map(|t| Point2::new(t.x, t.y))
                .collect(),
        }
    }
}

/// Axis-aligned face box in image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl FaceBox {
    pub fn full_image(img: &GrayImage) -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            w: img.width() as f64,
            h: img.height() as f64,
        }
    }

    /// Intersects the box with the image rectangle.
    pub fn clamped(&self, width: usize, height: usize) -> FaceBox {
        let x0 = self.x.clamp(0.0, width as f64);
        let y0 = self.y.clamp(0.0, height as f64);
        let x1 = (self.x + self.w).clamp(0.0, width as f64);
        let y1 = (self.y + self.h).clamp(0.0, height as f64);
        FaceBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Common,
    Challenging,
}

impl Subset {
    pub const ALL: [Subset; 2] = [Subset::Common, Subset::Challenging];

    pub fn as_str(&self) -> &'static str {
        match self {
            Subset::Common => "common",
            Subset::Challenging => "challenging",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "common" => Ok(Subset::Common),
            "challenging" => Ok(Subset::Challenging),
            other => Err(Error::InvalidArgument(format!("unknown subset tag {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub annotation: LandmarkSet,
    pub face_box: FaceBox,
    pub subset: Subset,
    /// Loss produced the last time this sample went through training.
    pub last_loss: f64,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: GrayImage, annotation: LandmarkSet, subset: Subset) -> Self {
        let face_box = FaceBox::full_image(&image);
        Self {
            id: id.into(),
            image,
            annotation,
            face_box,
            subset,
            last_loss: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate ids and inconsistent landmark counts.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id {:?}", s.id)));
            }
        }
        if let Some(first) = samples.first() {
            let l = first.annotation.len();
            if let Some(bad) = samples.iter().find(|s| s.annotation.len() != l) {
                return Err(Error::CountMismatch {
                    expected: l,
                    got: bad.annotation.len(),
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn landmark_count(&self) -> Option<usize> {
        self.samples.first().map(|s| s.annotation.len())
    }

    pub fn subset(&self, tag: Subset) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| s.subset == tag).cloned().collect(),
        }
    }

    pub fn count(&self, tag: Subset) -> usize {
        self.samples.iter().filter(|s| s.subset == tag).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_bad_length() {
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 4]).is_ok());
    }

    #[test]
    fn landmarks_reject_non_finite() {
        assert!(LandmarkSet::from_xy(&[(1.0, f64::NAN)]).is_err());
    }

    #[test]
    fn triplet_flat_layout() {
        let t = TripletVector::from_flat(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.triplets[1], Triplet { x: 4.0, y: 5.0, validity: 6.0 });
        assert_eq!(t.to_flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(TripletVector::from_flat(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let img = GrayImage::filled(4, 4, 0);
        let lm = LandmarkSet::from_xy(&[(1.0, 1.0)]).unwrap();
        let a = Sample::new("a", img.clone(), lm.clone(), Subset::Common);
        let b = Sample::new("a", img, lm, Subset::Challenging);
        assert!(Dataset::new(vec![a, b]).is_err());
    }

    #[test]
    fn face_box_clamps_to_image() {
        let b = FaceBox { x: -2.0, y: 1.0, w: 10.0, h: 4.0 }.clamped(6, 4);
        assert_eq!(b, FaceBox { x: 0.0, y: 1.0, w: 6.0, h: 3.0 });
    }
}
