//! Online augmentation: face-box jitter with crop-resample, additive noise,
//! contrast offset, Gaussian blur and rectangular occluders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FaceBox, GrayImage, LandmarkSet, Point2, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMode {
    /// One constant value in `[0, 30]`.
    Dark,
    /// One constant value in `[200, 255]`.
    Bright,
    /// Independent value in `[0, 255]` per pixel.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Side of the square output image.
    pub output_size: usize,
    pub noise_max_frac: f64,
    pub shift_max_frac: f64,
    pub scale_range: (f64, f64),
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    pub occlude_prob: f64,
    pub occlude_max_area_frac: f64,
    pub occlude_color_modes: Vec<OcclusionMode>,
    pub contrast_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            output_size: 32,
            noise_max_frac: 0.30,
            shift_max_frac: 0.40,
            scale_range: (0.8, 1.2),
            blur_prob: 0.5,
            blur_sigma: (1.0, 2.0),
            occlude_prob: 0.5,
            occlude_max_area_frac: 0.5,
            occlude_color_modes: vec![OcclusionMode::Dark, OcclusionMode::Bright, OcclusionMode::Random],
            contrast_range: (-80.0, 80.0),
        }
    }
}

impl AugmentConfig {
    /// Pipeline that only crops the face box to the output size.
    pub fn identity(output_size: usize) -> Self {
        Self {
            output_size,
            noise_max_frac: 0.0,
            shift_max_frac: 0.0,
            scale_range: (1.0, 1.0),
            blur_prob: 0.0,
            blur_sigma: (1.0, 1.0),
            occlude_prob: 0.0,
            occlude_max_area_frac: 0.0,
            occlude_color_modes: vec![],
            contrast_range: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("noise_max_frac", self.noise_max_frac)?;
        unit("shift_max_frac", self.shift_max_frac)?;
        unit("blur_prob", self.blur_prob)?;
        unit("occlude_prob", self.occlude_prob)?;
        unit("occlude_max_area_frac", self.occlude_max_area_frac)?;
        if self.output_size == 0 {
            return Err(Error::InvalidArgument("output_size must be positive".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale_range must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
        }
        let (lo, hi) = self.blur_sigma;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("blur_sigma must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
        }
        let (lo, hi) = self.contrast_range;
        if !(lo <= hi && lo >= -255.0 && hi <= 255.0) {
            return Err(Error::InvalidArgument(format!("contrast_range must be ordered within [-255, 255], got ({lo}, {hi})")));
        }
        if self.occlude_prob > 0.0 && self.occlude_color_modes.is_empty() {
            return Err(Error::InvalidArgument("occlusion enabled without any color mode".into()));
        }
        Ok(())
    }
}

/// Affine map from source pixels to output pixels: `out = (p - origin) · scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropMap {
    pub origin: (f64, f64),
    pub scale: (f64, f64),
}

impl CropMap {
    pub fn from_box(b: &FaceBox, out_size: usize) -> Self {
        Self {
            origin: (b.x, b.y),
            scale: (out_size as f64 / b.w, out_size as f64 / b.h),
        }
    }

    pub fn forward(&self, p: Point2) -> Point2 {
        Point2::new((p.x - self.origin.0) * self.scale.0, (p.y - self.origin.1) * self.scale.1)
    }

    pub fn inverse(&self, p: Point2) -> Point2 {
        Point2::new(p.x / self.scale.0 + self.origin.0, p.y / self.scale.1 + self.origin.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub mode: OcclusionMode,
}

impl Occlusion {
    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

/// Parameters actually drawn by one `augment` call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    /// Box-center offset as a fraction of the face-box size.
    pub shift: (f64, f64),
    pub scale: (f64, f64),
    pub crop: CropMap,
    pub noise_amplitude: f64,
    pub contrast_offset: f64,
    pub blur_sigma: Option<f64>,
    pub occlusion: Option<Occlusion>,
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear resample of `b` to an `out_size` square; samples outside the
/// image read as 0.
pub fn crop_resample(img: &GrayImage, b: &FaceBox, out_size: usize) -> (GrayImage, CropMap) {
    let map = CropMap::from_box(b, out_size);
    let (w, h) = (img.width() as isize, img.height() as isize);
    let px = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            img.get(x as usize, y as usize) as f64
        }
    };
    let step = (b.w / out_size as f64, b.h / out_size as f64);
    let mut data = Vec::with_capacity(out_size * out_size);
    for j in 0..out_size {
        let sy = b.y + (j as f64 + 0.5) * step.1 - 0.5;
        let y0 = sy.floor();
        let ay = sy - y0;
        for i in 0..out_size {
            let sx = b.x + (i as f64 + 0.5) * step.0 - 0.5;
            let x0 = sx.floor();
            let ax = sx - x0;
            let (xi, yi) = (x0 as isize, y0 as isize);
            let mut v = (1.0 - ax) * (1.0 - ay) * px(xi, yi);
            if ax > 0.0 {
                v += ax * (1.0 - ay) * px(xi + 1, yi);
            }
            if ay > 0.0 {
                v += (1.0 - ax) * ay * px(xi, yi + 1);
                if ax > 0.0 {
                    v += ax * ay * px(xi + 1, yi + 1);
                }
            }
            data.push(clamp_u8(v));
        }
    }
    (GrayImage::new(out_size, out_size, data).expect("buffer sized to output"), map)
}

/// Box after moving its center by `shift · (w, h)` and scaling each axis about
/// the moved center.
pub fn jitter_box(b: &FaceBox, shift: (f64, f64), scale: (f64, f64)) -> FaceBox {
    let cx = b.x + 0.5 * b.w + shift.0 * b.w;
    let cy = b.y + 0.5 * b.h + shift.1 * b.h;
    let (w, h) = (b.w * scale.0, b.h * scale.1);
    FaceBox {
        x: cx - 0.5 * w,
        y: cy - 0.5 * h,
        w,
        h,
    }
}

fn map_sample(sample: &Sample, image: GrayImage, map: &CropMap) -> Sample {
    Sample {
        id: sample.id.clone(),
        annotation: sample.annotation.map(|p| map.forward(p)),
        face_box: FaceBox::full_image(&image),
        image,
        subset: sample.subset,
        last_loss: sample.last_loss,
    }
}

/// Applies a known box jitter and crop-resample; the annotation follows the same map.
pub fn apply_geometric(sample: &Sample, shift: (f64, f64), scale: (f64, f64), out_size: usize) -> Result<(Sample, CropMap)> {
    let b = jitter_box(&sample.face_box, shift, scale);
    if !(b.w > 1e-9 && b.h > 1e-9 && b.area().is_finite()) {
        return Err(Error::Degenerate(format!("face box of sample {} has no area after jitter", sample.id)));
    }
    let (image, map) = crop_resample(&sample.image, &b, out_size);
    Ok((map_sample(sample, image, &map), map))
}

/// Crops the face box to the network input size without any augmentation.
pub fn prepare_input(sample: &Sample, out_size: usize) -> Result<(Sample, CropMap)> {
    apply_geometric(sample, (0.0, 0.0), (1.0, 1.0), out_size)
}

/// Maps predicted input-frame landmarks back to the source image.
pub fn to_source_frame(set: &LandmarkSet, map: &CropMap) -> LandmarkSet {
    set.map(|p| map.inverse(p))
}

fn noise_with_amplitude(img: &GrayImage, max_frac: f64, rng: &mut impl Rng) -> (GrayImage, f64) {
    let a = rng.random_range(0.0..=max_frac * 255.0);
    let mut out = img.clone();
    if a > 0.0 {
        for p in out.data_mut() {
            let d = rng.random_range(-a..=a).trunc();
            *p = (*p as f64 + d).clamp(0.0, 255.0) as u8;
        }
    }
    (out, a)
}

/// Additive uniform noise in `[-a, a]` (truncated to whole intensities) with
/// `a` drawn once per image from `[0, max_frac · 255]`.
pub fn add_noise(img: &GrayImage, max_frac: f64, rng: &mut impl Rng) -> GrayImage {
    noise_with_amplitude(img, max_frac, rng).0
}

pub fn adjust_contrast(img: &GrayImage, offset: f64) -> GrayImage {
    let mut out = img.clone();
    if offset != 0.0 {
        for p in out.data_mut() {
            *p = clamp_u8(*p as f64 + offset);
        }
    }
    out
}

/// Normalized discrete Gaussian of radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur of a real plane with clamp-to-edge borders.
pub fn blur_plane(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            tmp[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(i, w)| w * row[clamp(x as isize + i as isize - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(i, w)| w * tmp[clamp(y as isize + i as isize - r, height) * width + x])
                .sum();
        }
    }
    out
}

pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let plane: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let out = blur_plane(&plane, img.width(), img.height(), sigma);
    GrayImage::new(img.width(), img.height(), out.into_iter().map(clamp_u8).collect()).expect("same dimensions")
}

/// With probability `occlude_prob`, paints one rectangle of area at most
/// `occlude_max_area_frac · w · h`.
pub fn occlude(img: &GrayImage, cfg: &AugmentConfig, rng: &mut impl Rng) -> (GrayImage, Option<Occlusion>) {
    let mut out = img.clone();
    if cfg.occlude_color_modes.is_empty() || !rng.random_bool(cfg.occlude_prob) {
        return (out, None);
    }
    let (w, h) = (img.width(), img.height());
    let target = rng.random_range(0.0..=cfg.occlude_max_area_frac) * (w * h) as f64;
    let aspect = rng.random_range(0.5f64.ln()..=2.0f64.ln()).exp();
    let rw = ((target * aspect).sqrt().round() as usize).clamp(1, w);
    let rh = ((target / rw as f64).floor() as usize).min(h);
    let x = rng.random_range(0..=w - rw);
    let y = rng.random_range(0..=h - rh);
    let mode = cfg.occlude_color_modes[rng.random_range(0..cfg.occlude_color_modes.len())];
    let fill = match mode {
        OcclusionMode::Dark => Some(rng.random_range(0..=30u8)),
        OcclusionMode::Bright => Some(rng.random_range(200..=255u8)),
        OcclusionMode::Random => None,
    };
    for yy in y..y + rh {
        for xx in x..x + rw {
            let v = fill.unwrap_or_else(|| rng.random());
            out.set(xx, yy, v);
        }
    }
    (out, Some(Occlusion { x, y, w: rw, h: rh, mode }))
}

const GEOMETRY_RETRIES: usize = 16;

/// Full pipeline: geometric jitter, noise, contrast, blur, occlusion.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<(Sample, AugmentRecord)> {
    let m = cfg.shift_max_frac;
    let (slo, shi) = cfg.scale_range;
    let mut geometric = None;
    for _ in 0..GEOMETRY_RETRIES {
        let shift = (rng.random_range(-m..=m), rng.random_range(-m..=m));
        let scale = (rng.random_range(slo..=shi), rng.random_range(slo..=shi));
        if let Ok((s, map)) = apply_geometric(sample, shift, scale, cfg.output_size) {
            geometric = Some((s, map, shift, scale));
            break;
        }
    }
    let Some((mut out, crop, shift, scale)) = geometric else {
        return Err(Error::Degenerate(format!(
            "face box of sample {} stayed degenerate after {GEOMETRY_RETRIES} jitter draws",
            sample.id
        )));
    };

    let (img, noise_amplitude) = noise_with_amplitude(&out.image, cfg.noise_max_frac, rng);
    let contrast_offset = rng.random_range(cfg.contrast_range.0..=cfg.contrast_range.1);
    let mut img = adjust_contrast(&img, contrast_offset);
    let mut blur_sigma = None;
    if rng.random_bool(cfg.blur_prob) {
        let sigma = rng.random_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
        img = gaussian_blur(&img, sigma);
        blur_sigma = Some(sigma);
    }
    let (img, occlusion) = occlude(&img, cfg, rng);
    out.image = img;
    Ok((
        out,
        AugmentRecord {
            shift,
            scale,
            crop,
            noise_amplitude,
            contrast_offset,
            blur_sigma,
            occlusion,
        },
    ))
}
