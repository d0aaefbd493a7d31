//! Synthetic face-like images with exact landmark ground truth.
//!
//! Each sample places the built-in 3D template at a random pose, projects it
//! with a weak-perspective camera and renders a shaded head, dark Gaussian
//! blobs at visible landmarks and thin contour strokes on a textured
//! background. Small poses form the `common` subset, large yaw the
//! `challenging` one.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{save_dataset, ManifestRow};
use crate::pose::linalg::{add, dot, norm, scale, sub};
use crate::pose::{head_normal, rotation_from_euler, EulerAngles, Mat3, RigidTransform, Template3D, Vec3, HEAD_SEMI_AXES};
use crate::rng::stream;
use crate::types::{Dataset, GrayImage, LandmarkSet, Point2, Sample, Subset};

/// Pose limits in degrees; yaw magnitude is drawn from `yaw_abs` with a random sign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRange {
    pub yaw_abs: (f64, f64),
    pub pitch_max: f64,
    pub roll_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderStyle {
    pub background_level: f64,
    pub texture_amplitude: f64,
    pub pixel_noise: f64,
    pub face_level: f64,
    /// Added to `face_level` in proportion to the cosine towards the camera.
    pub face_shading: f64,
    pub hair_level: f64,
    pub blob_amplitude: f64,
    /// Blob standard deviation in template units.
    pub blob_sigma: f64,
    pub edge_intensity: f64,
    pub edge_width_px: f64,
    /// Landmarks whose surface normal is not turned towards the camera by
    /// at least this cosine are treated as self-occluded and not drawn.
    pub visibility_cos: f64,
    pub supersample: usize,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            background_level: 70.0,
            texture_amplitude: 25.0,
            pixel_noise: 4.0,
            face_level: 60.0,
            face_shading: 130.0,
            hair_level: 35.0,
            blob_amplitude: 90.0,
            blob_sigma: 4.5,
            edge_intensity: 40.0,
            edge_width_px: 0.5,
            visibility_cos: 0.1,
            supersample: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub train_common: usize,
    pub train_challenging: usize,
    pub test_common: usize,
    pub test_challenging: usize,
    pub landmark_count: usize,
    pub image_size: usize,
    pub common_pose: PoseRange,
    pub challenging_pose: PoseRange,
    /// Standard deviation of the annotation noise, pixels.
    pub jitter_sigma_px: f64,
    /// Pixels per template unit, as a fraction of the image size per 100 units.
    pub scale_range: (f64, f64),
    /// Maximum offset of the face centroid from the image center, as a fraction of the size.
    pub center_jitter: f64,
    pub focal_px: f64,
    pub style: RenderStyle,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_common: 1600,
            train_challenging: 400,
            test_common: 250,
            test_challenging: 250,
            landmark_count: 5,
            image_size: 32,
            common_pose: PoseRange { yaw_abs: (0.0, 20.0), pitch_max: 10.0, roll_max: 10.0 },
            challenging_pose: PoseRange { yaw_abs: (30.0, 60.0), pitch_max: 25.0, roll_max: 20.0 },
            jitter_sigma_px: 0.25,
            scale_range: (0.55, 0.7),
            center_jitter: 0.06,
            focal_px: 600.0,
            style: RenderStyle::default(),
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::InvalidArgument(format!("image_size must be at least 16, got {}", self.image_size)));
        }
        Template3D::for_count(self.landmark_count)?;
        let (c, h) = (self.common_pose, self.challenging_pose);
        for r in [c, h] {
            if !(0.0 <= r.yaw_abs.0 && r.yaw_abs.0 <= r.yaw_abs.1 && r.yaw_abs.1 < 90.0) || r.pitch_max < 0.0 || r.roll_max < 0.0 {
                return Err(Error::InvalidArgument("pose ranges must be ordered, non-negative and below 90 degrees".into()));
            }
        }
        if c.yaw_abs.1 >= h.yaw_abs.0 {
            return Err(Error::InvalidArgument(format!(
                "common yaw range up to {} overlaps challenging range from {}",
                c.yaw_abs.1, h.yaw_abs.0
            )));
        }
        if !(self.scale_range.0 > 0.0 && self.scale_range.0 <= self.scale_range.1) {
            return Err(Error::InvalidArgument("scale_range must satisfy 0 < lo <= hi".into()));
        }
        if !(self.jitter_sigma_px >= 0.0 && self.center_jitter >= 0.0 && self.focal_px > 0.0) {
            return Err(Error::InvalidArgument("jitter, center_jitter and focal_px must be non-negative (focal positive)".into()));
        }
        if self.style.supersample == 0 {
            return Err(Error::InvalidArgument("supersample must be at least 1".into()));
        }
        Ok(())
    }
}

/// Generating parameters of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthMeta {
    pub id: String,
    pub subset: Subset,
    pub euler: EulerAngles,
    /// Weak-perspective pose: template origin mapped into the camera frame.
    pub transform: RigidTransform,
    /// Pixels per template unit.
    pub scale: f64,
    /// Noise-free projections.
    pub exact: LandmarkSet,
    pub visible: Vec<bool>,
}

impl SynthMeta {
    pub fn manifest_row(&self) -> ManifestRow {
        let [yaw_deg, pitch_deg, roll_deg] = self.euler.to_degrees();
        ManifestRow { id: self.id.clone(), subset: self.subset, yaw_deg, pitch_deg, roll_deg }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSplit {
    pub dataset: Dataset,
    pub meta: Vec<SynthMeta>,
}

impl SynthSplit {
    pub fn manifest(&self) -> Vec<ManifestRow> {
        self.meta.iter().map(SynthMeta::manifest_row).collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        save_dataset(&self.dataset, &self.manifest(), dir)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub train: SynthSplit,
    pub test: SynthSplit,
}

impl SynthOutput {
    /// Writes `<dir>/train` and `<dir>/test`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.train.save(dir.join("train"))?;
        self.test.save(dir.join("test"))
    }
}

/// Stroke groups drawn between consecutive landmarks; `true` closes the loop.
fn contours(count: usize) -> Vec<(Vec<usize>, bool)> {
    match count {
        68 => vec![
            ((0..17).collect(), false),
            ((17..22).collect(), false),
            ((22..27).collect(), false),
            ((27..31).collect(), false),
            ((31..36).collect(), false),
            ((36..42).collect(), true),
            ((42..48).collect(), true),
            ((48..60).collect(), true),
            ((60..68).collect(), true),
        ],
        5 => vec![(vec![3, 4], false)],
        _ => vec![],
    }
}

struct Scene<'a> {
    template: &'a Template3D,
    rotation: Mat3,
    scale: f64,
    /// Image position of the template centroid.
    center: (f64, f64),
    projected: Vec<Point2>,
    visible: Vec<bool>,
}

impl Scene<'_> {
    /// First hit of the camera ray through image point `(u, v)` with the head
    /// ellipsoid, in template coordinates.
    fn ray_hit(&self, u: f64, v: f64) -> Option<Vec3> {
        let rt = self.rotation.transpose();
        let lateral = [(u - self.center.0) / self.scale, (v - self.center.1) / self.scale, 0.0];
        let origin = add(self.template.centroid(), rt * lateral);
        let dir = rt * [0.0, 0.0, 1.0];
        let ax = HEAD_SEMI_AXES;
        let o = [origin[0] / ax[0], origin[1] / ax[1], origin[2] / ax[2]];
        let d = [dir[0] / ax[0], dir[1] / ax[1], dir[2] / ax[2]];
        let (a, b, c) = (dot(d, d), 2.0 * dot(o, d), dot(o, o) - 1.0);
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let t = (-b - disc.sqrt()) / (2.0 * a);
        Some(add(origin, scale(dir, t)))
    }

    fn shade(&self, u: f64, v: f64, style: &RenderStyle) -> Option<f64> {
        let hit = self.ray_hit(u, v)?;
        if hit[2] > 0.0 {
            return Some(style.hair_level);
        }
        let ax = HEAD_SEMI_AXES;
        let n = [hit[0] / (ax[0] * ax[0]), hit[1] / (ax[1] * ax[1]), hit[2] / (ax[2] * ax[2])];
        let nc = self.rotation * scale(n, 1.0 / norm(n));
        Some(style.face_level + style.face_shading * (-nc[2]).max(0.0))
    }
}

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p.x - a.x - t * dx).hypot(p.y - a.y - t * dy)
}

fn render(scene: &Scene, size: usize, style: &RenderStyle, rng: &mut impl Rng) -> GrayImage {
    // low-frequency background texture from a few random plane waves
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let th = rng.random_range(0.0..PI);
            let freq = rng.random_range(0.5..3.0) * 2.0 * PI / size as f64;
            (th, freq, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let ss = style.supersample;
    let blob_sigma = (style.blob_sigma * scene.scale).max(0.5);
    let strokes: Vec<(Point2, Point2)> = contours(scene.projected.len())
        .into_iter()
        .flat_map(|(idx, closed)| {
            let mut segs: Vec<(usize, usize)> = idx.windows(2).map(|w| (w[0], w[1])).collect();
            if closed && idx.len() > 2 {
                segs.push((*idx.last().expect("non-empty"), idx[0]));
            }
            segs
        })
        .filter(|(a, b)| scene.visible[*a] && scene.visible[*b])
        .map(|(a, b)| (scene.projected[a], scene.projected[b]))
        .collect();

    let mut data = Vec::with_capacity(size * size);
    for j in 0..size {
        for i in 0..size {
            let (px, py) = (i as f64 + 0.5, j as f64 + 0.5);
            let mut acc = 0.0;
            for sy in 0..ss {
                for sx in 0..ss {
                    let u = i as f64 + (sx as f64 + 0.5) / ss as f64;
                    let v = j as f64 + (sy as f64 + 0.5) / ss as f64;
                    acc += scene.shade(u, v, style).unwrap_or_else(|| {
                        let tex: f64 = waves.iter().map(|(th, f, ph)| (f * (u * th.cos() + v * th.sin()) + ph).sin()).sum::<f64>() / 3.0;
                        style.background_level + style.texture_amplitude * tex
                    });
                }
            }
            let mut value = acc / (ss * ss) as f64;
            let p = Point2::new(px, py);
            for (lm, vis) in scene.projected.iter().zip(&scene.visible) {
                if *vis {
                    let d2 = (px - lm.x).powi(2) + (py - lm.y).powi(2);
                    value -= style.blob_amplitude * (-d2 / (2.0 * blob_sigma * blob_sigma)).exp();
                }
            }
            for (a, b) in &strokes {
                let d = segment_distance(p, *a, *b);
                value -= style.edge_intensity * (-(d * d) / (2.0 * style.edge_width_px * style.edge_width_px)).exp();
            }
            if style.pixel_noise > 0.0 {
                value += rng.random_range(-style.pixel_noise..=style.pixel_noise);
            }
            data.push(value.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(size, size, data).expect("buffer sized to image")
}

fn draw_pose(range: &PoseRange, rng: &mut impl Rng) -> EulerAngles {
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let yaw = sign * rng.random_range(range.yaw_abs.0..=range.yaw_abs.1);
    let pitch = rng.random_range(-range.pitch_max..=range.pitch_max);
    let roll = rng.random_range(-range.roll_max..=range.roll_max);
    EulerAngles::from_degrees(yaw, pitch, roll)
}

const SPLIT_TRAIN: u64 = 1;
const SPLIT_TEST: u64 = 2;

fn generate_sample(cfg: &SynthConfig, template: &Template3D, split: u64, subset: Subset, index: usize) -> (Sample, SynthMeta) {
    let tag = match subset {
        Subset::Common => 0,
        Subset::Challenging => 1,
    };
    let mut rng = stream(cfg.seed, &[split, tag, index as u64]);
    let range = match subset {
        Subset::Common => &cfg.common_pose,
        Subset::Challenging => &cfg.challenging_pose,
    };
    let euler = draw_pose(range, &mut rng);
    let rotation = rotation_from_euler(&euler);
    let size = cfg.image_size as f64;
    let s = size * rng.random_range(cfg.scale_range.0..=cfg.scale_range.1) / 100.0;
    let half = size / 2.0;
    let center = (
        half + size * rng.random_range(-cfg.center_jitter..=cfg.center_jitter),
        half + size * rng.random_range(-cfg.center_jitter..=cfg.center_jitter),
    );
    let c = template.centroid();
    let projected: Vec<Point2> = template
        .points
        .iter()
        .map(|x| {
            let y = rotation * sub(*x, c);
            Point2::new(center.0 + s * y[0], center.1 + s * y[1])
        })
        .collect();
    let visible: Vec<bool> = template
        .points
        .iter()
        .map(|x| (rotation * head_normal(*x))[2] < -cfg.style.visibility_cos)
        .collect();
    let scene = Scene { template, rotation, scale: s, center, projected: projected.clone(), visible: visible.clone() };
    let image = render(&scene, cfg.image_size, &cfg.style, &mut rng);

    let noise = Normal::new(0.0, cfg.jitter_sigma_px.max(f64::MIN_POSITIVE)).expect("valid std");
    let annotation = LandmarkSet {
        points: projected
            .iter()
            .map(|p| {
                if cfg.jitter_sigma_px > 0.0 {
                    Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
                } else {
                    *p
                }
            })
            .collect(),
    };
    let rc = rotation * c;
    let transform = RigidTransform {
        rotation,
        translation: [(center.0 - half) / s - rc[0], (center.1 - half) / s - rc[1], cfg.focal_px / s],
    };
    let id = format!("{}_{index:05}", subset.as_str());
    let sample = Sample::new(id.clone(), image, annotation, subset);
    let meta = SynthMeta { id, subset, euler, transform, scale: s, exact: LandmarkSet { points: projected }, visible };
    (sample, meta)
}

fn generate_split(cfg: &SynthConfig, template: &Template3D, split: u64, common: usize, challenging: usize) -> Result<SynthSplit> {
    let jobs: Vec<(Subset, usize)> = (0..common)
        .map(|i| (Subset::Common, i))
        .chain((0..challenging).map(|i| (Subset::Challenging, i)))
        .collect();
    let (samples, meta): (Vec<Sample>, Vec<SynthMeta>) = jobs
        .par_iter()
        .map(|&(subset, i)| generate_sample(cfg, template, split, subset, i))
        .collect::<Vec<_>>()
        .into_iter()
        .unzip();
    Ok(SynthSplit { dataset: Dataset::new(samples)?, meta })
}

/// Train and test splits; identical configs give identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let template = Template3D::for_count(cfg.landmark_count)?;
    Ok(SynthOutput {
        train: generate_split(cfg, &template, SPLIT_TRAIN, cfg.train_common, cfg.train_challenging)?,
        test: generate_split(cfg, &template, SPLIT_TEST, cfg.test_common, cfg.test_challenging)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { train_common: 12, train_challenging: 6, test_common: 4, test_challenging: 4, seed, ..SynthConfig::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(3)).unwrap();
        assert_eq!(a, generate(&small(3)).unwrap());
        assert_ne!(a.train.dataset, generate(&small(4)).unwrap().train.dataset);
        assert_eq!(a.train.dataset.count(Subset::Common), 12);
        assert_eq!(a.test.dataset.count(Subset::Challenging), 4);
    }

    #[test]
    fn pose_ranges_hold() {
        let out = generate(&SynthConfig { train_common: 200, train_challenging: 200, test_common: 0, test_challenging: 0, ..SynthConfig::default() }).unwrap();
        for m in &out.train.meta {
            let [yaw, pitch, roll] = m.euler.to_degrees();
            match m.subset {
                Subset::Common => assert!(yaw.abs() <= 20.0 && pitch.abs() <= 10.0 && roll.abs() <= 10.0),
                Subset::Challenging => assert!((30.0..=60.0).contains(&yaw.abs()) && pitch.abs() <= 25.0),
            }
        }
    }

    #[test]
    fn blob_centers_match_landmarks() {
        let style = RenderStyle {
            texture_amplitude: 0.0,
            pixel_noise: 0.0,
            face_shading: 0.0,
            face_level: 200.0,
            hair_level: 200.0,
            background_level: 200.0,
            edge_intensity: 0.0,
            visibility_cos: -1.0,
            ..RenderStyle::default()
        };
        let cfg = SynthConfig { image_size: 64, jitter_sigma_px: 0.0, style, ..small(5) };
        let out = generate(&cfg).unwrap();
        for s in &out.train.dataset.samples {
            let pts = &s.annotation.points;
            for (i, p) in pts.iter().enumerate() {
                // overlapping blobs pull each other's centroid
                if pts.iter().enumerate().any(|(j, q)| j != i && p.distance(q) < 8.0) {
                    continue;
                }
                // darkness-weighted centroid in a window around the landmark
                let r = 3i64;
                let (cx, cy) = (p.x.floor() as i64, p.y.floor() as i64);
                let (mut w, mut mx, mut my) = (0.0, 0.0, 0.0);
                for y in cy - r..=cy + r {
                    for x in cx - r..=cx + r {
                        let d = 200.0 - s.image.get(x as usize, y as usize) as f64;
                        w += d;
                        mx += d * (x as f64 + 0.5);
                        my += d * (y as f64 + 0.5);
                    }
                }
                let (ex, ey) = (mx / w - p.x, my / w - p.y);
                assert!(ex.hypot(ey) < 0.5, "{} off by ({ex}, {ey})", s.id);
            }
        }
    }

    #[test]
    fn challenging_hides_landmarks_more_often() {
        let cfg = SynthConfig { train_common: 100, train_challenging: 100, test_common: 0, test_challenging: 0, landmark_count: 68, ..SynthConfig::default() };
        let out = generate(&cfg).unwrap();
        let hidden = |tag| out.train.meta.iter().filter(|m| m.subset == tag).map(|m| m.visible.iter().filter(|v| !**v).count()).sum::<usize>();
        assert!(hidden(Subset::Challenging) > hidden(Subset::Common));
    }

    #[test]
    fn pose_fit_recovers_generating_pose() {
        use crate::pose::{fit_head_pose, rotation_distance, CameraModel, FitOptions};
        let cfg = small(9);
        let out = generate(&cfg).unwrap();
        let template = Template3D::for_count(cfg.landmark_count).unwrap();
        let half = cfg.image_size as f64 / 2.0;
        let camera = CameraModel { focal_px: Some(cfg.focal_px), principal: (half, half) };
        for m in &out.train.meta {
            let fit = fit_head_pose(&m.exact, &template, &camera, None, &FitOptions::default()).unwrap();
            assert!(rotation_distance(&fit.transform.rotation, &m.transform.rotation).to_radians() < 1e-3, "{}", m.id);
            let t = m.transform.translation;
            let err = norm(sub(fit.transform.translation, t)) / norm(t);
            assert!(err < 1e-3, "{}: relative translation error {err}", m.id);
        }
    }

    #[test]
    fn rejects_overlapping_ranges() {
        let mut cfg = SynthConfig::default();
        cfg.common_pose.yaw_abs = (0.0, 35.0);
        assert!(cfg.validate().is_err());
        assert!(SynthConfig { image_size: 8, ..SynthConfig::default() }.validate().is_err());
    }
}
