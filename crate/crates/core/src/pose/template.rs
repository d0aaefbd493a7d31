use std::fmt::Write as _;
use std::path::Path;

use super::linalg::{add, scale, Vec3};
use crate::error::{Error, Result};
use crate::io::csv_error;

/// Rigid 3D landmark template.
///
/// Axes follow the image: x right, y down, z away from the camera, so the
/// nose protrudes towards negative z.
#[derive(Clone, Debug, PartialEq)]
pub struct Template3D {
    pub points: Vec<Vec3>,
    pub units_per_mm: f64,
    centroid: Vec3,
}

const HEAD_A: f64 = 75.0;
const HEAD_B: f64 = 95.0;
const HEAD_C: f64 = 60.0;

/// Semi-axes of the half-ellipsoid head the built-in templates sit on.
pub const HEAD_SEMI_AXES: Vec3 = [HEAD_A, HEAD_B, HEAD_C];

/// Outward unit normal of the head ellipsoid below `(p.x, p.y)` on its front half.
pub fn head_normal(p: Vec3) -> Vec3 {
    let q = (1.0 - (p[0] / HEAD_A).powi(2) - (p[1] / HEAD_B).powi(2)).max(0.0);
    let z = -HEAD_C * q.sqrt();
    let n = [p[0] / (HEAD_A * HEAD_A), p[1] / (HEAD_B * HEAD_B), z / (HEAD_C * HEAD_C)];
    scale(n, 1.0 / super::linalg::norm(n))
}

fn surface(x: f64, y: f64, lift: f64) -> Vec3 {
    let q = 1.0 - (x / HEAD_A).powi(2) - (y / HEAD_B).powi(2);
    [x, y, -HEAD_C * q.max(0.0).sqrt() - lift]
}

impl Template3D {
    pub fn new(points: Vec<Vec3>, units_per_mm: f64) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Degenerate(format!("template needs at least 3 points, got {}", points.len())));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("template has non-finite coordinates".into()));
        }
        let n = points.len() as f64;
        let centroid = scale(points.iter().fold([0.0; 3], |a, p| add(a, *p)), 1.0 / n);
        let t = Self {
            points,
            units_per_mm,
            centroid,
        };
        // collinear templates leave the rotation about their axis undetermined
        let centered: Vec<Vec3> = t.points.iter().map(|p| super::linalg::sub(*p, centroid)).collect();
        let mut cov = super::Mat3::ZERO;
        for p in &centered {
            cov = cov + super::Mat3::outer(*p, *p);
        }
        let (vals, _) = super::linalg::symmetric_eigen(&cov);
        if !(vals[1] > 1e-12 * vals[0].max(f64::MIN_POSITIVE)) {
            return Err(Error::Degenerate("template points are collinear or coincident".into()));
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    /// Face-like 68-point template in millimetres following the Multi-PIE
    /// landmark order (jaw, brows, nose, eyes, mouth).
    pub fn synthetic_68() -> Self {
        let mut p: Vec<Vec3> = Vec::with_capacity(68);
        // jaw 0-16, temple to temple through the chin
        for k in 0..17 {
            let phi = std::f64::consts::PI * k as f64 / 16.0;
            p.push(surface(-68.0 * phi.cos(), -5.0 + 65.0 * phi.sin(), 0.0));
        }
        // brows 17-21 and 22-26
        for side in [-1.0, 1.0] {
            for k in 0..5 {
                let t = k as f64 / 4.0;
                let x = if side < 0.0 { -55.0 + 40.0 * t } else { 15.0 + 40.0 * t };
                let arch = 6.0 * (std::f64::consts::PI * t).sin();
                p.push(surface(x, -38.0 - arch, 2.0));
            }
        }
        // nose bridge 27-30 down to the tip
        for (y, lift) in [(-25.0, 5.0), (-15.0, 10.0), (-5.0, 15.0), (5.0, 22.0)] {
            p.push(surface(0.0, y, lift));
        }
        // lower nose 31-35
        for (x, lift) in [(-14.0, 5.0), (-7.0, 9.0), (0.0, 12.0), (7.0, 9.0), (14.0, 5.0)] {
            p.push(surface(x, 15.0, lift));
        }
        // eyes 36-41 and 42-47: corner, two upper, corner, two lower
        for cx in [-32.0, 32.0] {
            let cy = -18.0;
            for (dx, dy) in [(-12.0, 0.0), (-5.0, -4.0), (5.0, -4.0), (12.0, 0.0), (5.0, 4.0), (-5.0, 4.0)] {
                p.push(surface(cx + dx, cy + dy, -3.0));
            }
        }
        // outer lip 48-59, starting at the image-left corner over the upper lip
        for k in 0..12 {
            let th = std::f64::consts::PI + std::f64::consts::PI * k as f64 / 6.0;
            let ry = if k <= 6 { 9.0 } else { 10.0 };
            p.push(surface(25.0 * th.cos(), 40.0 + ry * th.sin(), 4.0));
        }
        // inner lip 60-67
        for k in 0..8 {
            let th = std::f64::consts::PI + std::f64::consts::PI * k as f64 / 4.0;
            p.push(surface(15.0 * th.cos(), 40.0 + 4.0 * th.sin(), 4.0));
        }
        Self::new(p, 1.0).expect("built-in template is well formed")
    }

    /// Five-point layout: two eye centers, nose tip, two mouth corners.
    pub fn synthetic_5() -> Self {
        let full = Self::synthetic_68();
        let mean = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            scale(r.map(|i| full.points[i]).fold([0.0; 3], add), 1.0 / n)
        };
        let pts = vec![mean(36..42), mean(42..48), full.points[30], full.points[48], full.points[54]];
        Self::new(pts, 1.0).expect("built-in template is well formed")
    }

    pub fn for_count(count: usize) -> Result<Self> {
        match count {
            68 => Ok(Self::synthetic_68()),
            5 => Ok(Self::synthetic_5()),
            n => Err(Error::InvalidArgument(format!(
                "no built-in template with {n} landmarks; supply a template CSV"
            ))),
        }
    }

    /// Reads `idx,x,y,z` rows (header required); rows may come in any order
    /// but indices must cover `0..n` exactly once.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let cols: Vec<&str> = headers.iter().map(str::trim).collect();
        if cols != ["idx", "x", "y", "z"] {
            return Err(Error::parse(path, 1, format!("expected header idx,x,y,z, got {}", cols.join(","))));
        }
        let mut rows: Vec<(usize, Vec3)> = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::parse(path, line, format!("bad value in column {k}")))
            };
            let idx = rec
                .get(0)
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::parse(path, line, "bad idx"))?;
            rows.push((idx, [num(1)?, num(2)?, num(3)?]));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::parse(path, 0, "template indices must be 0..n without gaps"));
        }
        Self::new(rows.into_iter().map(|r| r.1).collect(), 1.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("idx,x,y,z\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(out, "{i},{:.9},{:.9},{:.9}", p[0], p[1], p[2]);
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
