//! On-disk formats: 300W-style `.pts` annotations, binary PGM images and the
//! `<dir>/<subset>/<id>.{pgm,pts}` dataset layout with its manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{Dataset, GrayImage, LandmarkSet, Point2, Sample, Subset};

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn parse_pts(text: &str, path: &Path) -> Result<LandmarkSet> {
    let mut n_points: Option<usize> = None;
    let mut in_body = false;
    let mut closed = false;
    let mut points = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if closed {
            return Err(Error::parse(path, line_no, "content after closing brace"));
        }
        if !in_body {
            if line == "{" {
                if n_points.is_none() {
                    return Err(Error::parse(path, line_no, "missing n_points header"));
                }
                in_body = true;
            } else if let Some((key, value)) = line.split_once(':') {
                match key.trim() {
                    "n_points" => {
                        let n = value.trim().parse::<usize>().map_err(|_| {
                            Error::parse(path, line_no, format!("bad n_points value {:?}", value.trim()))
                        })?;
                        n_points = Some(n);
                    }
                    "version" => {}
                    other => {
                        return Err(Error::parse(path, line_no, format!("unknown header key {other:?}")))
                    }
                }
            } else {
                return Err(Error::parse(path, line_no, format!("malformed header line {line:?}")));
            }
            continue;
        }
        if line == "}" {
            closed = true;
            let expected = n_points.unwrap_or(0);
            if points.len() != expected {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("n_points is {expected} but {} coordinate lines were given", points.len()),
                ));
            }
            continue;
        }
        let mut toks = line.split_whitespace();
        let (Some(xs), Some(ys), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(Error::parse(path, line_no, "expected two coordinates"));
        };
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, line_no, format!("non-numeric token {s:?}")))
        };
        points.push(Point2::new(parse(xs)?, parse(ys)?));
    }

    if !closed {
        let last = text.lines().count().max(1);
        return Err(Error::parse(path, last, "missing closing brace"));
    }
    LandmarkSet::new(points)
}

pub fn load_pts(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pts(&text, path)
}

pub fn format_pts(set: &LandmarkSet) -> String {
    let mut out = String::new();
    let _ = write!(out, "version: 1\nn_points: {}\n{{\n", set.len());
    for p in &set.points {
        let _ = writeln!(out, "{:.6} {:.6}", p.x, p.y);
    }
    out.push_str("}\n");
    out
}

pub fn save_pts(set: &LandmarkSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_pts(set)).map_err(|e| Error::io(path, e))
}

/// Decodes a binary `P5` PGM with maxval at most 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(bytes).unwrap_or_default();
    if magic != "P5" {
        return Err(Error::UnsupportedFormat(format!("expected P5 magic, found {magic:?}")));
    }
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_token(bytes)
            .ok_or_else(|| Error::UnsupportedFormat(format!("truncated header: missing {name}")))?;
        *slot = tok
            .parse()
            .map_err(|_| Error::UnsupportedFormat(format!("bad {name} {tok:?}")))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedFormat(format!(
            "maxval {maxval} not supported (8-bit only)"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = width * height;
    if start > bytes.len() || bytes.len() - start < n {
        return Err(Error::UnsupportedFormat(format!(
            "truncated payload: expected {n} bytes"
        )));
    }
    GrayImage::new(width, height, bytes[start..start + n].to_vec())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// One manifest row. Pose angles are absent for ingested real data.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub subset: Subset,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

pub fn write_manifest(rows: &[ManifestRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("id,subset,yaw_deg,pitch_deg,roll_deg\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            r.id, r.subset, r.yaw_deg, r.pitch_deg, r.roll_deg
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != 5 {
            return Err(Error::parse(path, line, format!("expected 5 columns, got {}", rec.len())));
        }
        let num = |k: usize| {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("non-numeric token {:?}", &rec[k])))
        };
        rows.push(ManifestRow {
            id: rec[0].trim().to_string(),
            subset: rec[1]
                .parse()
                .map_err(|e: Error| Error::parse(path, line, e.to_string()))?,
            yaw_deg: num(2)?,
            pitch_deg: num(3)?,
            roll_deg: num(4)?,
        });
    }
    Ok(rows)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

fn sample_paths(dir: &Path, subset: Subset, id: &str) -> (PathBuf, PathBuf) {
    let base = dir.join(subset.as_str());
    (base.join(format!("{id}.pgm")), base.join(format!("{id}.pts")))
}

/// Writes a dataset as `<dir>/<subset>/<id>.pgm|.pts`. Manifest rows are
/// supplied by the caller because pose metadata is not part of a `Sample`.
pub fn save_dataset(dataset: &Dataset, rows: &[ManifestRow], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for subset in Subset::ALL {
        let d = dir.join(subset.as_str());
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for s in &dataset.samples {
        let (pgm, pts) = sample_paths(dir, s.subset, &s.id);
        save_pgm(&s.image, pgm)?;
        save_pts(&s.annotation, pts)?;
    }
    write_manifest(rows, dir.join(MANIFEST_FILE))
}

/// Loads a dataset directory. With a manifest the row order is kept; without
/// one the subset directories are scanned and ids sorted. Face boxes cover the
/// whole image.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = dir.join(MANIFEST_FILE);
    let entries: Vec<(String, Subset)> = if manifest.exists() {
        read_manifest(&manifest)?
            .into_iter()
            .map(|r| (r.id, r.subset))
            .collect()
    } else {
        let mut found = Vec::new();
        for subset in Subset::ALL {
            let d = dir.join(subset.as_str());
            if !d.is_dir() {
                continue;
            }
            let mut ids: Vec<String> = fs::read_dir(&d)
                .map_err(|e| Error::io(&d, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "pts"))
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            ids.sort();
            found.extend(ids.into_iter().map(|id| (id, subset)));
        }
        found
    };
    if entries.is_empty() {
        return Err(Error::Empty(format!("no samples found under {}", dir.display())));
    }
    let mut samples = Vec::with_capacity(entries.len());
    for (id, subset) in entries {
        let (pgm, pts) = sample_paths(dir, subset, &id);
        let image = load_pgm(pgm)?;
        let annotation = load_pts(pts)?;
        samples.push(Sample::new(id, image, annotation, subset));
    }
    Dataset::new(samples)
}
