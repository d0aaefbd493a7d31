//! NME, discard-by-validity, signal/error correlation and availability.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{prepare_input, to_source_frame};
use crate::error::{Error, Result};
use crate::io::csv_error;
use crate::landmarks::{interocular_distance, EyeScheme};
use crate::net::ModelState;
use crate::stats::{pearson_test, Correlation};
use crate::types::{Dataset, LandmarkSet, Subset, TripletVector};

/// Per-sample evaluation: true error and predicted error for every landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub sample_id: String,
    pub errors: Vec<f64>,
    pub signals: Vec<f64>,
    pub interocular: f64,
    pub subset: Subset,
}

impl EvalRecord {
    pub fn new(sample_id: impl Into<String>, errors: Vec<f64>, signals: Vec<f64>, interocular: f64, subset: Subset) -> Result<Self> {
        if errors.len() != signals.len() {
            return Err(Error::CountMismatch { expected: errors.len(), got: signals.len() });
        }
        if errors.is_empty() {
            return Err(Error::Empty("record without landmarks".into()));
        }
        check_interocular(interocular)?;
        Ok(Self { sample_id: sample_id.into(), errors, signals, interocular, subset })
    }

    /// Euclidean errors of `pred` against `gt`, with the predicted validity as signal.
    pub fn from_prediction(sample_id: &str, pred: &TripletVector, gt: &LandmarkSet, scheme: &EyeScheme, subset: Subset) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::CountMismatch { expected: gt.len(), got: pred.len() });
        }
        let errors = pred.triplets.iter().zip(&gt.points).map(|(t, g)| (t.x - g.x).hypot(t.y - g.y)).collect();
        let signals = pred.triplets.iter().map(|t| t.validity).collect();
        Self::new(sample_id, errors, signals, interocular_distance(gt, scheme)?, subset)
    }
}

fn check_interocular(iod: f64) -> Result<()> {
    if !(iod > 0.0 && iod.is_finite()) {
        return Err(Error::DegenerateNormalizer(format!("interocular distance {iod}")));
    }
    Ok(())
}

/// Mean over samples of the mean normalized landmark error (a fraction, not ×100).
pub fn nme(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("no records to evaluate".into()));
    }
    let mut sum = 0.0;
    for r in records {
        check_interocular(r.interocular)?;
        sum += r.errors.iter().sum::<f64>() / r.errors.len() as f64 / r.interocular;
    }
    Ok(sum / records.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscardMode {
    /// Rank all landmarks of the set together.
    #[default]
    Global,
    /// Rank within each image and drop the same share from every image.
    PerImage,
}

fn discard_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// NME after dropping the `fraction` of landmark predictions that claim the
/// largest error.
///
/// Global mode ranks by signal relative to the sample's interocular distance
/// (the same normalization the error gets) and averages the kept normalized
/// errors over all kept landmarks. Per-image mode drops `⌊fraction·L⌋`
/// landmarks from each image and keeps the two-level mean. Ties in the
/// signal fall back to record order, then landmark order. Fraction 0
/// returns `nme` unchanged.
pub fn discard_worst(records: &[EvalRecord], fraction: f64, mode: DiscardMode) -> Result<f64> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("discard fraction must lie in [0, 1), got {fraction}")));
    }
    let base = nme(records)?;
    match mode {
        DiscardMode::Global => {
            let mut pairs: Vec<(f64, f64, usize)> = Vec::new();
            for r in records {
                for (e, v) in r.errors.iter().zip(&r.signals) {
                    pairs.push((v / r.interocular, e / r.interocular, pairs.len()));
                }
            }
            let k = discard_count(fraction, pairs.len());
            if k == 0 {
                return Ok(base);
            }
            if k >= pairs.len() {
                return Err(Error::Infeasible("discarding every landmark".into()));
            }
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
            let mut kept: Vec<f64> = pairs[k..].iter().map(|p| p.1).collect();
            kept.sort_by(f64::total_cmp);
            Ok(kept.iter().sum::<f64>() / kept.len() as f64)
        }
        DiscardMode::PerImage => {
            let mut sum = 0.0;
            let mut any = false;
            for r in records {
                let k = discard_count(fraction, r.errors.len());
                if k >= r.errors.len() {
                    return Err(Error::Infeasible(format!("discarding every landmark of {}", r.sample_id)));
                }
                any |= k > 0;
                let mut order: Vec<usize> = (0..r.errors.len()).collect();
                order.sort_by(|&a, &b| r.signals[b].total_cmp(&r.signals[a]).then(a.cmp(&b)));
                let kept = &order[k..];
                sum += kept.iter().map(|&i| r.errors[i]).sum::<f64>() / kept.len() as f64 / r.interocular;
            }
            if !any {
                return Ok(base);
            }
            Ok(sum / records.len() as f64)
        }
    }
}

/// Fraction of samples whose share of landmarks with signal above
/// `threshold_px` is at most `allowed_bad_frac`.
pub fn availability(records: &[EvalRecord], threshold_px: f64, allowed_bad_frac: f64) -> Result<f64> {
    if !(threshold_px > 0.0) {
        return Err(Error::InvalidArgument(format!("availability threshold must be positive, got {threshold_px}")));
    }
    if records.is_empty() {
        return Err(Error::Empty("no records to evaluate".into()));
    }
    let ok = records
        .iter()
        .filter(|r| {
            let bad = r.signals.iter().filter(|v| **v > threshold_px).count();
            bad as f64 <= allowed_bad_frac * r.signals.len() as f64 + 1e-12
        })
        .count();
    Ok(ok as f64 / records.len() as f64)
}

/// Pooled correlation between signal and error over every landmark of every record.
pub fn signal_error_correlation(records: &[EvalRecord]) -> Result<Correlation> {
    let v: Vec<f64> = records.iter().flat_map(|r| r.signals.iter().copied()).collect();
    let e: Vec<f64> = records.iter().flat_map(|r| r.errors.iter().copied()).collect();
    pearson_test(&v, &e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub discard_mode: DiscardMode,
    pub availability_threshold_px: f64,
    pub allowed_bad_frac: f64,
    /// Needed for landmark counts without a built-in scheme.
    pub eye_scheme: Option<EyeScheme>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            discard_mode: DiscardMode::Global,
            availability_threshold_px: 2.0,
            allowed_bad_frac: 0.1,
            eye_scheme: None,
        }
    }
}

pub const DISCARD_FRACTIONS: [f64; 4] = [0.0, 0.1, 0.2, 0.3];

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsetSummary {
    /// `common`, `challenging` or `full`.
    pub subset: String,
    pub samples: usize,
    /// NME at each of `DISCARD_FRACTIONS` (fractions, not ×100).
    pub nme: [f64; 4],
    /// `None` when the correlation is undefined (e.g. a constant signal).
    pub correlation: Option<Correlation>,
    pub availability: f64,
}

pub fn summarize(name: &str, records: &[EvalRecord], cfg: &EvalConfig) -> Result<SubsetSummary> {
    let mut nmes = [0.0; 4];
    for (slot, f) in nmes.iter_mut().zip(DISCARD_FRACTIONS) {
        *slot = discard_worst(records, f, cfg.discard_mode)?;
    }
    let correlation = match signal_error_correlation(records) {
        Ok(c) => Some(c),
        Err(Error::UndefinedCorrelation(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SubsetSummary {
        subset: name.to_string(),
        samples: records.len(),
        nme: nmes,
        correlation,
        availability: availability(records, cfg.availability_threshold_px, cfg.allowed_bad_frac)?,
    })
}

/// Summaries for each subset present plus the full set.
pub fn summarize_all(records: &[EvalRecord], cfg: &EvalConfig) -> Result<Vec<SubsetSummary>> {
    let mut out = Vec::new();
    for tag in Subset::ALL {
        let part: Vec<EvalRecord> = records.iter().filter(|r| r.subset == tag).cloned().collect();
        if !part.is_empty() {
            out.push(summarize(tag.as_str(), &part, cfg)?);
        }
    }
    out.push(summarize("full", records, cfg)?);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub records: Vec<EvalRecord>,
    pub summaries: Vec<SubsetSummary>,
}

impl Evaluation {
    pub fn summary(&self, subset: &str) -> Option<&SubsetSummary> {
        self.summaries.iter().find(|s| s.subset == subset)
    }
}

/// Predictions for every sample, mapped back to the source image frame.
///
/// Validity signals are rescaled by the mean crop scale so they stay in source pixels.
pub fn predict(model: &ModelState, dataset: &Dataset) -> Result<Vec<TripletVector>> {
    let size = model.config().input_size;
    let l = model.config().landmark_count;
    if let Some(n) = dataset.landmark_count().filter(|n| *n != l) {
        return Err(Error::ShapeMismatch(format!("model predicts {l} landmarks, dataset has {n}")));
    }
    let prepared = dataset.samples.iter().map(|s| prepare_input(s, size)).collect::<Result<Vec<_>>>()?;
    let images: Vec<_> = prepared.iter().map(|(s, _)| s.image.clone()).collect();
    let outputs = model.forward(&images)?;
    Ok(outputs
        .into_iter()
        .zip(&prepared)
        .map(|(out, (_, map))| {
            let positions = to_source_frame(&out.positions(), map);
            let unit = 0.5 * (map.scale.0 + map.scale.1);
            TripletVector::new(
                positions
                    .points
                    .iter()
                    .zip(&out.triplets)
                    .map(|(p, t)| crate::types::Triplet { x: p.x, y: p.y, validity: t.validity / unit })
                    .collect(),
            )
        })
        .collect())
}

pub fn evaluate(model: &ModelState, dataset: &Dataset, cfg: &EvalConfig) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation dataset is empty".into()));
    }
    let l = model.config().landmark_count;
    let scheme = match &cfg.eye_scheme {
        Some(s) => {
            s.validate(l)?;
            s.clone()
        }
        None => EyeScheme::for_count(l)?,
    };
    let preds = predict(model, dataset)?;
    let records = dataset
        .samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| EvalRecord::from_prediction(&s.id, p, &s.annotation, &scheme, s.subset))
        .collect::<Result<Vec<_>>>()?;
    let summaries = summarize_all(&records, cfg)?;
    Ok(Evaluation { records, summaries })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// `subset,nme,nme_d10,nme_d20,nme_d30,pearson,availability`; NME values ×100.
pub fn format_summary_csv(summaries: &[SubsetSummary]) -> String {
    let mut out = String::from("subset,nme,nme_d10,nme_d20,nme_d30,pearson,availability\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{},{:.6}",
            s.subset,
            100.0 * s.nme[0],
            100.0 * s.nme[1],
            100.0 * s.nme[2],
            100.0 * s.nme[3],
            fmt_opt(s.correlation.map(|c| c.r)),
            s.availability
        );
    }
    out
}

/// `sample_id,landmark_idx,err_px,valid_px,interocular,subset`.
pub fn format_records_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from("sample_id,landmark_idx,err_px,valid_px,interocular,subset\n");
    for r in records {
        for (i, (e, v)) in r.errors.iter().zip(&r.signals).enumerate() {
            let _ = writeln!(out, "{},{i},{e:.6},{v:.6},{:.6},{}", r.sample_id, r.interocular, r.subset);
        }
    }
    out
}

pub fn write_summary_csv(summaries: &[SubsetSummary], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_summary_csv(summaries)).map_err(|e| Error::io(path, e))
}

pub fn write_records_csv(records: &[EvalRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_records_csv(records)).map_err(|e| Error::io(path, e))
}

/// A summary CSV row as read back for reporting (NME values ×100).
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct SummaryRow {
    pub subset: String,
    pub nme: f64,
    pub nme_d10: f64,
    pub nme_d20: f64,
    pub nme_d30: f64,
    #[serde(deserialize_with = "na_float")]
    pub pearson: Option<f64>,
    pub availability: f64,
}

fn na_float<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    let s = String::deserialize(d)?;
    if s.trim() == "NA" {
        Ok(None)
    } else {
        s.trim().parse().map(Some).map_err(serde::de::Error::custom)
    }
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let want = ["subset", "nme", "nme_d10", "nme_d20", "nme_d30", "pearson", "availability"];
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(Error::parse(path, 1, format!("expected header {}", want.join(","))));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Side-by-side table of several runs with Common / Challenging / Full columns.
pub fn format_report(runs: &[(String, Vec<SummaryRow>)]) -> String {
    let metrics: [(&str, fn(&SummaryRow) -> Option<f64>); 6] = [
        ("NME", |r| Some(r.nme)),
        ("NME discard 10%", |r| Some(r.nme_d10)),
        ("NME discard 20%", |r| Some(r.nme_d20)),
        ("NME discard 30%", |r| Some(r.nme_d30)),
        ("Pearson r", |r| r.pearson),
        ("Availability", |r| Some(r.availability)),
    ];
    let width = runs.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(16);
    let mut out = String::new();
    for (title, get) in metrics {
        let _ = writeln!(out, "{title:<width$} {:>12} {:>12} {:>12}", "Common", "Challenging", "Full");
        for (name, rows) in runs {
            let cell = |subset: &str| {
                rows.iter()
                    .find(|r| r.subset == subset)
                    .and_then(get)
                    .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
            };
            let _ = writeln!(out, "{name:<width$} {:>12} {:>12} {:>12}", cell("common"), cell("challenging"), cell("full"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, errors: &[f64], signals: &[f64], iod: f64, subset: Subset) -> EvalRecord {
        EvalRecord::new(id, errors.to_vec(), signals.to_vec(), iod, subset).unwrap()
    }

    #[test]
    fn nme_examples() {
        let r = rec("a", &[5.0; 4], &[0.0; 4], 50.0, Subset::Common);
        assert!((nme(&[r.clone()]).unwrap() - 0.10).abs() < 1e-15);
        let z = rec("b", &[0.0; 4], &[0.0; 4], 50.0, Subset::Common);
        assert_eq!(nme(&[z]).unwrap(), 0.0);
        assert!(EvalRecord::new("c", vec![1.0], vec![1.0], 0.0, Subset::Common).is_err());
        assert!(nme(&[]).is_err());
    }

    #[test]
    fn discard_single_outlier() {
        let mut e = vec![1.0; 10];
        let mut v = vec![0.5; 10];
        e[3] = 100.0;
        v[3] = 50.0;
        let r = rec("a", &e, &v, 10.0, Subset::Common);
        assert_eq!(discard_worst(&[r.clone()], 0.0, DiscardMode::Global).unwrap(), nme(&[r.clone()]).unwrap());
        assert!((discard_worst(&[r.clone()], 0.1, DiscardMode::Global).unwrap() - 0.1).abs() < 1e-15);
        assert!((discard_worst(&[r], 0.1, DiscardMode::PerImage).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn discard_everything_is_an_error() {
        let r = rec("a", &[1.0], &[1.0], 10.0, Subset::Common);
        assert!(discard_worst(&[r.clone()], 0.99, DiscardMode::Global).is_ok());
        let two = [r.clone(), rec("b", &[1.0], &[2.0], 10.0, Subset::Common)];
        assert!(discard_worst(&two, 0.5, DiscardMode::Global).is_ok());
        assert!(discard_worst(&[r], 1.0, DiscardMode::Global).is_err());
    }

    #[test]
    fn availability_examples() {
        let good = rec("a", &[1.0; 10], &[0.5; 10], 10.0, Subset::Common);
        assert_eq!(availability(&[good.clone()], 1.0, 0.1).unwrap(), 1.0);
        let mut v = vec![0.5; 10];
        v[0] = 5.0;
        v[1] = 5.0;
        let bad = rec("b", &[1.0; 10], &v, 10.0, Subset::Common);
        assert_eq!(availability(&[good.clone(), bad.clone()], 1.0, 0.1).unwrap(), 0.5);
        assert_eq!(availability(&[bad], 1.0, 0.2).unwrap(), 1.0);
    }

    #[test]
    fn summary_handles_constant_signal() {
        let r = rec("a", &[0.0; 5], &[0.0; 5], 10.0, Subset::Common);
        let s = summarize_all(&[r], &EvalConfig::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0].correlation.is_none());
        let csv = format_summary_csv(&s);
        assert!(csv.lines().nth(1).unwrap().contains(",NA,"));
    }

    #[test]
    fn perfect_signal_correlates() {
        let recs = vec![
            rec("a", &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 10.0, Subset::Common),
            rec("b", &[0.5, 4.0, 2.5], &[0.5, 4.0, 2.5], 12.0, Subset::Challenging),
        ];
        let c = signal_error_correlation(&recs).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_csv_round_trip_and_report() {
        let recs = vec![
            rec("a", &[1.0, 2.0, 3.0], &[0.3, 2.0, 1.0], 10.0, Subset::Common),
            rec("b", &[0.5, 4.0, 2.5], &[1.5, 3.0, 0.5], 12.0, Subset::Challenging),
        ];
        let s = summarize_all(&recs, &EvalConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_summary_csv(&s, &path).unwrap();
        let rows = read_summary_csv(&path).unwrap();
        assert_eq!(rows.len(), 3);
        assert!((rows[2].nme - 100.0 * s[2].nme[0]).abs() < 1e-6);
        let table = format_report(&[("with BB".into(), rows.clone()), ("no BB".into(), rows)]);
        assert!(table.contains("Common") && table.contains("Challenging") && table.contains("Full"));
        assert!(table.contains("with BB") && table.contains("no BB"));
    }
}
