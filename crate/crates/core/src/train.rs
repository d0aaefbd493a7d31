//! Epoch loop: loss bookkeeping, weight-table refresh, online augmentation,
//! SGD steps, learning-rate schedule and history logging.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, prepare_input, AugmentConfig};
use crate::balance::{assign_ranges, uniform_table, SampleWeightTable};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::loss::{total_loss, LossConfig};
use crate::net::{apply_schedule, sgd_step, ModelState, NetConfig, OptimConfig};
use crate::rng::{sample_stream, stream};
use crate::types::{Dataset, GrayImage, LandmarkSet, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Balancing {
    LossProportional,
    Uniform,
}

/// Which loss a sample carries into the next weight table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossRefresh {
    /// The loss of its most recent (augmented) pass; stale if not drawn.
    LastSeen,
    /// Re-evaluated on the un-augmented input for every sample after each epoch.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub net: NetConfig,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub balancing: Balancing,
    /// Evaluate on the validation set every this many epochs (0 disables).
    pub eval_every: usize,
    pub eval: EvalConfig,
    pub loss_refresh: LossRefresh,
    pub range_total: u64,
    /// Redraw duplicates within a batch.
    pub dedup: bool,
    /// Start the coordinate outputs at the mean training annotation.
    pub init_output_bias: bool,
    /// Store elapsed milliseconds in the history (otherwise 0, keeping it byte-stable).
    pub record_wall_time: bool,
    /// Keep per-epoch table widths and draw counts.
    pub trace_sampling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            seed: 42,
            net: NetConfig::default(),
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            balancing: Balancing::LossProportional,
            eval_every: 10,
            eval: EvalConfig::default(),
            loss_refresh: LossRefresh::LastSeen,
            range_total: 10_000,
            dedup: true,
            init_output_bias: true,
            record_wall_time: false,
            trace_sampling: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        self.net.validate()?;
        self.optim.validate()?;
        self.augment.validate()?;
        if self.augment.output_size != self.net.input_size {
            return Err(Error::ShapeMismatch(format!(
                "augmentation emits {}px images, network expects {}px",
                self.augment.output_size, self.net.input_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub common_nme: Option<f64>,
    pub challenging_nme: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl TrainHistory {
    /// `epoch,mean_loss,lr,common_nme,challenging_nme,wall_ms`; NME ×100.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,lr,common_nme,challenging_nme,wall_ms\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.9},{:e},{},{},{:.0}",
                r.epoch,
                r.mean_loss,
                r.lr,
                na(r.common_nme.map(|v| 100.0 * v)),
                na(r.challenging_nme.map(|v| 100.0 * v)),
                r.wall_ms
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Sampling state of one epoch, in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochTrace {
    /// Losses the epoch's weight table was built from.
    pub table_losses: Vec<f64>,
    pub widths: Vec<u64>,
    pub draws: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub history: TrainHistory,
    pub trace: Vec<EpochTrace>,
}

const BATCH_STREAM: u64 = 0xba7c;

fn numeric_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(m) | Error::CorruptState(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

fn prepared_losses(model: &ModelState, prepared: &[Sample], loss: &LossConfig) -> Result<Vec<f64>> {
    prepared
        .par_iter()
        .map(|s| {
            let out = model.forward(std::slice::from_ref(&s.image))?.remove(0);
            total_loss(&out, &s.annotation, loss)
        })
        .collect()
}

fn mean_annotation(prepared: &[Sample], count: usize) -> Vec<(f64, f64)> {
    let mut acc = vec![(0.0, 0.0); count];
    for s in prepared {
        for (a, p) in acc.iter_mut().zip(&s.annotation.points) {
            a.0 += p.x;
            a.1 += p.y;
        }
    }
    let n = prepared.len() as f64;
    acc.into_iter().map(|(x, y)| (x / n, y / n)).collect()
}

fn build_table(cfg: &TrainConfig, epoch: usize, ids: &[String], losses: &[f64]) -> Result<SampleWeightTable> {
    if epoch == 0 || cfg.balancing == Balancing::Uniform {
        return uniform_table(ids, cfg.range_total);
    }
    let pairs: Vec<(String, f64)> = ids.iter().cloned().zip(losses.iter().copied()).collect();
    assign_ranges(&pairs, cfg.range_total)
}

/// Trains a fresh model on `dataset`, writing each sample's `last_loss`.
///
/// Epoch `e` draws `ceil(N / batch_size)` batches from a table built on the
/// losses after epoch `e - 1` (uniform for the first epoch). Identical inputs
/// give a bit-identical model and history.
pub fn train(dataset: &mut Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset is empty".into()));
    }
    if val.is_some_and(Dataset::is_empty) {
        return Err(Error::Empty("validation dataset is empty".into()));
    }
    let l = cfg.net.landmark_count;
    if let Some(n) = dataset.landmark_count().filter(|n| *n != l) {
        return Err(Error::ShapeMismatch(format!("network predicts {l} landmarks, dataset has {n}")));
    }
    let n = dataset.len();
    let batch_size = cfg.optim.batch_size;
    if cfg.dedup && batch_size > n {
        return Err(Error::Infeasible(format!("batch size {batch_size} exceeds the {n} training samples")));
    }

    let size = cfg.net.input_size;
    let prepared: Vec<Sample> = dataset.samples.iter().map(|s| prepare_input(s, size).map(|p| p.0)).collect::<Result<_>>()?;
    let ids: Vec<String> = dataset.samples.iter().map(|s| s.id.clone()).collect();

    let mut model = ModelState::init(&cfg.net, cfg.seed)?;
    if cfg.init_output_bias {
        let means = mean_annotation(&prepared, l);
        let bias = &mut model.param_mut("fc2.bias").expect("output layer exists").value;
        for (i, (x, y)) in means.into_iter().enumerate() {
            bias[3 * i] = x;
            bias[3 * i + 1] = y;
        }
    }

    let mut last_losses = prepared_losses(&model, &prepared, &cfg.loss)?;
    let mut history = TrainHistory::default();
    let mut trace = Vec::new();
    let batches = n.div_ceil(batch_size);
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        let table = build_table(cfg, epoch, &ids, &last_losses)?;
        let lr = apply_schedule(&cfg.optim, epoch);
        let mut draws = vec![0u32; n];
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut seen = last_losses.clone();

        for b in 0..batches {
            let mut rng = stream(cfg.seed, &[BATCH_STREAM, epoch as u64, b as u64]);
            let members = table.draw_indices(batch_size, &mut rng, cfg.dedup)?;
            let augmented: Vec<(GrayImage, LandmarkSet)> = members
                .par_iter()
                .map(|&i| {
                    let s = &dataset.samples[i];
                    let mut srng = sample_stream(cfg.seed, epoch, b, &s.id);
                    augment(s, &cfg.augment, &mut srng).map(|(a, _)| (a.image, a.annotation))
                })
                .collect::<Result<_>>()?;
            let (images, gts): (Vec<GrayImage>, Vec<LandmarkSet>) = augmented.into_iter().unzip();
            let out = model.backward_batch(&images, &gts, &cfg.loss).map_err(|e| numeric_context(e, epoch + 1, b + 1))?;
            if !out.loss.is_finite() {
                return Err(Error::Numeric(format!("epoch {}, batch {}: loss is {}", epoch + 1, b + 1, out.loss)));
            }
            for (&i, &sl) in members.iter().zip(&out.sample_losses) {
                seen[i] = sl;
                draws[i] += 1;
            }
            loss_sum += out.sample_losses.iter().sum::<f64>();
            loss_count += members.len();
            sgd_step(&mut model, &out.gradients, &cfg.optim, lr)?;
            model.check_finite().map_err(|e| Error::Numeric(format!("epoch {}, batch {}: {e}", epoch + 1, b + 1)))?;
        }

        if cfg.trace_sampling {
            trace.push(EpochTrace { table_losses: last_losses.clone(), widths: table.widths(), draws });
        }
        last_losses = match cfg.loss_refresh {
            LossRefresh::LastSeen => seen,
            LossRefresh::Exact => prepared_losses(&model, &prepared, &cfg.loss)?,
        };

        let (mut common_nme, mut challenging_nme) = (None, None);
        if let Some(v) = val.filter(|_| cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)) {
            let ev = evaluate(&model, v, &cfg.eval)?;
            common_nme = ev.summary("common").map(|s| s.nme[0]);
            challenging_nme = ev.summary("challenging").map(|s| s.nme[0]);
        }
        history.records.push(EpochRecord {
            epoch: epoch + 1,
            mean_loss: loss_sum / loss_count as f64,
            lr,
            common_nme,
            challenging_nme,
            wall_ms: if cfg.record_wall_time { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
        });
    }

    for (s, l) in dataset.samples.iter_mut().zip(&last_losses) {
        s.last_loss = *l;
    }
    Ok(TrainOutcome { model, history, trace })
}

/// The weight table the next epoch would use given the samples' current `last_loss`.
pub fn next_table(dataset: &Dataset, cfg: &TrainConfig) -> Result<SampleWeightTable> {
    let ids: Vec<String> = dataset.samples.iter().map(|s| s.id.clone()).collect();
    let losses: Vec<f64> = dataset.samples.iter().map(|s| s.last_loss).collect();
    build_table(cfg, 1, &ids, &losses)
}
