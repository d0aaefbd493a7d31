use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ModelState};
use crate::error::{Error, Result};

/// Named learning-rate schedules expressed relative to `learning_rate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulePreset {
    Constant,
    /// Divide by ten every hundred epochs, four times.
    Decade,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// `(first epoch, lr)` steps; before the first step the base rate applies.
    pub schedule: Vec<(usize, f64)>,
    pub preset: Option<SchedulePreset>,
    /// Learning-rate factor per parameter-name prefix (longest prefix wins).
    pub lr_multipliers: BTreeMap<String, f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 10,
            schedule: Vec::new(),
            preset: None,
            lr_multipliers: BTreeMap::new(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidArgument("schedule epochs must be strictly increasing".into()));
        }
        if self.schedule.iter().any(|s| !(s.1 >= 0.0 && s.1.is_finite())) {
            return Err(Error::InvalidArgument("schedule rates must be finite and non-negative".into()));
        }
        if self.preset.is_some() && !self.schedule.is_empty() {
            return Err(Error::InvalidArgument("set either schedule or preset, not both".into()));
        }
        if self.lr_multipliers.values().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(Error::InvalidArgument("lr_multipliers must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Explicit steps, with a preset expanded against the base rate.
    pub fn steps(&self) -> Vec<(usize, f64)> {
        match self.preset {
            Some(SchedulePreset::Decade) => (0..5).map(|k| (100 * k, self.learning_rate * 10f64.powi(-(k as i32)))).collect(),
            Some(SchedulePreset::Constant) => vec![(0, self.learning_rate)],
            None => self.schedule.clone(),
        }
    }

    pub fn multiplier(&self, name: &str) -> f64 {
        self.lr_multipliers
            .iter()
            .filter(|(prefix, _)| name.starts_with(prefix.as_str()))
            .max_by_key(|(prefix, _)| prefix.len())
            .map_or(1.0, |(_, m)| *m)
    }
}

/// Piecewise-constant learning rate for `epoch`.
pub fn apply_schedule(optim: &OptimConfig, epoch: usize) -> f64 {
    optim
        .steps()
        .iter()
        .take_while(|(start, _)| *start <= epoch)
        .last()
        .map_or(optim.learning_rate, |(_, lr)| *lr)
}

/// Classical momentum with weight decay folded into the gradient:
/// `g += wd·w; buf = m·buf + g; w -= lr·buf`.
pub fn sgd_step(state: &mut ModelState, grads: &Gradients, optim: &OptimConfig, lr: f64) -> Result<()> {
    if grads.tensors.len() != state.params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient tensors for {} parameters",
            grads.tensors.len(),
            state.params.len()
        )));
    }
    for (p, g) in state.params.iter_mut().zip(&grads.tensors) {
        if g.len() != p.value.len() {
            return Err(Error::ShapeMismatch(format!("gradient for {} has wrong length", p.name)));
        }
        let rate = lr * optim.multiplier(&p.name);
        for ((w, buf), gi) in p.value.iter_mut().zip(p.momentum.iter_mut()).zip(g) {
            let grad = gi + optim.weight_decay * *w;
            *buf = optim.momentum * *buf + grad;
            *w -= rate * *buf;
        }
    }
    Ok(())
}
