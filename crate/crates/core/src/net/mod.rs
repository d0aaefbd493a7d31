//! Small residual CNN regressing `(x, y, v)` per landmark, with reverse-mode
//! gradients, SGD with momentum and a binary checkpoint format.
//!
//! Layout: conv stem + ReLU, max pool, residual blocks (two 3×3 convs, with a
//! stride-2 1×1 projection shortcut whenever the channel count changes), a
//! hidden fully connected layer with ReLU and a linear output layer.

mod checkpoint;
pub mod layers;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use optim::{apply_schedule, sgd_step, OptimConfig, SchedulePreset};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{loss_gradient, total_loss, LossConfig};
use crate::types::{GrayImage, LandmarkSet, TripletVector};
use layers::{dense_backward, dense_forward, maxpool_backward, maxpool_forward, relu_backward, relu_inplace, ConvShape};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub input_size: usize,
    pub landmark_count: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub pool_size: usize,
    pub residual_block_channels: Vec<usize>,
    pub fc_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            landmark_count: 5,
            stem_channels: 8,
            stem_kernel: 5,
            stem_stride: 1,
            pool_size: 2,
            residual_block_channels: vec![8, 16, 32],
            fc_hidden: 64,
        }
    }
}

impl NetConfig {
    pub fn output_count(&self) -> usize {
        3 * self.landmark_count
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.input_size, self.landmark_count, self.stem_channels, self.stem_kernel, self.stem_stride, self.pool_size, self.fc_hidden];
        if widths.contains(&0) || self.residual_block_channels.contains(&0) {
            return Err(Error::InvalidArgument("network sizes must all be at least 1".into()));
        }
        let plan = Plan::new(self);
        if plan.flat == 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} collapses to nothing before the dense layers",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct BlockPlan {
    conv1: ConvShape,
    conv2: ConvShape,
    proj: Option<ConvShape>,
}

/// Resolved layer geometry for a config.
#[derive(Clone, Debug)]
struct Plan {
    stem: ConvShape,
    pool: (usize, usize, usize),
    blocks: Vec<BlockPlan>,
    flat: usize,
    hidden: usize,
    outputs: usize,
}

impl Plan {
    fn new(cfg: &NetConfig) -> Self {
        let stem = ConvShape {
            in_c: 1,
            out_c: cfg.stem_channels,
            kernel: cfg.stem_kernel,
            stride: cfg.stem_stride,
            in_h: cfg.input_size,
            in_w: cfg.input_size,
        };
        let (mut c, mut h, mut w) = (cfg.stem_channels, stem.out_h() / cfg.pool_size, stem.out_w() / cfg.pool_size);
        let pool = (c, stem.out_h(), stem.out_w());
        let mut blocks = Vec::new();
        for &ch in &cfg.residual_block_channels {
            let stride = if ch != c { 2 } else { 1 };
            let conv1 = ConvShape { in_c: c, out_c: ch, kernel: 3, stride, in_h: h, in_w: w };
            let conv2 = ConvShape { in_c: ch, out_c: ch, kernel: 3, stride: 1, in_h: conv1.out_h(), in_w: conv1.out_w() };
            let proj = (ch != c).then_some(ConvShape { in_c: c, out_c: ch, kernel: 1, stride: 2, in_h: h, in_w: w });
            (c, h, w) = (ch, conv2.out_h(), conv2.out_w());
            blocks.push(BlockPlan { conv1, conv2, proj });
        }
        Self {
            stem,
            pool,
            blocks,
            flat: c * h * w,
            hidden: cfg.fc_hidden,
            outputs: cfg.output_count(),
        }
    }

    /// `(name, shape, fan_in)` of every parameter tensor in storage order.
    fn tensors(&self) -> Vec<(String, Vec<usize>, usize)> {
        let conv = |name: &str, c: &ConvShape, out: &mut Vec<(String, Vec<usize>, usize)>| {
            out.push((format!("{name}.weight"), vec![c.out_c, c.in_c, c.kernel, c.kernel], c.fan_in()));
            out.push((format!("{name}.bias"), vec![c.out_c], 0));
        };
        let mut out = Vec::new();
        conv("stem", &self.stem, &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            conv(&format!("block{i}.conv1"), &b.conv1, &mut out);
            conv(&format!("block{i}.conv2"), &b.conv2, &mut out);
            if let Some(p) = &b.proj {
                conv(&format!("block{i}.proj"), p, &mut out);
            }
        }
        out.push(("fc1.weight".into(), vec![self.hidden, self.flat], self.flat));
        out.push(("fc1.bias".into(), vec![self.hidden], 0));
        out.push(("fc2.weight".into(), vec![self.outputs, self.hidden], self.hidden));
        out.push(("fc2.bias".into(), vec![self.outputs], 0));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    /// SGD momentum buffer, same shape as `value`.
    pub momentum: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    config: NetConfig,
    pub params: Vec<Param>,
}

/// Gradients in parameter storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(state: &ModelState) -> Self {
        Self {
            tensors: state.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

struct BlockCache {
    input: Vec<f64>,
    h1_pre: Vec<f64>,
    h1: Vec<f64>,
    out_pre: Vec<f64>,
}

struct Cache {
    x: Vec<f64>,
    stem_pre: Vec<f64>,
    pool_arg: Vec<usize>,
    blocks: Vec<BlockCache>,
    flat: Vec<f64>,
    fc1_pre: Vec<f64>,
    fc1: Vec<f64>,
    out: Vec<f64>,
}

/// Result of a batched forward/backward pass.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    /// Mean of the per-sample losses.
    pub loss: f64,
    pub sample_losses: Vec<f64>,
    pub outputs: Vec<TripletVector>,
    /// Gradient of the mean loss.
    pub gradients: Gradients,
}

impl ModelState {
    /// He-initialized weights (normal, variance `2 / fan_in`), zero biases
    /// and zero momentum.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let plan = Plan::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = plan
            .tensors()
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let n: usize = shape.iter().product();
                let value = if fan_in == 0 {
                    vec![0.0; n]
                } else {
                    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                };
                Param { name, shape, value, momentum: vec![0.0; n] }
            })
            .collect();
        Ok(Self { config: config.clone(), params })
    }

    /// Rebuilds a state from stored tensors, checking names and shapes.
    pub fn from_params(config: NetConfig, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let expected = Plan::new(&config).tensors();
        if expected.len() != params.len() {
            return Err(Error::ShapeMismatch(format!("expected {} tensors, got {}", expected.len(), params.len())));
        }
        for ((name, shape, _), p) in expected.iter().zip(&params) {
            let n: usize = shape.iter().product();
            if *name != p.name || *shape != p.shape || p.value.len() != n || p.momentum.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {} with shape {:?} does not match expected {name} {:?}",
                    p.name, p.shape, shape
                )));
            }
        }
        let state = Self { config, params };
        state.check_finite()?;
        Ok(state)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for p in &self.params {
            if p.value.iter().chain(&p.momentum).any(|v| !v.is_finite()) {
                return Err(Error::CorruptState(format!("non-finite value in {}", p.name)));
            }
        }
        Ok(())
    }

    fn plan(&self) -> Plan {
        Plan::new(&self.config)
    }

    fn input_plane(&self, img: &GrayImage) -> Result<Vec<f64>> {
        let s = self.config.input_size;
        if img.width() != s || img.height() != s {
            return Err(Error::ShapeMismatch(format!(
                "network expects {s}x{s} input, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        Ok(img.data().iter().map(|&p| p as f64 / 255.0 - 0.5).collect())
    }

    fn forward_cached(&self, plan: &Plan, x: Vec<f64>) -> Cache {
        let mut idx = 0;
        let mut next = || {
            let i = idx;
            idx += 2;
            i
        };
        let p = &self.params;

        let s = next();
        let mut stem_pre = vec![0.0; plan.stem.out_c * plan.stem.out_h() * plan.stem.out_w()];
        plan.stem.forward(&x, &p[s].value, &p[s + 1].value, &mut stem_pre);
        let mut act = stem_pre.clone();
        relu_inplace(&mut act);
        let (c, h, w) = plan.pool;
        let (mut cur, pool_arg) = maxpool_forward(&act, c, h, w, self.config.pool_size);

        let mut blocks = Vec::with_capacity(plan.blocks.len());
        for b in &plan.blocks {
            let (i1, i2) = (next(), next());
            let n1 = b.conv1.out_c * b.conv1.out_h() * b.conv1.out_w();
            let mut h1_pre = vec![0.0; n1];
            b.conv1.forward(&cur, &p[i1].value, &p[i1 + 1].value, &mut h1_pre);
            let mut h1 = h1_pre.clone();
            relu_inplace(&mut h1);
            let n2 = b.conv2.out_c * b.conv2.out_h() * b.conv2.out_w();
            let mut out_pre = vec![0.0; n2];
            b.conv2.forward(&h1, &p[i2].value, &p[i2 + 1].value, &mut out_pre);
            match &b.proj {
                Some(pr) => {
                    let ip = next();
                    let mut sc = vec![0.0; n2];
                    pr.forward(&cur, &p[ip].value, &p[ip + 1].value, &mut sc);
                    out_pre.iter_mut().zip(&sc).for_each(|(o, v)| *o += v);
                }
                None => out_pre.iter_mut().zip(&cur).for_each(|(o, v)| *o += v),
            }
            let mut out = out_pre.clone();
            relu_inplace(&mut out);
            blocks.push(BlockCache { input: std::mem::replace(&mut cur, out), h1_pre, h1, out_pre });
        }

        let f1 = next();
        let mut fc1_pre = vec![0.0; plan.hidden];
        dense_forward(&cur, &p[f1].value, &p[f1 + 1].value, &mut fc1_pre);
        let mut fc1 = fc1_pre.clone();
        relu_inplace(&mut fc1);
        let f2 = next();
        let mut out = vec![0.0; plan.outputs];
        dense_forward(&fc1, &p[f2].value, &p[f2 + 1].value, &mut out);
        Cache { x, stem_pre, pool_arg, blocks, flat: cur, fc1_pre, fc1, out }
    }

    fn backward_cached(&self, plan: &Plan, cache: &Cache, grad_out: &[f64]) -> Gradients {
        let mut g = Gradients::zeros_like(self);
        let p = &self.params;
        let n = p.len();
        let (f2, f1) = (n - 2, n - 4);

        let mut d_fc1 = vec![0.0; plan.hidden];
        let (gw, gb) = split_pair(&mut g.tensors, f2);
        dense_backward(&cache.fc1, &p[f2].value, grad_out, gw, gb, Some(&mut d_fc1));
        relu_backward(&cache.fc1_pre, &mut d_fc1);
        let mut d_cur = vec![0.0; plan.flat];
        let (gw, gb) = split_pair(&mut g.tensors, f1);
        dense_backward(&cache.flat, &p[f1].value, &d_fc1, gw, gb, Some(&mut d_cur));

        // walk the parameter list backwards alongside the blocks
        let mut idx = f1;
        for (b, bc) in plan.blocks.iter().zip(&cache.blocks).rev() {
            let ip = b.proj.as_ref().map(|_| {
                idx -= 2;
                idx
            });
            idx -= 2;
            let i2 = idx;
            idx -= 2;
            let i1 = idx;

            relu_backward(&bc.out_pre, &mut d_cur);
            let mut d_in = vec![0.0; bc.input.len()];
            match (&b.proj, ip) {
                (Some(pr), Some(ip)) => {
                    let (gw, gb) = split_pair(&mut g.tensors, ip);
                    pr.backward(&bc.input, &p[ip].value, &d_cur, gw, gb, Some(&mut d_in));
                }
                _ => d_in.iter_mut().zip(&d_cur).for_each(|(a, b)| *a += b),
            }
            let mut d_h1 = vec![0.0; bc.h1.len()];
            let (gw, gb) = split_pair(&mut g.tensors, i2);
            b.conv2.backward(&bc.h1, &p[i2].value, &d_cur, gw, gb, Some(&mut d_h1));
            relu_backward(&bc.h1_pre, &mut d_h1);
            let (gw, gb) = split_pair(&mut g.tensors, i1);
            b.conv1.backward(&bc.input, &p[i1].value, &d_h1, gw, gb, Some(&mut d_in));
            d_cur = d_in;
        }

        let mut d_act = vec![0.0; cache.stem_pre.len()];
        maxpool_backward(&d_cur, &cache.pool_arg, &mut d_act);
        relu_backward(&cache.stem_pre, &mut d_act);
        let (gw, gb) = split_pair(&mut g.tensors, 0);
        plan.stem.backward(&cache.x, &p[0].value, &d_act, gw, gb, None);
        g
    }

    fn check_output(&self, out: &[f64]) -> Result<()> {
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptState("network produced a non-finite output".into()));
        }
        Ok(())
    }

    /// Runs one image and returns the raw `3·L` outputs.
    pub fn forward_flat(&self, img: &GrayImage) -> Result<Vec<f64>> {
        let x = self.input_plane(img)?;
        let out = self.forward_cached(&self.plan(), x).out;
        self.check_output(&out)?;
        Ok(out)
    }

    pub fn forward(&self, images: &[GrayImage]) -> Result<Vec<TripletVector>> {
        images
            .par_iter()
            .map(|img| TripletVector::from_flat(&self.forward_flat(img)?))
            .collect()
    }

    /// Backpropagates an arbitrary gradient on the outputs of one image.
    pub fn backward_from_output_grad(&self, img: &GrayImage, grad_out: &[f64]) -> Result<Gradients> {
        if grad_out.len() != self.config.output_count() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient has {} entries, network emits {}",
                grad_out.len(),
                self.config.output_count()
            )));
        }
        let plan = self.plan();
        let cache = self.forward_cached(&plan, self.input_plane(img)?);
        Ok(self.backward_cached(&plan, &cache, grad_out))
    }

    /// Loss and gradient of the batch mean of `total_loss`.
    pub fn backward_batch(&self, images: &[GrayImage], gts: &[LandmarkSet], loss_cfg: &LossConfig) -> Result<BatchGradients> {
        if images.len() != gts.len() {
            return Err(Error::CountMismatch { expected: images.len(), got: gts.len() });
        }
        if images.is_empty() {
            return Err(Error::Empty("batch has no samples".into()));
        }
        let l = self.config.landmark_count;
        if let Some(gt) = gts.iter().find(|g| g.len() != l) {
            return Err(Error::ShapeMismatch(format!("network predicts {l} landmarks, annotation has {}", gt.len())));
        }
        let plan = self.plan();
        let per: Vec<(f64, TripletVector, Gradients)> = images
            .par_iter()
            .zip(gts.par_iter())
            .map(|(img, gt)| -> Result<_> {
                let cache = self.forward_cached(&plan, self.input_plane(img)?);
                self.check_output(&cache.out)?;
                let pred = TripletVector::from_flat(&cache.out)?;
                let loss = total_loss(&pred, gt, loss_cfg)?;
                let dout = loss_gradient(&pred, gt, loss_cfg)?;
                Ok((loss, pred, self.backward_cached(&plan, &cache, &dout)))
            })
            .collect::<Result<_>>()?;
        let n = per.len() as f64;
        let mut gradients = Gradients::zeros_like(self);
        let mut sample_losses = Vec::with_capacity(per.len());
        let mut outputs = Vec::with_capacity(per.len());
        // fixed summation order keeps results independent of the thread count
        for (loss, pred, g) in per {
            gradients.add_assign(&g);
            sample_losses.push(loss);
            outputs.push(pred);
        }
        gradients.scale(1.0 / n);
        let loss = sample_losses.iter().sum::<f64>() / n;
        Ok(BatchGradients { loss, sample_losses, outputs, gradients })
    }

    pub fn backward(&self, images: &[GrayImage], gts: &[LandmarkSet], loss_cfg: &LossConfig) -> Result<(f64, Gradients)> {
        let b = self.backward_batch(images, gts, loss_cfg)?;
        Ok((b.loss, b.gradients))
    }

    /// Output of residual block `index` given its input planes, for inspection.
    pub fn block_forward(&self, index: usize, input: &[f64]) -> Result<Vec<f64>> {
        let plan = self.plan();
        let b = plan
            .blocks
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("no residual block {index}")))?;
        if input.len() != b.conv1.in_c * b.conv1.in_h * b.conv1.in_w {
            return Err(Error::ShapeMismatch(format!("block {index} input has wrong length {}", input.len())));
        }
        let find = |n: &str| self.param(&format!("block{index}.{n}.weight")).zip(self.param(&format!("block{index}.{n}.bias")));
        let (w1, b1) = find("conv1").expect("block tensors exist");
        let (w2, b2) = find("conv2").expect("block tensors exist");
        let mut h1 = vec![0.0; b.conv1.out_c * b.conv1.out_h() * b.conv1.out_w()];
        b.conv1.forward(input, &w1.value, &b1.value, &mut h1);
        relu_inplace(&mut h1);
        let mut out = vec![0.0; b.conv2.out_c * b.conv2.out_h() * b.conv2.out_w()];
        b.conv2.forward(&h1, &w2.value, &b2.value, &mut out);
        match &b.proj {
            Some(pr) => {
                let (wp, bp) = find("proj").expect("projection tensors exist");
                let mut sc = vec![0.0; out.len()];
                pr.forward(input, &wp.value, &bp.value, &mut sc);
                out.iter_mut().zip(&sc).for_each(|(o, v)| *o += v);
            }
            None => out.iter_mut().zip(input).for_each(|(o, v)| *o += v),
        }
        relu_inplace(&mut out);
        Ok(out)
    }

    /// Input shape `(channels, height, width)` of residual block `index`.
    pub fn block_input_shape(&self, index: usize) -> Option<(usize, usize, usize)> {
        self.plan().blocks.get(index).map(|b| (b.conv1.in_c, b.conv1.in_h, b.conv1.in_w))
    }
}

fn split_pair(t: &mut [Vec<f64>], i: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = t[i..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}
