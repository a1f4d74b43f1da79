//! Fully connected ReLU network with a softmax, sigmoid or identity head.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{weighted_cross_entropy, weighted_squared_error, CrossEntropyKind};
use super::{OutputKind, Predictor, WeightedBatch};
use crate::error::{GttaError, Result};
use crate::io;
use crate::rng::RngStream;
use crate::tensor::Tensor;

const FORMAT_TAG: &str = "gtta-mlp/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Softmax,
    Identity,
    Sigmoid,
}

impl Head {
    pub fn for_kind(kind: OutputKind) -> Self {
        match kind {
            OutputKind::Probabilities { .. } => Head::Softmax,
            OutputKind::RealValues { .. } => Head::Identity,
            OutputKind::PixelProbabilities { .. } => Head::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    in_dim: usize,
    out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn forward(&self, a: &[f64], n: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(n * self.out_dim);
        for r in 0..n {
            let row = &a[r * self.in_dim..(r + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                z.push(self.b[o] + wrow.iter().zip(row).map(|(w, x)| w * x).sum::<f64>());
            }
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Dense>,
    kind: OutputKind,
}

/// Parameter-shaped buffers: per layer, weights then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn zeros_like(model: &Mlp) -> Self {
        Self {
            layers: model.layers.iter().map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()])).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b).copied()).collect()
    }

    pub fn scale(&mut self, f: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|g| *g *= f);
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, f: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(g, o)| *g += f * o);
            b.iter_mut().zip(ob).for_each(|(g, o)| *g += f * o);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.iter().chain(b).all(|g| g.is_finite()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MlpMeta {
    format: String,
    input_dim: usize,
    hidden: Vec<usize>,
    output_kind: OutputKind,
    head: Head,
}

impl Mlp {
    /// He-initialized network with the given hidden widths.
    pub fn new(input_dim: usize, hidden: &[usize], kind: OutputKind, rng: &RngStream) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) || kind.is_empty() {
            return Err(GttaError::Param("layer widths must be positive".into()));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(kind.len());
        let mut r = rng.rng();
        let layers = widths
            .windows(2)
            .map(|wd| {
                let (i, o) = (wd[0], wd[1]);
                let scale = (2.0 / i as f64).sqrt();
                Dense {
                    in_dim: i,
                    out_dim: o,
                    w: (0..i * o)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut r);
                            z * scale
                        })
                        .collect(),
                    b: vec![0.0; o],
                }
            })
            .collect();
        Ok(Self { input_dim, layers, kind })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.out_dim).collect()
    }

    pub fn head(&self) -> Head {
        Head::for_kind(self.kind)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b).copied()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(GttaError::Shape(format!("{} parameters, model has {}", flat.len(), self.num_params())));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|p| *p = it.next().expect("length checked"));
        }
        Ok(())
    }

    fn check_inputs(&self, x: &Tensor) -> Result<usize> {
        if x.rank() != 2 || x.shape()[1] != self.input_dim {
            return Err(GttaError::Shape(format!("model expects [b, {}], got {:?}", self.input_dim, x.shape())));
        }
        Ok(x.nrows())
    }

    /// Pre-activations of every layer for a batch of `n` rows.
    fn forward_all(&self, x: &[f64], n: usize) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for (li, l) in self.layers.iter().enumerate() {
            let z = l.forward(&act, n);
            if li + 1 < self.layers.len() {
                act = z.iter().map(|&v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    fn apply_head(&self, z: &[f64], n: usize) -> Vec<f64> {
        match self.head() {
            Head::Identity => z.to_vec(),
            Head::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
            Head::Softmax => {
                let k = self.kind.len();
                let mut out = Vec::with_capacity(z.len());
                for r in 0..n {
                    let row = &z[r * k..(r + 1) * k];
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    out.extend(e.iter().map(|v| v / s));
                }
                out
            }
        }
    }

    fn outputs(&self, x: &[f64], n: usize) -> Vec<f64> {
        let pre = self.forward_all(x, n);
        self.apply_head(pre.last().expect("at least one layer"), n)
    }

    fn per_element_weights(&self, batch: &WeightedBatch) -> Vec<f64> {
        if batch.per_element_weights() {
            batch.weights.data().to_vec()
        } else {
            let k = self.kind.len();
            batch.weights.data().iter().flat_map(|&w| std::iter::repeat_n(w, k)).collect()
        }
    }

    fn check_batch(&self, batch: &WeightedBatch) -> Result<usize> {
        let n = self.check_inputs(&batch.inputs)?;
        if batch.targets.row_len() != self.kind.len() {
            return Err(GttaError::Shape(format!(
                "targets have {} columns, model outputs {}",
                batch.targets.row_len(),
                self.kind.len()
            )));
        }
        if batch.per_element_weights() && !matches!(self.kind, OutputKind::PixelProbabilities { .. }) {
            return Err(GttaError::Shape("per-element weights are only defined for pixel outputs".into()));
        }
        Ok(n)
    }

    fn loss_from_outputs(&self, out: &[f64], batch: &WeightedBatch) -> Result<f64> {
        let y = batch.targets.data();
        match self.kind {
            OutputKind::Probabilities { num_classes } => weighted_cross_entropy(
                out,
                y,
                batch.weights.data(),
                CrossEntropyKind::Categorical { num_classes },
            ),
            OutputKind::PixelProbabilities { .. } => {
                weighted_cross_entropy(out, y, &self.per_element_weights(batch), CrossEntropyKind::Binary)
            }
            OutputKind::RealValues { .. } => weighted_squared_error(out, y, batch.weights.data()),
        }
    }

    /// Weighted loss of the model on a batch.
    pub fn loss(&self, batch: &WeightedBatch) -> Result<f64> {
        let n = self.check_batch(batch)?;
        let out = self.outputs(batch.inputs.data(), n);
        self.loss_from_outputs(&out, batch)
    }

    /// Loss and analytic gradient, or `None` when every weight in the batch is zero.
    pub fn loss_and_gradient(&self, batch: &WeightedBatch) -> Result<Option<(f64, Gradients)>> {
        let n = self.check_batch(batch)?;
        if batch.total_weight() == 0.0 {
            return Ok(None);
        }
        let x = batch.inputs.data();
        let pre = self.forward_all(x, n);
        let out = self.apply_head(pre.last().expect("at least one layer"), n);
        let loss = self.loss_from_outputs(&out, batch)?;

        let k = self.kind.len();
        let y = batch.targets.data();
        let w_el = self.per_element_weights(batch);
        let sw: f64 = match self.kind {
            OutputKind::PixelProbabilities { .. } => w_el.iter().sum(),
            _ => batch.total_weight(),
        };
        let mut delta: Vec<f64> = vec![0.0; n * k];
        for r in 0..n {
            let ys = &y[r * k..(r + 1) * k];
            let ps = &out[r * k..(r + 1) * k];
            match self.head() {
                Head::Softmax => {
                    let wi = batch.weights.data()[r] / sw;
                    let ysum: f64 = ys.iter().sum();
                    for c in 0..k {
                        delta[r * k + c] = wi * (ps[c] * ysum - ys[c]);
                    }
                }
                Head::Sigmoid => {
                    for c in 0..k {
                        delta[r * k + c] = w_el[r * k + c] / sw * (ps[c] - ys[c]);
                    }
                }
                Head::Identity => {
                    let wi = batch.weights.data()[r] / sw;
                    for c in 0..k {
                        delta[r * k + c] = wi * 2.0 * (ps[c] - ys[c]);
                    }
                }
            }
        }

        let mut grads = Gradients::zeros_like(self);
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input_act: Vec<f64> = if li == 0 {
                x.to_vec()
            } else {
                pre[li - 1].iter().map(|&v| v.max(0.0)).collect()
            };
            let (gw, gb) = &mut grads.layers[li];
            for r in 0..n {
                let a = &input_act[r * layer.in_dim..(r + 1) * layer.in_dim];
                for o in 0..layer.out_dim {
                    let d = delta[r * layer.out_dim + o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    row.iter_mut().zip(a).for_each(|(g, &ai)| *g += d * ai);
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; n * layer.in_dim];
                for r in 0..n {
                    let dst = &mut prev[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for o in 0..layer.out_dim {
                        let d = delta[r * layer.out_dim + o];
                        if d == 0.0 {
                            continue;
                        }
                        let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                        dst.iter_mut().zip(wrow).for_each(|(p, &wv)| *p += d * wv);
                    }
                }
                for (p, &z) in prev.iter_mut().zip(&pre[li - 1]) {
                    if z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(Some((loss, grads)))
    }

    fn apply_update(&mut self, update: &Gradients, lr: f64) {
        for (l, (gw, gb)) in self.layers.iter_mut().zip(&update.layers) {
            l.w.iter_mut().zip(gw).for_each(|(p, g)| *p -= lr * g);
            l.b.iter_mut().zip(gb).for_each(|(p, g)| *p -= lr * g);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        for l in &self.layers {
            tensors.push(Tensor::new(vec![l.out_dim, l.in_dim], l.w.clone())?);
            tensors.push(Tensor::vector(l.b.clone())?);
        }
        let names: Vec<String> = (0..self.layers.len()).flat_map(|i| [format!("w{i}"), format!("b{i}")]).collect();
        let sections: Vec<(&str, &Tensor)> = names.iter().map(String::as_str).zip(tensors.iter()).collect();
        let meta = MlpMeta {
            format: FORMAT_TAG.into(),
            input_dim: self.input_dim,
            hidden: self.hidden_widths(),
            output_kind: self.kind,
            head: self.head(),
        };
        io::save_container(path, &sections, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut secs, meta): (_, MlpMeta) = io::load_container(path)?;
        if meta.format != FORMAT_TAG {
            return Err(GttaError::Format(format!("unexpected model format {:?}", meta.format)));
        }
        let mut widths = vec![meta.input_dim];
        widths.extend(&meta.hidden);
        widths.push(meta.output_kind.len());
        let mut layers = Vec::new();
        for (i, wd) in widths.windows(2).enumerate() {
            let w = io::take_section(&mut secs, &format!("w{i}"))?;
            let b = io::take_section(&mut secs, &format!("b{i}"))?;
            if w.shape() != [wd[1], wd[0]] || b.shape() != [wd[1]] {
                return Err(GttaError::Format(format!("layer {i} shape disagrees with architecture")));
            }
            layers.push(Dense {
                in_dim: wd[0],
                out_dim: wd[1],
                w: w.into_data(),
                b: b.into_data(),
            });
        }
        Ok(Self {
            input_dim: meta.input_dim,
            layers,
            kind: meta.output_kind,
        })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Predictor for Mlp {
    fn output_kind(&self) -> OutputKind {
        self.kind
    }

    fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.check_inputs(batch)?;
        let out = Tensor::new(self.kind.batch_shape(n), self.outputs(batch.data(), n))?;
        debug_assert!(self.kind.check_output(&out, n).is_ok());
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.05,
            batch_size: 32,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(GttaError::Param(format!("learning rate must be finite and nonnegative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(GttaError::Param("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(GttaError::Param("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// SGD with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    velocity: Gradients,
    steps: usize,
}

impl Trainer {
    pub fn new(model: &Mlp, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            velocity: Gradients::zeros_like(model),
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Applies one update, failing if the loss or gradient is not finite.
    pub fn step(&mut self, model: &mut Mlp, loss: f64, grads: &Gradients) -> Result<()> {
        self.steps += 1;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(GttaError::TrainingDiverged { step: self.steps });
        }
        self.velocity.scale(self.cfg.momentum);
        self.velocity.add_scaled(grads, 1.0);
        model.apply_update(&self.velocity, self.cfg.lr);
        Ok(())
    }

    /// Counts a step that produced no gradient (all weights zero).
    pub fn skip(&mut self) {
        self.steps += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-data weighted loss after each epoch (0 when every weight is zero).
    pub loss_curve: Vec<f64>,
    pub steps: usize,
}

/// Loss over the whole set, 0 when all weights vanish.
pub(crate) fn epoch_loss(model: &Mlp, data: &WeightedBatch) -> Result<f64> {
    match model.loss(data) {
        Ok(l) => Ok(l),
        Err(GttaError::DegenerateWeight) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Mini-batch order for `epoch`, shared by plain training and distillation.
pub(crate) fn epoch_order(rng: &RngStream, epoch: usize, n: usize) -> Vec<usize> {
    rng.derive(epoch as u64).permutation(n)
}

/// Mini-batch training on the weighted loss.
pub fn mlp_train(model: &mut Mlp, data: &WeightedBatch, cfg: &TrainConfig, rng: &RngStream) -> Result<TrainReport> {
    let mut trainer = Trainer::new(model, *cfg)?;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        for chunk in epoch_order(rng, epoch, data.len()).chunks(cfg.batch_size) {
            let batch = data.subset(chunk)?;
            match model.loss_and_gradient(&batch)? {
                Some((loss, g)) => trainer.step(model, loss, &g)?,
                None => trainer.skip(),
            }
        }
        let l = epoch_loss(model, data)?;
        if !l.is_finite() {
            return Err(GttaError::TrainingDiverged { step: trainer.steps() });
        }
        loss_curve.push(l);
    }
    Ok(TrainReport {
        loss_curve,
        steps: trainer.steps(),
    })
}

/// Largest relative gap between analytic and central-difference gradients over a random
/// subset of at most `max_params` parameters.
pub fn gradient_check(model: &Mlp, batch: &WeightedBatch, rng: &RngStream, max_params: usize) -> Result<f64> {
    const H: f64 = 1e-5;
    let analytic = match model.loss_and_gradient(batch)? {
        Some((_, g)) => g.flat(),
        None => vec![0.0; model.num_params()],
    };
    let base = model.params();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for &i in rng.permutation(base.len()).iter().take(max_params) {
        let mut p = base.clone();
        p[i] = base[i] + H;
        probe.set_params(&p)?;
        let up = epoch_loss(&probe, batch)?;
        p[i] = base[i] - H;
        probe.set_params(&p)?;
        let down = epoch_loss(&probe, batch)?;
        let fd = (up - down) / (2.0 * H);
        let a = analytic[i];
        let denom = a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max((a - fd).abs() / denom);
    }
    Ok(worst)
}
