//! Distilling the ensemble teacher back into a single student on unlabeled data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::ensemble::{run_gtta_rows, uncertainty_weights};
use crate::error::{GttaError, Result};
use crate::io::{load_container, save_container, take_section};
use crate::metrics;
use crate::perturb::NoiseSchedule;
use crate::predictor::mlp::{epoch_loss, epoch_order};
use crate::predictor::{Mlp, OutputKind, Predictor, TrainConfig, Trainer, WeightedBatch};
use crate::rng::RngStream;
use crate::subspace::Subspace;
use crate::tensor::Tensor;

/// Everything needed to regenerate a pseudo-label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoProvenance {
    pub schedule: NoiseSchedule,
    pub rng: RngStream,
    pub subspace_fingerprint: String,
}

/// Teacher means and uncertainty weights for unlabeled inputs. Carries no ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub inputs: Tensor,
    /// `[m, out]` teacher mean probabilities.
    pub teacher_targets: Tensor,
    /// `[m]` for classification, `[m, out]` per pixel for segmentation.
    pub weights: Tensor,
    pub task: Task,
    pub provenance: PseudoProvenance,
}

#[derive(Serialize, Deserialize)]
struct PseudoMeta {
    format: String,
    task: Task,
    provenance: PseudoProvenance,
}

const PSEUDO_FORMAT: &str = "gtta-pseudolabels/1";

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Training batch with the stored weights, unit weights, or thresholded targets.
    pub fn to_batch(&self, weighted: bool, hard_labels: bool) -> Result<WeightedBatch> {
        let targets = if hard_labels { harden(&self.teacher_targets, self.task)? } else { self.teacher_targets.clone() };
        let weights = if weighted {
            self.weights.clone()
        } else {
            Tensor::new(self.weights.shape().to_vec(), vec![1.0; self.weights.len()])?
        };
        WeightedBatch::new(self.inputs.clone(), targets, weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = PseudoMeta {
            format: PSEUDO_FORMAT.into(),
            task: self.task,
            provenance: self.provenance.clone(),
        };
        save_container(
            path,
            &[("inputs", &self.inputs), ("targets", &self.teacher_targets), ("weights", &self.weights)],
            &meta,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut sections, meta): (_, PseudoMeta) = load_container(path)?;
        if meta.format != PSEUDO_FORMAT {
            return Err(GttaError::Format(format!("expected {PSEUDO_FORMAT}, found {}", meta.format)));
        }
        let set = Self {
            inputs: take_section(&mut sections, "inputs")?,
            teacher_targets: take_section(&mut sections, "targets")?,
            weights: take_section(&mut sections, "weights")?,
            task: meta.task,
            provenance: meta.provenance,
        };
        WeightedBatch::new(set.inputs.clone(), set.teacher_targets.clone(), set.weights.clone())?;
        Ok(set)
    }
}

fn harden(targets: &Tensor, task: Task) -> Result<Tensor> {
    let data = match task {
        Task::Classification { num_classes } => targets
            .data()
            .chunks(num_classes)
            .flat_map(|row| {
                let k = metrics::argmax(row);
                (0..num_classes).map(move |c| if c == k { 1.0 } else { 0.0 })
            })
            .collect(),
        Task::Segmentation { .. } => targets.data().iter().map(|&p| if p > 0.5 { 1.0 } else { 0.0 }).collect(),
        Task::Regression => return Err(GttaError::UnsupportedTask("hard labels need a probability task".into())),
    };
    Tensor::new(targets.shape().to_vec(), data)
}

/// Runs the ensemble on every unlabeled input; input `i` uses `rng.derive(i)`.
///
/// Classification keeps one weight per sample, `1 - s` at the teacher's most likely class.
pub fn generate_pseudolabels<P: Predictor + ?Sized>(
    model: &P,
    s: &Subspace,
    sched: &NoiseSchedule,
    unlabeled: &Dataset,
    rng: &RngStream,
) -> Result<PseudoLabelSet> {
    let kind = model.output_kind();
    if !kind.is_probability() {
        return Err(GttaError::UnsupportedTask("pseudo-label weights need probability outputs".into()));
    }
    let results = run_gtta_rows(model, s, sched, &unlabeled.inputs, rng)?;
    let mut targets = Vec::with_capacity(results.len());
    let mut weights = Vec::with_capacity(results.len());
    for r in &results {
        let w = uncertainty_weights(r)?;
        let mean = r.mean_prediction.data().to_vec();
        match kind {
            OutputKind::Probabilities { .. } => weights.push(vec![w.data()[metrics::argmax(&mean)]]),
            _ => weights.push(w.into_data()),
        }
        targets.push(mean);
    }
    let weights = match kind {
        OutputKind::Probabilities { .. } => Tensor::vector(weights.into_iter().flatten().collect())?,
        _ => Tensor::from_rows(&weights)?,
    };
    Ok(PseudoLabelSet {
        inputs: unlabeled.inputs.clone(),
        teacher_targets: Tensor::from_rows(&targets)?,
        weights,
        task: unlabeled.task,
        provenance: PseudoProvenance {
            schedule: *sched,
            rng: *rng,
            subspace_fingerprint: s.fit_fingerprint().to_owned(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Weight of the supervised term; the pseudo-label term gets `1 - lambda`.
    pub lambda: f64,
    pub train: TrainConfig,
    pub hard_labels: bool,
    /// Use the uncertainty weights; unit weights otherwise.
    pub weighted: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            train: TrainConfig::default(),
            hard_labels: false,
            weighted: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    /// Mixed objective before any update.
    pub initial_loss: f64,
    /// Mixed objective after each epoch.
    pub loss_curve: Vec<f64>,
    /// Held-out score after each epoch (accuracy, F-score or RMSE by task).
    pub heldout: Vec<f64>,
    pub steps: usize,
}

fn mixed_loss(model: &Mlp, sup: &WeightedBatch, pseudo: &WeightedBatch, lambda: f64) -> Result<f64> {
    let mut l = 0.0;
    if lambda > 0.0 {
        l += lambda * epoch_loss(model, sup)?;
    }
    if lambda < 1.0 {
        l += (1.0 - lambda) * epoch_loss(model, pseudo)?;
    }
    Ok(l)
}

/// Fine-tunes `student` on `lambda * supervised + (1 - lambda) * weighted pseudo-label` loss.
///
/// Each step takes the next labeled mini-batch in the same order as plain training and
/// a pseudo-label chunk sized so every pseudo row is visited once per epoch. A pseudo
/// chunk whose weights are all zero contributes nothing, leaving the supervised
/// gradient unscaled.
pub fn distill(
    student: &mut Mlp,
    labeled: &Dataset,
    pseudo: &PseudoLabelSet,
    cfg: &DistillConfig,
    heldout: Option<&Dataset>,
    rng: &RngStream,
) -> Result<DistillReport> {
    if !(0.0..=1.0).contains(&cfg.lambda) {
        return Err(GttaError::Param(format!("lambda must be in [0, 1], got {}", cfg.lambda)));
    }
    if labeled.task != pseudo.task {
        return Err(GttaError::Data("labeled and pseudo-labeled sets have different tasks".into()));
    }
    let sup = WeightedBatch::from_dataset(labeled)?;
    let pse = pseudo.to_batch(cfg.weighted, cfg.hard_labels)?;
    let pseudo_rng = rng.derive_named("pseudo");
    let mut trainer = Trainer::new(student, cfg.train)?;
    let initial_loss = mixed_loss(student, &sup, &pse, cfg.lambda)?;
    let mut loss_curve = Vec::with_capacity(cfg.train.epochs);
    let mut scores = Vec::new();
    for epoch in 0..cfg.train.epochs {
        let sup_order = epoch_order(rng, epoch, sup.len());
        let chunks: Vec<&[usize]> = sup_order.chunks(cfg.train.batch_size).collect();
        let pseudo_chunk = pse.len().div_ceil(chunks.len()).max(1);
        let pse_order = epoch_order(&pseudo_rng, epoch, pse.len());
        let pse_chunks: Vec<&[usize]> = pse_order.chunks(pseudo_chunk).collect();
        for (k, chunk) in chunks.iter().enumerate() {
            let sup_part = if cfg.lambda > 0.0 { student.loss_and_gradient(&sup.subset(chunk)?)? } else { None };
            let pse_part = match (cfg.lambda < 1.0, pse_chunks.get(k)) {
                (true, Some(idx)) => student.loss_and_gradient(&pse.subset(idx)?)?,
                _ => None,
            };
            let step = match (sup_part, pse_part) {
                (Some(s), None) => Some(s),
                (None, Some(p)) => Some(p),
                (Some((ls, mut gs)), Some((lp, gp))) => {
                    gs.scale(cfg.lambda);
                    gs.add_scaled(&gp, 1.0 - cfg.lambda);
                    Some((cfg.lambda * ls + (1.0 - cfg.lambda) * lp, gs))
                }
                (None, None) => None,
            };
            match step {
                Some((l, g)) => trainer.step(student, l, &g)?,
                None => trainer.skip(),
            }
        }
        let l = mixed_loss(student, &sup, &pse, cfg.lambda)?;
        if !l.is_finite() {
            return Err(GttaError::TrainingDiverged { step: trainer.steps() });
        }
        loss_curve.push(l);
        if let Some(h) = heldout {
            scores.push(score(student, h)?);
        }
    }
    Ok(DistillReport {
        initial_loss,
        loss_curve,
        heldout: scores,
        steps: trainer.steps(),
    })
}

/// Task metric of `model` on a labeled set: accuracy, pixel F-score, or RMSE.
pub fn score<P: Predictor + ?Sized>(model: &P, ds: &Dataset) -> Result<f64> {
    let targets = ds
        .targets
        .as_ref()
        .ok_or_else(|| GttaError::Data("evaluation set has no targets".into()))?;
    let out = model.predict(&ds.inputs)?;
    match ds.task {
        Task::Classification { num_classes } => {
            let labels: Vec<usize> = targets.data().iter().map(|&y| y as usize).collect();
            metrics::accuracy(out.data(), num_classes, &labels)
        }
        Task::Segmentation { .. } => metrics::f_score(out.data(), targets.data(), 0.5),
        Task::Regression => metrics::rmse(out.data(), targets.data()),
    }
}
