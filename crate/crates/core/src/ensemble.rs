//! Ensemble inference: perturbed candidates through the model, averaged, with the
//! per-element spread as uncertainty.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GttaError, Result};
use crate::perturb::{make_candidates, NoiseSchedule, NoiseStrategy};
use crate::predictor::{OutputKind, Predictor};
use crate::rng::RngStream;
use crate::subspace::Subspace;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    /// `[N, ...output shape]`.
    pub candidates: Tensor,
    pub mean_prediction: Tensor,
    /// Population standard deviation over candidates, per output element.
    pub std_map: Tensor,
    pub chosen_sigma: f64,
    pub schedule: NoiseSchedule,
    pub output_kind: OutputKind,
}

/// Element-wise mean and population std over the leading axis.
///
/// The mean is accumulated as offsets from the first candidate, so identical
/// candidates reproduce their value bit for bit.
pub fn aggregate(outputs: &Tensor) -> Result<(Tensor, Tensor)> {
    if outputs.rank() < 2 || outputs.nrows() == 0 {
        return Err(GttaError::Shape(format!("expected [N, ...] candidate outputs, got {:?}", outputs.shape())));
    }
    let n = outputs.nrows();
    let first = outputs.row(0);
    let inv = 1.0 / n as f64;
    let mut offset = vec![0.0; first.len()];
    for row in outputs.rows().skip(1) {
        for ((o, &v), &f) in offset.iter_mut().zip(row).zip(first) {
            *o += v - f;
        }
    }
    let mean: Vec<f64> = first.iter().zip(&offset).map(|(&f, &o)| f + o * inv).collect();
    let mut var = vec![0.0; first.len()];
    for row in outputs.rows() {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|&s| (s * inv).sqrt()).collect();
    let shape = outputs.row_shape();
    Ok((Tensor::new(shape.clone(), mean)?, Tensor::new(shape, std)?))
}

/// Runs the N candidates of `x` through `model` in one batch and aggregates them.
pub fn run_gtta<P: Predictor + ?Sized>(
    model: &P,
    s: &Subspace,
    sched: &NoiseSchedule,
    x: &[f64],
    rng: &RngStream,
) -> Result<EnsembleResult> {
    let candidates = make_candidates(sched, s, x, rng)?;
    let batch = Tensor::from_rows(&candidates)?;
    let kind = model.output_kind();
    let outputs = model.predict(&batch)?;
    kind.check_output(&outputs, candidates.len())?;
    let (mean_prediction, std_map) = aggregate(&outputs)?;
    Ok(EnsembleResult {
        candidates: outputs,
        mean_prediction,
        std_map,
        chosen_sigma: sched.sigma,
        schedule: *sched,
        output_kind: kind,
    })
}

/// `run_gtta` over every row of `inputs`, row `i` drawing from `rng.derive(i)`.
pub fn run_gtta_rows<P: Predictor + ?Sized>(
    model: &P,
    s: &Subspace,
    sched: &NoiseSchedule,
    inputs: &Tensor,
    rng: &RngStream,
) -> Result<Vec<EnsembleResult>> {
    (0..inputs.nrows())
        .into_par_iter()
        .map(|i| run_gtta(model, s, sched, inputs.row(i), &rng.derive(i as u64)))
        .collect()
}

/// `w = 1 - s`, clamped to `[0, 1]`; only defined for probability outputs.
pub fn uncertainty_weights(r: &EnsembleResult) -> Result<Tensor> {
    if !r.output_kind.is_probability() {
        return Err(GttaError::UnsupportedTask("uncertainty weights need probability outputs".into()));
    }
    let w = r.std_map.data().iter().map(|&s| (1.0 - s).clamp(0.0, 1.0)).collect();
    Tensor::new(r.std_map.shape().to_vec(), w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSearchConfig {
    pub grid: Vec<f64>,
    /// Pixel confidence threshold for segmentation; defaults by strategy when unset.
    pub confidence_threshold: Option<f64>,
}

pub const DEFAULT_SIGMA_GRID: [f64; 7] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5];

impl Default for SigmaSearchConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_SIGMA_GRID.to_vec(),
            confidence_threshold: None,
        }
    }
}

impl SigmaSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(GttaError::Param("sigma grid is empty".into()));
        }
        if self.grid.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(GttaError::Param("sigma grid values must be finite and nonnegative".into()));
        }
        if self.grid.windows(2).any(|w| w[0] > w[1]) {
            return Err(GttaError::Param("sigma grid must be sorted".into()));
        }
        if let Some(t) = self.confidence_threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(GttaError::Param("confidence threshold must be in (0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn threshold_for(&self, strategy: NoiseStrategy) -> f64 {
        self.confidence_threshold.unwrap_or(match strategy {
            NoiseStrategy::Constant => 0.8,
            NoiseStrategy::Incremental => 0.75,
        })
    }
}

/// Certainty of an ensemble output; higher means less uncertain.
pub fn confidence_score(r: &EnsembleResult, threshold: f64) -> Result<f64> {
    match r.output_kind {
        OutputKind::Probabilities { .. } => Ok(r.mean_prediction.data().iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        OutputKind::PixelProbabilities { .. } => Ok(r
            .mean_prediction
            .data()
            .iter()
            .filter(|&&p| p > threshold || p < 1.0 - threshold)
            .count() as f64),
        OutputKind::RealValues { .. } => Err(GttaError::UnsupportedTask(
            "automatic sigma selection has no uncertainty rule for regression".into(),
        )),
    }
}

/// Evaluates every grid sigma with the same random streams and keeps the most certain;
/// ties go to the smaller sigma.
pub fn select_sigma<P: Predictor + ?Sized>(
    model: &P,
    s: &Subspace,
    sched: &NoiseSchedule,
    x: &[f64],
    cfg: &SigmaSearchConfig,
    rng: &RngStream,
) -> Result<(f64, EnsembleResult)> {
    cfg.validate()?;
    if !model.output_kind().is_probability() {
        return Err(GttaError::UnsupportedTask(
            "automatic sigma selection has no uncertainty rule for regression".into(),
        ));
    }
    let threshold = cfg.threshold_for(sched.strategy);
    let mut best: Option<(f64, f64, EnsembleResult)> = None;
    for &sigma in &cfg.grid {
        let r = run_gtta(model, s, &sched.with_sigma(sigma), x, rng)?;
        let score = confidence_score(&r, threshold)?;
        if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
            best = Some((sigma, score, r));
        }
    }
    let (sigma, _, r) = best.expect("grid is nonempty");
    Ok((sigma, r))
}

/// One decoded candidate sequence with a probability vector per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCandidate {
    pub tokens: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

/// Keeps candidates of the most frequent length (ties to the shorter), averages their
/// per-token probabilities and takes the argmax at each position.
pub fn aggregate_variable_length(candidates: &[TokenCandidate]) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(GttaError::Data("no candidate sequences".into()));
    }
    for (i, c) in candidates.iter().enumerate() {
        if c.tokens.len() != c.probs.len() {
            return Err(GttaError::Shape(format!("candidate {i} has {} tokens but {} probability rows", c.tokens.len(), c.probs.len())));
        }
    }
    let mut counts: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for c in candidates {
        *counts.entry(c.tokens.len()).or_default() += 1;
    }
    // BTreeMap iterates lengths ascending, so a strict comparison keeps the shorter on ties.
    let (modal_len, _) = counts
        .iter()
        .fold((0usize, 0usize), |best, (&len, &n)| if n > best.1 { (len, n) } else { best });
    let survivors: Vec<&TokenCandidate> = candidates.iter().filter(|c| c.tokens.len() == modal_len).collect();
    let mut out = Vec::with_capacity(modal_len);
    for pos in 0..modal_len {
        let vocab = survivors[0].probs[pos].len();
        let mut avg = vec![0.0; vocab];
        for c in &survivors {
            let row = &c.probs[pos];
            if row.len() != vocab {
                return Err(GttaError::Shape(format!("position {pos} has inconsistent vocabulary sizes")));
            }
            avg.iter_mut().zip(row).for_each(|(a, &p)| *a += p);
        }
        let best = avg
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        out.push(best.0);
    }
    Ok(out)
}
