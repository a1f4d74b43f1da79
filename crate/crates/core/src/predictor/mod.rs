//! Models wrapped by the ensemble.

mod loss;
pub(crate) mod mlp;
mod subprocess;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use loss::{weighted_cross_entropy, weighted_squared_error, CrossEntropyKind, PROB_FLOOR};
pub use mlp::{gradient_check, mlp_train, Gradients, Head, Mlp, TrainConfig, TrainReport, Trainer};
pub use subprocess::SubprocessPredictor;

use crate::dataset::Task;
use crate::error::{GttaError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputKind {
    Probabilities { num_classes: usize },
    RealValues { dims: usize },
    PixelProbabilities { height: usize, width: usize },
}

impl OutputKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification { num_classes } => OutputKind::Probabilities { num_classes },
            Task::Regression => OutputKind::RealValues { dims: 1 },
            Task::Segmentation { height, width } => OutputKind::PixelProbabilities { height, width },
        }
    }

    /// Shape of one sample's output.
    pub fn sample_shape(&self) -> Vec<usize> {
        match *self {
            OutputKind::Probabilities { num_classes } => vec![num_classes],
            OutputKind::RealValues { dims } => vec![dims],
            OutputKind::PixelProbabilities { height, width } => vec![height, width],
        }
    }

    pub fn len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_probability(&self) -> bool {
        !matches!(self, OutputKind::RealValues { .. })
    }

    pub fn batch_shape(&self, batch: usize) -> Vec<usize> {
        let mut s = vec![batch];
        s.extend(self.sample_shape());
        s
    }

    /// Checks a batch prediction against this kind's shape and value invariants.
    pub fn check_output(&self, out: &Tensor, batch: usize) -> Result<()> {
        if out.shape() != self.batch_shape(batch) {
            return Err(GttaError::Predictor(format!(
                "expected output shape {:?}, got {:?}",
                self.batch_shape(batch),
                out.shape()
            )));
        }
        match *self {
            OutputKind::Probabilities { .. } => {
                for (i, row) in out.rows().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
                        return Err(GttaError::Predictor(format!("row {i} is not a probability vector")));
                    }
                }
            }
            OutputKind::PixelProbabilities { .. } => {
                if out.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(GttaError::Predictor("pixel probability outside [0, 1]".into()));
                }
            }
            OutputKind::RealValues { .. } => {}
        }
        Ok(())
    }
}

/// A trained model in inference mode.
pub trait Predictor: Send + Sync {
    fn output_kind(&self) -> OutputKind;

    /// Maps a `[b, d]` batch to `[b, ...output shape]`. Must be deterministic.
    fn predict(&self, batch: &Tensor) -> Result<Tensor>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn output_kind(&self) -> OutputKind {
        (**self).output_kind()
    }
    fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        (**self).predict(batch)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn output_kind(&self) -> OutputKind {
        (**self).output_kind()
    }
    fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        (**self).predict(batch)
    }
}

impl<P: Predictor + ?Sized> Predictor for Arc<P> {
    fn output_kind(&self) -> OutputKind {
        (**self).output_kind()
    }
    fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        (**self).predict(batch)
    }
}

/// Wraps a predictor and counts `predict` calls and rows seen.
#[derive(Debug)]
pub struct CountingPredictor<P> {
    inner: P,
    calls: AtomicUsize,
    rows: AtomicUsize,
}

impl<P> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            rows: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn rows(&self) -> usize {
        self.rows.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: Predictor> Predictor for CountingPredictor<P> {
    fn output_kind(&self) -> OutputKind {
        self.inner.output_kind()
    }

    fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.rows.fetch_add(batch.nrows(), Ordering::SeqCst);
        self.inner.predict(batch)
    }
}

/// Predicts one sample at a time, returning its output with the batch axis removed.
pub fn predict_one<P: Predictor + ?Sized>(model: &P, x: &[f64]) -> Result<Tensor> {
    let batch = Tensor::new(vec![1, x.len()], x.to_vec())?;
    let out = model.predict(&batch)?;
    Tensor::new(model.output_kind().sample_shape(), out.into_data())
}

/// Inputs, dense targets `[n, out]`, and per-sample `[n]` or per-element `[n, out]` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub weights: Tensor,
}

impl WeightedBatch {
    pub fn new(inputs: Tensor, targets: Tensor, weights: Tensor) -> Result<Self> {
        if inputs.rank() != 2 || targets.rank() != 2 {
            return Err(GttaError::Shape("inputs and targets must be [n, _]".into()));
        }
        let n = inputs.nrows();
        if n == 0 {
            return Err(GttaError::Data("empty batch".into()));
        }
        if targets.nrows() != n {
            return Err(GttaError::Shape("targets and inputs differ in row count".into()));
        }
        let per_sample = weights.shape() == [n];
        if !per_sample && weights.shape() != targets.shape() {
            return Err(GttaError::Shape(format!(
                "weights must be [{n}] or {:?}, got {:?}",
                targets.shape(),
                weights.shape()
            )));
        }
        if weights.data().iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(GttaError::Param("weights must lie in [0, 1]".into()));
        }
        Ok(Self { inputs, targets, weights })
    }

    /// Uniform unit weights per sample.
    pub fn unweighted(inputs: Tensor, targets: Tensor) -> Result<Self> {
        let n = inputs.nrows();
        Self::new(inputs, targets, Tensor::vector(vec![1.0; n])?)
    }

    /// Unit weights shaped per element when `per_element` is set.
    pub fn with_unit_weights(inputs: Tensor, targets: Tensor, per_element: bool) -> Result<Self> {
        let w = if per_element {
            Tensor::new(targets.shape().to_vec(), vec![1.0; targets.len()])?
        } else {
            Tensor::vector(vec![1.0; inputs.nrows()])?
        };
        Self::new(inputs, targets, w)
    }

    /// Builds a batch from a labeled dataset with unit weights.
    pub fn from_dataset(ds: &crate::dataset::Dataset) -> Result<Self> {
        let rows = ds.dense_targets()?;
        let targets = Tensor::from_rows(&rows)?;
        let per_element = matches!(ds.task, Task::Segmentation { .. });
        Self::with_unit_weights(ds.inputs.clone(), targets, per_element)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn per_element_weights(&self) -> bool {
        self.weights.rank() == 2
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            inputs: self.inputs.select_rows(idx)?,
            targets: self.targets.select_rows(idx)?,
            weights: self.weights.select_rows(idx)?,
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.data().iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_checks() {
        let k = OutputKind::Probabilities { num_classes: 2 };
        let ok = Tensor::new(vec![1, 2], vec![0.25, 0.75]).unwrap();
        assert!(k.check_output(&ok, 1).is_ok());
        let bad = Tensor::new(vec![1, 2], vec![0.5, 0.6]).unwrap();
        assert!(k.check_output(&bad, 1).is_err());
        assert!(k.check_output(&ok, 2).is_err());
    }

    #[test]
    fn weighted_batch_validation() {
        let x = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        let y = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        assert!(WeightedBatch::new(x.clone(), y.clone(), Tensor::vector(vec![0.5, 1.5]).unwrap()).is_err());
        assert!(WeightedBatch::new(x.clone(), y.clone(), Tensor::vector(vec![1.0]).unwrap()).is_err());
        let b = WeightedBatch::new(x, y.clone(), y).unwrap();
        assert!(b.per_element_weights());
    }
}
