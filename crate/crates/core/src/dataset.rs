use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::error::{GttaError, Result};
use crate::io::{load_container, save_container, take_section};
use crate::tensor::Tensor;

const DATASET_FORMAT: &str = "gtta-dataset/1";

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    format: String,
    task: Task,
    has_targets: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Classification { num_classes: usize },
    Regression,
    Segmentation { height: usize, width: usize },
}

impl Task {
    /// Parses `classification:10`, `regression` or `segmentation:16x16`.
    pub fn parse(s: &str) -> Result<Self> {
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h, Some(t)),
            None => (s, None),
        };
        match (head, tail) {
            ("regression", None) => Ok(Task::Regression),
            ("classification", Some(n)) => {
                let num_classes: usize = n
                    .parse()
                    .map_err(|_| GttaError::Param(format!("bad class count in {s:?}")))?;
                if num_classes < 2 {
                    return Err(GttaError::Param("classification needs at least 2 classes".into()));
                }
                Ok(Task::Classification { num_classes })
            }
            ("segmentation", Some(hw)) => {
                let (h, w) = hw
                    .split_once('x')
                    .ok_or_else(|| GttaError::Param(format!("expected HxW in {s:?}")))?;
                let height = h.parse().map_err(|_| GttaError::Param(format!("bad height in {s:?}")))?;
                let width = w.parse().map_err(|_| GttaError::Param(format!("bad width in {s:?}")))?;
                if height == 0 || width == 0 {
                    return Err(GttaError::Param("segmentation size must be positive".into()));
                }
                Ok(Task::Segmentation { height, width })
            }
            _ => Err(GttaError::Param(format!("unknown task {s:?}"))),
        }
    }

    /// Number of model outputs per sample.
    pub fn output_len(&self) -> usize {
        match *self {
            Task::Classification { num_classes } => num_classes,
            Task::Regression => 1,
            Task::Segmentation { height, width } => height * width,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Classification { num_classes } => write!(f, "classification:{num_classes}"),
            Task::Regression => write!(f, "regression"),
            Task::Segmentation { height, width } => write!(f, "segmentation:{height}x{width}"),
        }
    }
}

/// Flattened samples with optional targets.
///
/// Targets are `[n]` class indices, `[n]` reals, or `[n, H, W]` masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Option<Tensor>,
    pub task: Task,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Option<Tensor>, task: Task) -> Result<Self> {
        if inputs.rank() != 2 {
            return Err(GttaError::Shape(format!("inputs must be [n, d], got {:?}", inputs.shape())));
        }
        let n = inputs.nrows();
        if n == 0 {
            return Err(GttaError::Data("dataset needs at least one row".into()));
        }
        if let Some(t) = &targets {
            if t.nrows() != n {
                return Err(GttaError::Shape(format!("targets have {} rows, inputs {n}", t.nrows())));
            }
            match task {
                Task::Classification { num_classes } => {
                    if t.rank() != 1 {
                        return Err(GttaError::Shape("class targets must be [n]".into()));
                    }
                    for &y in t.data() {
                        if y < 0.0 || y.fract() != 0.0 || y as usize >= num_classes {
                            return Err(GttaError::Data(format!("class label {y} outside [0, {num_classes})")));
                        }
                    }
                }
                Task::Regression => {
                    if t.rank() != 1 && t.rank() != 2 {
                        return Err(GttaError::Shape("regression targets must be [n] or [n, k]".into()));
                    }
                }
                Task::Segmentation { height, width } => {
                    if t.shape() != [n, height, width] {
                        return Err(GttaError::Shape(format!(
                            "segmentation targets must be [{n}, {height}, {width}], got {:?}",
                            t.shape()
                        )));
                    }
                }
            }
        }
        Ok(Self { inputs, targets, task })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.row_len()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let targets = match &self.targets {
            Some(t) => Some(t.select_rows(indices)?),
            None => None,
        };
        Self::new(self.inputs.select_rows(indices)?, targets, self.task)
    }

    pub fn without_targets(&self) -> Self {
        Self {
            inputs: self.inputs.clone(),
            targets: None,
            task: self.task,
        }
    }

    /// Writes a container with `inputs` and, when present, `targets` sections.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = DatasetMeta {
            format: DATASET_FORMAT.into(),
            task: self.task,
            has_targets: self.targets.is_some(),
        };
        let mut sections = vec![("inputs", &self.inputs)];
        if let Some(t) = &self.targets {
            sections.push(("targets", t));
        }
        save_container(path, &sections, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut sections, meta): (_, DatasetMeta) = load_container(path)?;
        if meta.format != DATASET_FORMAT {
            return Err(GttaError::Format(format!("expected {DATASET_FORMAT}, found {}", meta.format)));
        }
        let inputs = take_section(&mut sections, "inputs")?;
        let targets = if meta.has_targets { Some(take_section(&mut sections, "targets")?) } else { None };
        Self::new(inputs, targets, meta.task)
    }

    /// Dense per-sample target rows: one-hot for classes, the raw values otherwise.
    pub fn dense_targets(&self) -> Result<Vec<Vec<f64>>> {
        let t = self
            .targets
            .as_ref()
            .ok_or_else(|| GttaError::Data("dataset has no targets".into()))?;
        Ok(match self.task {
            Task::Classification { num_classes } => t
                .data()
                .iter()
                .map(|&y| {
                    let mut row = vec![0.0; num_classes];
                    row[y as usize] = 1.0;
                    row
                })
                .collect(),
            _ => t.rows().map(|r| r.to_vec()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_parse_round_trip() {
        for s in ["classification:10", "regression", "segmentation:16x12"] {
            assert_eq!(Task::parse(s).unwrap().to_string(), s);
        }
        assert!(Task::parse("classification:1").is_err());
        assert!(Task::parse("nope").is_err());
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let x = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        let y = Tensor::vector(vec![0.0, 3.0]).unwrap();
        let r = Dataset::new(x, Some(y), Task::Classification { num_classes: 3 });
        assert!(matches!(r, Err(GttaError::Data(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let x = Tensor::new(vec![2, 2], vec![0.5, 1.0, -1.0, 2.0]).unwrap();
        let y = Tensor::new(vec![2, 1, 1], vec![0.0, 1.0]).unwrap();
        let ds = Dataset::new(x, Some(y), Task::Segmentation { height: 1, width: 1 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.gttc");
        ds.save(&p).unwrap();
        assert_eq!(Dataset::load(&p).unwrap(), ds);
        ds.without_targets().save(&p).unwrap();
        assert_eq!(Dataset::load(&p).unwrap().targets, None);
    }

    #[test]
    fn one_hot_targets() {
        let x = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        let y = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let ds = Dataset::new(x, Some(y), Task::Classification { num_classes: 2 }).unwrap();
        assert_eq!(ds.dense_targets().unwrap(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }
}
