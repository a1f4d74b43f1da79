//! Uncertainty-weighted losses.

use crate::error::{GttaError, Result};

/// Probabilities are clamped to at least this value inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossEntropyKind {
    /// Rows of `num_classes` probabilities, one weight per row.
    Categorical { num_classes: usize },
    /// Independent Bernoulli elements (per-pixel), one weight per element.
    Binary,
}

fn total_weight(w: &[f64]) -> Result<f64> {
    if w.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(GttaError::Param("weights must lie in [0, 1]".into()));
    }
    let sum: f64 = w.iter().sum();
    if sum == 0.0 {
        return Err(GttaError::DegenerateWeight);
    }
    Ok(sum)
}

/// `-(1 / sum w) * sum w * y * log p`, with the two-term `y, 1 - y` form for binary targets.
pub fn weighted_cross_entropy(p: &[f64], y: &[f64], w: &[f64], kind: CrossEntropyKind) -> Result<f64> {
    if p.len() != y.len() {
        return Err(GttaError::Shape(format!("{} predictions vs {} targets", p.len(), y.len())));
    }
    let ln = |v: f64| v.max(PROB_FLOOR).ln();
    match kind {
        CrossEntropyKind::Categorical { num_classes } => {
            if num_classes == 0 || p.len() != w.len() * num_classes {
                return Err(GttaError::Shape(format!(
                    "{} probabilities do not form {} rows of {num_classes}",
                    p.len(),
                    w.len()
                )));
            }
            let sw = total_weight(w)?;
            let mut acc = 0.0;
            for (i, &wi) in w.iter().enumerate() {
                if wi == 0.0 {
                    continue;
                }
                let row: f64 = (0..num_classes)
                    .map(|c| {
                        let k = i * num_classes + c;
                        if y[k] == 0.0 {
                            0.0
                        } else {
                            y[k] * ln(p[k])
                        }
                    })
                    .sum();
                acc += wi * row;
            }
            Ok(-acc / sw)
        }
        CrossEntropyKind::Binary => {
            if w.len() != p.len() {
                return Err(GttaError::Shape("binary cross-entropy needs one weight per element".into()));
            }
            let sw = total_weight(w)?;
            let mut acc = 0.0;
            for ((&pk, &yk), &wk) in p.iter().zip(y).zip(w) {
                if wk == 0.0 {
                    continue;
                }
                let mut term = 0.0;
                if yk != 0.0 {
                    term += yk * ln(pk);
                }
                if yk != 1.0 {
                    term += (1.0 - yk) * ln(1.0 - pk);
                }
                acc += wk * term;
            }
            Ok(-acc / sw)
        }
    }
}

/// `sum_i w_i * |pred_i - y_i|^2 / sum_i w_i`, with `pred`/`y` rows of `w.len()` samples.
pub fn weighted_squared_error(pred: &[f64], y: &[f64], w: &[f64]) -> Result<f64> {
    if pred.len() != y.len() || w.is_empty() || !pred.len().is_multiple_of(w.len()) {
        return Err(GttaError::Shape(format!(
            "{} predictions, {} targets, {} weights",
            pred.len(),
            y.len(),
            w.len()
        )));
    }
    let sw = total_weight(w)?;
    let k = pred.len() / w.len();
    let acc: f64 = w
        .iter()
        .enumerate()
        .map(|(i, &wi)| {
            let r: f64 = (0..k).map(|c| (pred[i * k + c] - y[i * k + c]).powi(2)).sum();
            wi * r
        })
        .sum();
    Ok(acc / sw)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn single_pixel_ln2() {
        let l = weighted_cross_entropy(&[0.5], &[1.0], &[1.0], CrossEntropyKind::Binary).unwrap();
        assert!((l - LN2).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_masks_element() {
        // Per-pixel losses ln 2 and ln 4.
        let l = weighted_cross_entropy(&[0.5, 0.25], &[1.0, 1.0], &[1.0, 0.0], CrossEntropyKind::Binary).unwrap();
        assert!((l - LN2).abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_match_plain_cross_entropy() {
        let p = [0.7, 0.2, 0.1, 0.3, 0.3, 0.4];
        let y = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let plain = -(0.7f64.ln() + 0.4f64.ln()) / 2.0;
        for c in [1.0, 0.5, 0.013] {
            let l = weighted_cross_entropy(&p, &y, &[c, c], CrossEntropyKind::Categorical { num_classes: 3 }).unwrap();
            assert!((l - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_and_shape_errors() {
        assert!(matches!(
            weighted_cross_entropy(&[0.5], &[1.0], &[0.0], CrossEntropyKind::Binary),
            Err(GttaError::DegenerateWeight)
        ));
        assert!(matches!(weighted_squared_error(&[1.0], &[1.0], &[0.0]), Err(GttaError::DegenerateWeight)));
        assert!(weighted_cross_entropy(&[0.5, 0.5], &[1.0], &[1.0], CrossEntropyKind::Binary).is_err());
    }

    #[test]
    fn clamps_log_of_zero() {
        let l = weighted_cross_entropy(&[0.0], &[1.0], &[1.0], CrossEntropyKind::Binary).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn squared_error() {
        assert_eq!(weighted_squared_error(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(weighted_squared_error(&[3.0], &[1.0], &[1.0]).unwrap(), 4.0);
        let mse = weighted_squared_error(&[1.0, 2.0, 4.0], &[0.0, 0.0, 0.0], &[0.3, 0.3, 0.3]).unwrap();
        assert!((mse - 21.0 / 3.0).abs() < 1e-12);
    }
}
