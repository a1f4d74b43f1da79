//! Statistical harness: bias/variance/error against the noise level, covariance
//! spectra of perturbations, std-vs-error correlation and structured-noise removal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ensemble::run_gtta;
use crate::error::{GttaError, Result};
use crate::io::tensor_fingerprint;
use crate::linalg::{dot, norm, symmetric_eigen};
use crate::metrics;
use crate::perturb::{latent_candidates, latent_sample_covariance, make_candidates, NoiseSchedule, NoiseStrategy};
use crate::predictor::Predictor;
use crate::rng::RngStream;
use crate::subspace::{Retain, Subspace};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceRow {
    pub strategy: NoiseStrategy,
    pub sigma: f64,
    pub bias2: f64,
    pub variance: f64,
    /// Mean squared error of the ensemble mean, computed directly.
    pub error: f64,
}

impl BiasVarianceRow {
    pub fn identity_gap(&self) -> f64 {
        (self.error - self.bias2 - self.variance).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceReport {
    pub eval_fingerprint: String,
    pub ensemble_size: usize,
    pub repeats: usize,
    pub rows: Vec<BiasVarianceRow>,
}

impl BiasVarianceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,sigma,bias2,variance,error\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.strategy, r.sigma, r.bias2, r.variance, r.error));
        }
        s
    }
}

/// For every strategy and grid sigma, builds `repeats` independent ensembles per input.
///
/// Repeat `m` of input `i` uses `rng.derive(i).derive(m)` for every sigma, so the grid is
/// compared on common random numbers. Moments are averaged over inputs and output elements.
#[allow(clippy::too_many_arguments)]
pub fn bias_variance_sweep<P: Predictor + ?Sized>(
    model: &P,
    s: &Subspace,
    strategies: &[NoiseStrategy],
    grid: &[f64],
    ensemble_size: usize,
    eval: &Dataset,
    repeats: usize,
    rng: &RngStream,
) -> Result<BiasVarianceReport> {
    if repeats < 2 {
        return Err(GttaError::Param("bias/variance needs at least 2 repeats".into()));
    }
    if grid.is_empty() || strategies.is_empty() {
        return Err(GttaError::Param("empty sigma grid or strategy list".into()));
    }
    let targets = eval.dense_targets()?;
    let mut rows = Vec::with_capacity(grid.len() * strategies.len());
    for &strategy in strategies {
        for &sigma in grid {
            let sched = NoiseSchedule::new(strategy, sigma, ensemble_size);
            let per_input = (0..eval.len())
                .into_par_iter()
                .map(|i| {
                    let x = eval.inputs.row(i);
                    let r = rng.derive(i as u64);
                    let means = (0..repeats)
                        .map(|m| run_gtta(model, s, &sched, x, &r.derive(m as u64)).map(|e| e.mean_prediction.into_data()))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(moments(&means, &targets[i]))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = per_input.len() as f64;
            let (b, v, e) = per_input
                .iter()
                .fold((0.0, 0.0, 0.0), |acc, m| (acc.0 + m.0, acc.1 + m.1, acc.2 + m.2));
            rows.push(BiasVarianceRow {
                strategy,
                sigma,
                bias2: b / n,
                variance: v / n,
                error: e / n,
            });
        }
    }
    Ok(BiasVarianceReport {
        eval_fingerprint: tensor_fingerprint(&eval.inputs),
        ensemble_size,
        repeats,
        rows,
    })
}

/// Element-averaged `(bias^2, variance, error)` of repeated estimates against `y`.
fn moments(estimates: &[Vec<f64>], y: &[f64]) -> (f64, f64, f64) {
    let m = estimates.len() as f64;
    let k = y.len() as f64;
    let (mut b, mut v, mut e) = (0.0, 0.0, 0.0);
    for (j, &yj) in y.iter().enumerate() {
        let grand = estimates.iter().map(|x| x[j]).sum::<f64>() / m;
        b += (grand - yj) * (grand - yj);
        v += estimates.iter().map(|x| (x[j] - grand) * (x[j] - grand)).sum::<f64>() / m;
        e += estimates.iter().map(|x| (x[j] - yj) * (x[j] - yj)).sum::<f64>() / m;
    }
    (b / k, v / k, e / k)
}

/// Global brightness/contrast jitter `x' = a x + b`, `a ~ 1 + N(0, contrast^2)`, `b ~ N(0, brightness^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub contrast: f64,
    pub brightness: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            contrast: 0.1,
            brightness: 0.1,
        }
    }
}

/// `n` jittered copies of `x`, copy `j` from `rng.derive(j)`.
pub fn jitter_candidates(x: &[f64], n: usize, spec: &JitterSpec, rng: &RngStream) -> Result<Vec<Vec<f64>>> {
    (0..n)
        .map(|j| {
            let g = rng.derive(j as u64).gaussian(2, 1.0)?;
            let a = 1.0 + spec.contrast * g[0];
            let b = spec.brightness * g[1];
            Ok(x.iter().map(|&v| a * v + b).collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumBaseline {
    None,
    GlobalJitter(JitterSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Latent covariance eigenvalues, descending, averaged over inputs.
    pub gtta: Vec<f64>,
    /// Same for the baseline, projected into the latent space.
    pub baseline: Option<Vec<f64>>,
    /// `sigma_i^2` of the schedule, descending.
    pub expected: Vec<f64>,
    pub ensemble_size: usize,
    pub inputs: usize,
}

impl SpectrumReport {
    /// Largest over smallest averaged GTTA eigenvalue, infinite if the smallest is zero.
    pub fn gtta_spread(&self) -> f64 {
        let hi = self.gtta.first().copied().unwrap_or(0.0);
        let lo = self.gtta.last().copied().unwrap_or(0.0);
        if lo > 0.0 {
            hi / lo
        } else if hi == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,gtta,baseline,expected\n");
        for (i, g) in self.gtta.iter().enumerate() {
            let b = self.baseline.as_ref().map_or(String::new(), |b| b[i].to_string());
            s.push_str(&format!("{i},{g},{b},{}\n", self.expected[i]));
        }
        s
    }
}

fn spectrum_of(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let cov = latent_sample_covariance(rows)?;
    Ok(symmetric_eigen(&cov.matrix, cov.dim).0)
}

fn average(curves: &[Vec<f64>]) -> Vec<f64> {
    let n = curves.len() as f64;
    (0..curves[0].len()).map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / n).collect()
}

/// Eigenvalues of the latent covariance of `N` perturbations per input, averaged over inputs.
pub fn covariance_spectrum_experiment(
    s: &Subspace,
    sched: &NoiseSchedule,
    inputs: &Tensor,
    ensemble_size: usize,
    rng: &RngStream,
    baseline: SpectrumBaseline,
) -> Result<SpectrumReport> {
    if ensemble_size < 2 {
        return Err(GttaError::Param("covariance needs N >= 2".into()));
    }
    if inputs.nrows() == 0 {
        return Err(GttaError::Data("no inputs".into()));
    }
    let sched = NoiseSchedule { ensemble_size, ..*sched };
    let gtta = (0..inputs.nrows())
        .into_par_iter()
        .map(|i| spectrum_of(&latent_candidates(&sched, s, inputs.row(i), &rng.derive(i as u64))?.candidates))
        .collect::<Result<Vec<_>>>()?;
    let baseline = match baseline {
        SpectrumBaseline::None => None,
        SpectrumBaseline::GlobalJitter(spec) => {
            let jitter_rng = rng.derive_named("jitter");
            let curves = (0..inputs.nrows())
                .into_par_iter()
                .map(|i| {
                    let cands = jitter_candidates(inputs.row(i), ensemble_size, &spec, &jitter_rng.derive(i as u64))?;
                    let latent = cands.iter().map(|c| s.project(c)).collect::<Result<Vec<_>>>()?;
                    spectrum_of(&latent)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(average(&curves))
        }
    };
    let mut expected: Vec<f64> = sched.per_component_sigma(s, 1)?.iter().map(|v| v * v).collect();
    expected.sort_by(|a, b| b.total_cmp(a));
    Ok(SpectrumReport {
        gtta: average(&gtta),
        baseline,
        expected,
        ensemble_size,
        inputs: inputs.nrows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_std: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub bins: Vec<StdBin>,
    /// `None` when std or error is constant over all elements.
    pub pearson: Option<f64>,
    pub total: usize,
}

impl CorrelationReport {
    pub fn is_degenerate(&self) -> bool {
        self.pearson.is_none()
    }

    /// Fraction of adjacent bin pairs whose MAE does not decrease.
    pub fn monotone_fraction(&self) -> f64 {
        let pairs = self.bins.len().saturating_sub(1);
        if pairs == 0 {
            return 1.0;
        }
        let up = self.bins.windows(2).filter(|w| w[1].mae >= w[0].mae).count();
        up as f64 / pairs as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi,count,mean_std,mae\n");
        for b in &self.bins {
            s.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, b.count, b.mean_std, b.mae));
        }
        s
    }
}

/// Pools `(std, |mean - y|)` over every output element of `eval` and bins by std
/// into groups of equal size.
pub fn std_error_correlation<P: Predictor + ?Sized>(
    model: &P,
    s: &Subspace,
    sched: &NoiseSchedule,
    eval: &Dataset,
    bins: usize,
    rng: &RngStream,
) -> Result<CorrelationReport> {
    if !model.output_kind().is_probability() {
        return Err(GttaError::UnsupportedTask("std/error correlation needs probability outputs".into()));
    }
    if bins == 0 {
        return Err(GttaError::Param("need at least one bin".into()));
    }
    let targets = eval.dense_targets()?;
    let pairs: Vec<Vec<(f64, f64)>> = (0..eval.len())
        .into_par_iter()
        .map(|i| {
            let r = run_gtta(model, s, sched, eval.inputs.row(i), &rng.derive(i as u64))?;
            Ok(r.std_map
                .data()
                .iter()
                .zip(r.mean_prediction.data())
                .zip(&targets[i])
                .map(|((&sd, &m), &y)| (sd, (m - y).abs()))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut pairs: Vec<(f64, f64)> = pairs.into_iter().flatten().collect();
    let stds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let errs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    let pearson = if constant(&stds) || constant(&errs) { None } else { Some(metrics::pearson(&stds, &errs)?) };
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = pairs.len();
    let nb = bins.min(total);
    let mut out = Vec::with_capacity(nb);
    for b in 0..nb {
        let chunk = &pairs[b * total / nb..(b + 1) * total / nb];
        let n = chunk.len() as f64;
        out.push(StdBin {
            lo: chunk[0].0,
            hi: chunk[chunk.len() - 1].0,
            count: chunk.len(),
            mean_std: chunk.iter().map(|p| p.0).sum::<f64>() / n,
            mae: chunk.iter().map(|p| p.1).sum::<f64>() / n,
        });
    }
    Ok(CorrelationReport { bins: out, pearson, total })
}

/// Cosine between a residual and the pattern; zero if either vanishes.
pub fn pattern_correlation(residual: &[f64], pattern: &[f64]) -> f64 {
    let d = norm(residual) * norm(pattern);
    if d == 0.0 {
        0.0
    } else {
        dot(residual, pattern) / d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuredNoiseConfig {
    /// Fraction of fit rows that receive the pattern.
    pub fraction: f64,
    pub retain: Retain,
    pub schedule: NoiseSchedule,
    pub jitter: JitterSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredNoiseReport {
    /// Mean residual-pattern correlation over test rows and candidates.
    pub gtta: f64,
    pub baseline: f64,
    pub n_components: usize,
    pub per_row_gtta: Vec<f64>,
    pub per_row_baseline: Vec<f64>,
}

/// Injects `pattern` into a fraction of `fit` rows, fits the subspace on them, then
/// perturbs and reconstructs each patterned test row and measures how much of the
/// pattern survives in `candidate - clean`.
pub fn structured_noise_removal(
    fit: &Tensor,
    test_clean: &Tensor,
    pattern: &[f64],
    cfg: &StructuredNoiseConfig,
    rng: &RngStream,
) -> Result<StructuredNoiseReport> {
    if pattern.len() != fit.row_len() || pattern.len() != test_clean.row_len() {
        return Err(GttaError::Shape("pattern length must match the input dimension".into()));
    }
    if !(0.0..=1.0).contains(&cfg.fraction) {
        return Err(GttaError::Param("injection fraction must be in [0, 1]".into()));
    }
    let n = fit.nrows();
    let take = (cfg.fraction * n as f64).round() as usize;
    let mut injected = vec![false; n];
    for &i in rng.derive_named("inject").permutation(n).iter().take(take) {
        injected[i] = true;
    }
    let rows: Vec<Vec<f64>> = fit
        .rows()
        .zip(&injected)
        .map(|(x, &on)| if on { x.iter().zip(pattern).map(|(a, p)| a + p).collect() } else { x.to_vec() })
        .collect();
    let s = Subspace::fit(&Tensor::from_rows(&rows)?, cfg.retain, None)?;
    let gtta_rng = rng.derive_named("gtta");
    let jitter_rng = rng.derive_named("jitter");
    let per_row: Vec<(f64, f64)> = (0..test_clean.nrows())
        .into_par_iter()
        .map(|i| {
            let clean = test_clean.row(i);
            let x: Vec<f64> = clean.iter().zip(pattern).map(|(a, p)| a + p).collect();
            let mean_corr = |cands: Vec<Vec<f64>>| {
                let total: f64 = cands
                    .iter()
                    .map(|c| {
                        let r: Vec<f64> = c.iter().zip(clean).map(|(a, b)| a - b).collect();
                        pattern_correlation(&r, pattern)
                    })
                    .sum();
                total / cands.len() as f64
            };
            let g = mean_corr(make_candidates(&cfg.schedule, &s, &x, &gtta_rng.derive(i as u64))?);
            let b = mean_corr(jitter_candidates(&x, cfg.schedule.ensemble_size, &cfg.jitter, &jitter_rng.derive(i as u64))?);
            Ok((g, b))
        })
        .collect::<Result<_>>()?;
    let per_row_gtta: Vec<f64> = per_row.iter().map(|p| p.0).collect();
    let per_row_baseline: Vec<f64> = per_row.iter().map(|p| p.1).collect();
    Ok(StructuredNoiseReport {
        gtta: metrics::mean(&per_row_gtta),
        baseline: metrics::mean(&per_row_baseline),
        n_components: s.n_components(),
        per_row_gtta,
        per_row_baseline,
    })
}
