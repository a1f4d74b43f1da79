//! Gaussian latent perturbation of a projected input.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GttaError, Result};
use crate::linalg::symmetric_eigen;
use crate::rng::{gaussian_scaled, RngStream};
use crate::scalar::Real;
use crate::subspace::Subspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStrategy {
    /// Every candidate uses `sigma_i = delta_i * sigma / var_i`.
    Constant,
    /// Candidate `j` uses `sigma_i = (j - 1) * delta_i * sigma / (N * var_i)`.
    Incremental,
}

impl std::str::FromStr for NoiseStrategy {
    type Err = GttaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(NoiseStrategy::Constant),
            "incremental" => Ok(NoiseStrategy::Incremental),
            _ => Err(GttaError::Param(format!("unknown noise strategy {s:?}"))),
        }
    }
}

impl std::fmt::Display for NoiseStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseStrategy::Constant => "constant",
            NoiseStrategy::Incremental => "incremental",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule<T: Real = f64> {
    pub strategy: NoiseStrategy,
    pub sigma: T,
    pub ensemble_size: usize,
    /// Lower bound applied to `var_i` before dividing.
    pub var_floor: T,
    /// When set, `sigma_i` is capped at `sigma_cap * delta_i`.
    pub sigma_cap: Option<T>,
    /// When set, reconstructed candidates are clamped element-wise to `[lo, hi]`.
    pub clamp: Option<(T, T)>,
}

pub const DEFAULT_VAR_FLOOR: f64 = 1e-6;

impl<T: Real> NoiseSchedule<T> {
    pub fn new(strategy: NoiseStrategy, sigma: T, ensemble_size: usize) -> Self {
        Self {
            strategy,
            sigma,
            ensemble_size,
            var_floor: T::lit(DEFAULT_VAR_FLOOR),
            sigma_cap: None,
            clamp: None,
        }
    }

    pub fn constant(sigma: T, ensemble_size: usize) -> Self {
        Self::new(NoiseStrategy::Constant, sigma, ensemble_size)
    }

    pub fn incremental(sigma: T, ensemble_size: usize) -> Self {
        Self::new(NoiseStrategy::Incremental, sigma, ensemble_size)
    }

    pub fn with_sigma(mut self, sigma: T) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_cap(mut self, cap: T) -> Self {
        self.sigma_cap = Some(cap);
        self
    }

    pub fn with_clamp(mut self, lo: T, hi: T) -> Self {
        self.clamp = Some((lo, hi));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= T::zero()) || !self.sigma.is_finite() {
            return Err(GttaError::Param(format!("sigma must be finite and nonnegative, got {}", self.sigma)));
        }
        if self.ensemble_size == 0 {
            return Err(GttaError::Param("ensemble size must be at least 1".into()));
        }
        if !(self.var_floor > T::zero()) {
            return Err(GttaError::Param("var_floor must be positive".into()));
        }
        if let Some(cap) = self.sigma_cap {
            if !(cap > T::zero()) {
                return Err(GttaError::Param("sigma_cap must be positive".into()));
            }
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo <= hi) {
                return Err(GttaError::Param("clamp range is empty".into()));
            }
        }
        Ok(())
    }

    /// Per-component noise std for candidate `j` (1-based).
    pub fn per_component_sigma(&self, s: &Subspace<T>, j: usize) -> Result<Vec<T>> {
        self.validate()?;
        if j == 0 || j > self.ensemble_size {
            return Err(GttaError::Param(format!("candidate index {j} outside 1..={}", self.ensemble_size)));
        }
        let ramp = match self.strategy {
            NoiseStrategy::Constant => T::one(),
            NoiseStrategy::Incremental => T::lit((j - 1) as f64) / T::lit(self.ensemble_size as f64),
        };
        Ok((0..s.n_components())
            .map(|i| {
                if s.is_degenerate(i) {
                    return T::zero();
                }
                let delta = s.ranges()[i];
                let var = s.explained_variance_ratio()[i].max(self.var_floor);
                let sigma_i = ramp * delta * self.sigma / var;
                match self.sigma_cap {
                    Some(cap) => sigma_i.min(cap * delta),
                    None => sigma_i,
                }
            })
            .collect())
    }
}

/// Latent coordinates of the N candidates, plus the noiseless projection.
#[derive(Debug, Clone)]
pub struct LatentCandidates<T> {
    pub base: Vec<T>,
    pub candidates: Vec<Vec<T>>,
}

/// Adds independent noise to the projection of `x`, one derived stream per candidate.
pub fn latent_candidates<T: Real>(
    sched: &NoiseSchedule<T>,
    s: &Subspace<T>,
    x: &[T],
    rng: &RngStream,
) -> Result<LatentCandidates<T>> {
    sched.validate()?;
    let base = s.project(x)?;
    let candidates = (1..=sched.ensemble_size)
        .into_par_iter()
        .map(|j| {
            let sigmas = sched.per_component_sigma(s, j)?;
            Ok(perturb_latent(&base, &sigmas, &rng.derive(j as u64)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentCandidates { base, candidates })
}

/// `base + eps` with `eps_i ~ N(0, sigmas_i^2)` drawn from `rng`.
pub fn perturb_latent<T: Real>(base: &[T], sigmas: &[T], rng: &RngStream) -> Vec<T> {
    let s64: Vec<f64> = sigmas.iter().map(|s| s.as_f64()).collect();
    let noise = gaussian_scaled(rng, &s64);
    base.iter().zip(noise).map(|(&p, e)| p + T::lit(e)).collect()
}

/// The N reconstructed candidate inputs for `x`.
///
/// With a full-rank subspace an unperturbed candidate is `x` itself rather than its
/// round-trip through the basis, so zero noise reproduces the input bit for bit.
pub fn make_candidates<T: Real>(
    sched: &NoiseSchedule<T>,
    s: &Subspace<T>,
    x: &[T],
    rng: &RngStream,
) -> Result<Vec<Vec<T>>> {
    let latents = latent_candidates(sched, s, x, rng)?;
    latents
        .candidates
        .par_iter()
        .map(|p| {
            let full_rank = s.n_components() == s.dim();
            let mut out = if full_rank && *p == latents.base { x.to_vec() } else { s.reconstruct(p)? };
            if let Some((lo, hi)) = sched.clamp {
                out.iter_mut().for_each(|v| *v = v.max(lo).min(hi));
            }
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LatentCovariance<T> {
    pub dim: usize,
    /// Row-major `dim x dim` unbiased sample covariance.
    pub matrix: Vec<T>,
    /// Eigenvalues in decreasing order.
    pub eigenvalues: Vec<T>,
}

impl<T: Real> LatentCovariance<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.matrix[i * self.dim + j]
    }
}

/// Unbiased sample covariance of latent rows and its spectrum.
pub fn latent_sample_covariance<T: Real>(rows: &[Vec<T>]) -> Result<LatentCovariance<T>> {
    let n = rows.len();
    if n < 2 {
        return Err(GttaError::Data(format!("need at least 2 latent rows, got {n}")));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(GttaError::Shape("latent rows differ in length".into()));
    }
    let inv_n = T::one() / T::lit(n as f64);
    // Offsets from the first row keep identical rows at exactly zero spread.
    let mut offset = vec![T::zero(); dim];
    for r in &rows[1..] {
        for ((o, &v), &f) in offset.iter_mut().zip(r).zip(&rows[0]) {
            *o += v - f;
        }
    }
    let mean: Vec<T> = rows[0].iter().zip(&offset).map(|(&f, &o)| f + o * inv_n).collect();
    let mut matrix = vec![T::zero(); dim * dim];
    for r in rows {
        let c: Vec<T> = r.iter().zip(&mean).map(|(&v, &m)| v - m).collect();
        for i in 0..dim {
            for j in i..dim {
                matrix[i * dim + j] += c[i] * c[j];
            }
        }
    }
    let dof = T::lit((n - 1) as f64);
    for i in 0..dim {
        for j in i..dim {
            let v = matrix[i * dim + j] / dof;
            matrix[i * dim + j] = v;
            matrix[j * dim + i] = v;
        }
    }
    let (eigenvalues, _) = symmetric_eigen(&matrix, dim);
    Ok(LatentCovariance { dim, matrix, eigenvalues })
}
