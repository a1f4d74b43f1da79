//! PCA subspace: fit on a reference set, project into it and reconstruct from it.
//!
//! Projections are always taken on mean-centered inputs and the mean is re-added on
//! reconstruction, so a full-rank round trip is the identity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GttaError, Result};
use crate::io;
use crate::linalg::{dot, thin_svd};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Components whose explained-variance ratio falls below this are treated as dead.
pub const DEGENERATE_RATIO: f64 = 1e-12;

const FORMAT_TAG: &str = "gtta-subspace/1";

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retain {
    /// Smallest count whose cumulative explained-variance ratio reaches the fraction.
    Fraction(f64),
    Count(usize),
    All,
}

impl Retain {
    /// Parses `0.99`, `count:5` or `all`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Retain::All);
        }
        if let Some(n) = s.strip_prefix("count:") {
            let n = n.parse().map_err(|_| GttaError::Param(format!("bad component count {s:?}")))?;
            return Ok(Retain::Count(n));
        }
        let k: f64 = s
            .parse()
            .map_err(|_| GttaError::Param(format!("expected fraction, count:N or all, got {s:?}")))?;
        Ok(Retain::Fraction(k))
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Retain::Fraction(k) if !(k > 0.0 && k <= 1.0) => {
                Err(GttaError::Param(format!("variance fraction must be in (0, 1], got {k}")))
            }
            Retain::Count(0) => Err(GttaError::Param("component count must be positive".into())),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for Retain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Retain::Fraction(k) => write!(f, "{k}"),
            Retain::Count(n) => write!(f, "count:{n}"),
            Retain::All => write!(f, "all"),
        }
    }
}

/// Where the projection ranges were measured.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum RangeSource {
    FitSet,
    External { fingerprint: String, rows: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subspace<T: Real = f64> {
    mean: Vec<T>,
    components: Vec<Vec<T>>,
    explained_variance_ratio: Vec<T>,
    ranges: Vec<T>,
    total_variance: T,
    fit_fingerprint: String,
    range_source: RangeSource,
}

#[derive(Debug, Serialize, Deserialize)]
struct SubspaceMeta {
    format: String,
    n_components: usize,
    dim: usize,
    total_variance: f64,
    degenerate_ratio: f64,
    fit_fingerprint: String,
    range_reference: RangeSource,
}

fn matrix_rows<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(GttaError::Shape(format!("{what} must be [n, d], got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<T: Real> Subspace<T> {
    /// Fits principal directions of the mean-centered `reference` rows.
    ///
    /// Ranges are measured on `range_reference` when given, otherwise on `reference`.
    pub fn fit(reference: &Tensor<T>, retain: Retain, range_reference: Option<&Tensor<T>>) -> Result<Self> {
        retain.validate()?;
        let (n, d) = matrix_rows(reference, "reference")?;
        if n < 2 {
            return Err(GttaError::Data(format!("need at least 2 reference rows, got {n}")));
        }
        let inv_n = T::one() / T::lit(n as f64);
        let mut mean = vec![T::zero(); d];
        for row in reference.rows() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_n);
        let centered: Vec<T> = reference
            .rows()
            .flat_map(|row| row.iter().zip(&mean).map(|(&x, &m)| x - m).collect::<Vec<_>>())
            .collect();

        let svd = thin_svd(&centered, n, d);
        let dof = T::lit((n - 1) as f64);
        let eigen: Vec<T> = svd.singular_values.iter().map(|&s| s * s / dof).collect();
        let total: T = eigen.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(GttaError::Data("reference rows have zero variance".into()));
        }
        let ratios: Vec<T> = eigen.iter().map(|&l| l / total).collect();
        let computable = (n - 1).min(d);
        let n_u = match retain {
            Retain::All => computable,
            Retain::Count(c) => {
                if c > computable {
                    return Err(GttaError::Param(format!("asked for {c} components, at most {computable} computable")));
                }
                c
            }
            Retain::Fraction(k) => {
                let target = T::lit(k - 1e-12);
                let mut cum = T::zero();
                let mut count = computable;
                for (i, &r) in ratios.iter().take(computable).enumerate() {
                    cum += r;
                    if cum >= target {
                        count = i + 1;
                        break;
                    }
                }
                count
            }
        };

        let components: Vec<Vec<T>> = svd
            .right_vectors
            .into_iter()
            .take(n_u)
            .map(|mut u| {
                let lead = u
                    .iter()
                    .enumerate()
                    .fold((0, T::zero()), |best, (i, &x)| if x.abs() > best.1.abs() { (i, x) } else { best });
                if lead.1 < T::zero() {
                    u.iter_mut().for_each(|x| *x = -*x);
                }
                u
            })
            .collect();

        let mut s = Subspace {
            mean,
            components,
            explained_variance_ratio: ratios[..n_u].to_vec(),
            ranges: vec![T::zero(); n_u],
            total_variance: total,
            fit_fingerprint: io::tensor_fingerprint(&reference.cast::<f64>()),
            range_source: RangeSource::FitSet,
        };
        match range_reference {
            Some(r) => s.set_ranges_from(r)?,
            None => {
                s.ranges = s.measure_ranges(reference)?;
            }
        }
        Ok(s)
    }

    /// Assembles a subspace from raw parts, checking shapes and orthonormality.
    pub fn from_parts(mean: Vec<T>, components: Vec<Vec<T>>, explained_variance_ratio: Vec<T>, ranges: Vec<T>) -> Result<Self> {
        let d = mean.len();
        let n_u = components.len();
        if d == 0 || n_u == 0 {
            return Err(GttaError::Shape("subspace needs a dimension and at least one component".into()));
        }
        if components.iter().any(|c| c.len() != d) || explained_variance_ratio.len() != n_u || ranges.len() != n_u {
            return Err(GttaError::Shape("inconsistent subspace part lengths".into()));
        }
        if ranges.iter().any(|&r| r < T::zero()) {
            return Err(GttaError::Param("ranges must be nonnegative".into()));
        }
        let s = Subspace {
            mean,
            components,
            explained_variance_ratio,
            ranges,
            total_variance: T::one(),
            fit_fingerprint: String::new(),
            range_source: RangeSource::FitSet,
        };
        let err = s.orthonormality_error();
        if err.as_f64() > 1e-8 {
            return Err(GttaError::Data(format!("components not orthonormal (max error {err})")));
        }
        Ok(s)
    }

    fn measure_ranges(&self, rows: &Tensor<T>) -> Result<Vec<T>> {
        let (_, d) = matrix_rows(rows, "range reference")?;
        if d != self.dim() {
            return Err(GttaError::Shape(format!("range reference has dimension {d}, subspace {}", self.dim())));
        }
        let mut lo = vec![T::infinity(); self.n_components()];
        let mut hi = vec![T::neg_infinity(); self.n_components()];
        for row in rows.rows() {
            let p = self.project(row)?;
            for i in 0..p.len() {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Ok(hi.iter().zip(&lo).map(|(&h, &l)| h - l).collect())
    }

    /// Re-measures projection ranges on another row set.
    pub fn set_ranges_from(&mut self, rows: &Tensor<T>) -> Result<()> {
        self.ranges = self.measure_ranges(rows)?;
        self.range_source = RangeSource::External {
            fingerprint: io::tensor_fingerprint(&rows.cast::<f64>()),
            rows: rows.nrows(),
        };
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<T>] {
        &self.components
    }

    pub fn explained_variance_ratio(&self) -> &[T] {
        &self.explained_variance_ratio
    }

    pub fn ranges(&self) -> &[T] {
        &self.ranges
    }

    pub fn total_variance(&self) -> T {
        self.total_variance
    }

    /// Sample-covariance eigenvalues of the retained components.
    pub fn eigenvalues(&self) -> Vec<T> {
        self.explained_variance_ratio.iter().map(|&r| r * self.total_variance).collect()
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.explained_variance_ratio[i].as_f64() < DEGENERATE_RATIO
    }

    pub fn fit_fingerprint(&self) -> &str {
        &self.fit_fingerprint
    }

    pub fn range_source(&self) -> &RangeSource {
        &self.range_source
    }

    /// Largest deviation of the component Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> T {
        let mut worst = T::zero();
        for (i, a) in self.components.iter().enumerate() {
            for (j, b) in self.components.iter().enumerate().skip(i) {
                let want = if i == j { T::one() } else { T::zero() };
                worst = worst.max((dot(a, b) - want).abs());
            }
        }
        worst
    }

    /// Coordinates `(x - mean) . u_i` of `x` on every retained component.
    pub fn project(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(GttaError::Shape(format!("input has length {}, subspace dimension {}", x.len(), self.dim())));
        }
        let centered: Vec<T> = x.iter().zip(&self.mean).map(|(&a, &m)| a - m).collect();
        Ok(self.components.iter().map(|u| dot(&centered, u)).collect())
    }

    /// `mean + sum_i p_i u_i`.
    pub fn reconstruct(&self, p: &[T]) -> Result<Vec<T>> {
        if p.len() != self.n_components() {
            return Err(GttaError::Shape(format!(
                "latent vector has length {}, subspace has {} components",
                p.len(),
                self.n_components()
            )));
        }
        let mut out = self.mean.clone();
        for (&coef, u) in p.iter().zip(&self.components) {
            for (o, &ui) in out.iter_mut().zip(u) {
                *o += coef * ui;
            }
        }
        Ok(out)
    }

    pub fn project_rows(&self, rows: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        matrix_rows(rows, "input")?;
        rows.rows().map(|r| self.project(r)).collect()
    }

    pub fn cast<U: Real>(&self) -> Subspace<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        Subspace {
            mean: c(&self.mean),
            components: self.components.iter().map(|u| c(u)).collect(),
            explained_variance_ratio: c(&self.explained_variance_ratio),
            ranges: c(&self.ranges),
            total_variance: U::lit(self.total_variance.as_f64()),
            fit_fingerprint: self.fit_fingerprint.clone(),
            range_source: self.range_source.clone(),
        }
    }
}

impl Subspace<f64> {
    /// Writes the container (mean, components, variance_ratios, ranges) and JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mean = Tensor::vector(self.mean.clone())?;
        let comps = Tensor::from_rows(&self.components)?;
        let ratios = Tensor::vector(self.explained_variance_ratio.clone())?;
        let ranges = Tensor::vector(self.ranges.clone())?;
        let meta = SubspaceMeta {
            format: FORMAT_TAG.into(),
            n_components: self.n_components(),
            dim: self.dim(),
            total_variance: self.total_variance,
            degenerate_ratio: DEGENERATE_RATIO,
            fit_fingerprint: self.fit_fingerprint.clone(),
            range_reference: self.range_source.clone(),
        };
        io::save_container(
            path,
            &[("mean", &mean), ("components", &comps), ("variance_ratios", &ratios), ("ranges", &ranges)],
            &meta,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut secs, meta): (_, SubspaceMeta) = io::load_container(path)?;
        if meta.format != FORMAT_TAG {
            return Err(GttaError::Format(format!("unexpected subspace format {:?}", meta.format)));
        }
        let mean = io::take_section(&mut secs, "mean")?.into_data();
        let comps = io::take_section(&mut secs, "components")?;
        let ratios = io::take_section(&mut secs, "variance_ratios")?.into_data();
        let ranges = io::take_section(&mut secs, "ranges")?.into_data();
        if comps.rank() != 2 || comps.shape() != [meta.n_components, meta.dim] || mean.len() != meta.dim {
            return Err(GttaError::Format("subspace sections disagree with metadata".into()));
        }
        let components = comps.rows().map(|r| r.to_vec()).collect();
        let mut s = Subspace::from_parts(mean, components, ratios, ranges).map_err(|e| GttaError::Format(e.to_string()))?;
        s.total_variance = meta.total_variance;
        s.fit_fingerprint = meta.fit_fingerprint;
        s.range_source = meta.range_reference;
        Ok(s)
    }
}
