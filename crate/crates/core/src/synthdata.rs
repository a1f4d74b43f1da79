//! Seeded fixture generators. Every output is a pure function of its spec.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::error::{GttaError, Result};
use crate::rng::RngStream;
use crate::segcount::InstanceMap;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthSpec {
    Tabular(TabularSpec),
    Blobs(BlobsSpec),
    Images(ImageSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabularSpec {
    pub n: usize,
    pub dim: usize,
    /// Number of latent factors driving the correlated inputs.
    pub factors: usize,
    pub observation_noise: f64,
    pub seed: u64,
}

impl Default for TabularSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            dim: 36,
            factors: 6,
            observation_noise: 0.1,
            seed: 0,
        }
    }
}

/// The noiseless regression function of a tabular fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularFunction {
    pub weights: Vec<f64>,
    pub curvature: f64,
}

impl TabularFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
        lin + self.curvature * x[0].tanh() * x[1 % x.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub function: TabularFunction,
}

/// Correlated inputs from a few latent factors; target linear plus a mild interaction.
/// Rows are split 60/20/20.
pub fn gen_tabular(spec: &TabularSpec) -> Result<TabularData> {
    if spec.n < 5 || spec.dim < 2 || spec.factors == 0 || spec.observation_noise < 0.0 {
        return Err(GttaError::Param("tabular spec needs n >= 5, dim >= 2, factors >= 1 and noise >= 0".into()));
    }
    let root = RngStream::from_seed(spec.seed);
    let loadings = root.derive_named("loadings").gaussian(spec.dim * spec.factors, 1.0)?;
    let raw_w = root.derive_named("weights").gaussian(spec.dim, 1.0)?;
    let scale = 1.0 / (spec.dim as f64).sqrt();
    let function = TabularFunction {
        weights: raw_w.iter().map(|w| w * scale).collect(),
        curvature: 0.5,
    };
    let rows: Vec<(Vec<f64>, f64)> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let r = root.derive(i as u64);
            let z = r.derive(0).gaussian(spec.factors, 1.0)?;
            let e = r.derive(1).gaussian(spec.dim, 0.3)?;
            let x: Vec<f64> = (0..spec.dim)
                .map(|j| (0..spec.factors).map(|f| loadings[j * spec.factors + f] * z[f]).sum::<f64>() * (spec.factors as f64).sqrt().recip() + e[j])
                .collect();
            let noise = r.derive(2).gaussian(1, spec.observation_noise)?[0];
            let y = function.eval(&x) + noise;
            Ok((x, y))
        })
        .collect::<Result<_>>()?;
    let n_train = spec.n * 3 / 5;
    let n_val = spec.n / 5;
    let split = |range: std::ops::Range<usize>| -> Result<Dataset> {
        let x: Vec<Vec<f64>> = rows[range.clone()].iter().map(|r| r.0.clone()).collect();
        let y: Vec<f64> = rows[range].iter().map(|r| r.1).collect();
        Dataset::new(Tensor::from_rows(&x)?, Some(Tensor::vector(y)?), Task::Regression)
    };
    Ok(TabularData {
        train: split(0..n_train)?,
        val: split(n_train..n_train + n_val)?,
        test: split(n_train + n_val..spec.n)?,
        function,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternShape {
    /// A ring on the square grid of side `sqrt(dim)`; needs a square dimension.
    Ring,
    /// A fixed seeded direction.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorSpec {
    pub shape: PatternShape,
    /// Euclidean norm of the added pattern.
    pub amplitude: f64,
    /// Fraction of eligible rows carrying the pattern.
    pub fraction: f64,
    /// Only rows of this class are eligible when set.
    pub class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobsSpec {
    pub n: usize,
    pub dim: usize,
    /// Distance between the two class means.
    pub separation: f64,
    /// Per-coordinate standard deviation around each mean.
    pub spread: f64,
    pub distractor: Option<DistractorSpec>,
    pub seed: u64,
}

impl Default for BlobsSpec {
    fn default() -> Self {
        Self {
            n: 400,
            dim: 16,
            separation: 3.0,
            spread: 1.0,
            distractor: None,
            seed: 0,
        }
    }
}

impl BlobsSpec {
    /// Accuracy of the optimal classifier on the clean generator, `Phi(separation / (2 spread))`.
    pub fn bayes_accuracy(&self) -> f64 {
        normal_cdf(self.separation / (2.0 * self.spread))
    }

    fn mean(&self, class: usize) -> Vec<f64> {
        let s = if class == 0 { -0.5 } else { 0.5 } * self.separation / (self.dim as f64).sqrt();
        vec![s; self.dim]
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobsData {
    pub dataset: Dataset,
    /// Inputs before the distractor was added.
    pub clean_inputs: Tensor,
    pub distracted: Vec<bool>,
    /// The added pattern (zero when there is no distractor).
    pub pattern: Vec<f64>,
}

/// The distractor pattern scaled to `amplitude`.
pub fn make_pattern(shape: PatternShape, dim: usize, amplitude: f64, rng: &RngStream) -> Result<Vec<f64>> {
    let raw: Vec<f64> = match shape {
        PatternShape::Ring => {
            let side = (dim as f64).sqrt().round() as usize;
            if side * side != dim {
                return Err(GttaError::Param(format!("ring pattern needs a square dimension, got {dim}")));
            }
            let c = (side as f64 - 1.0) / 2.0;
            let radius = side as f64 / 3.0;
            (0..dim)
                .map(|i| {
                    let (r, q) = ((i / side) as f64 - c, (i % side) as f64 - c);
                    if ((r * r + q * q).sqrt() - radius).abs() < 0.75 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        PatternShape::Random => rng.gaussian(dim, 1.0)?,
    };
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    Ok(raw.iter().map(|v| v * amplitude / norm).collect())
}

/// Two Gaussian classes (alternating labels) with an optional fixed additive pattern.
pub fn gen_blobs_with_distractor(spec: &BlobsSpec) -> Result<BlobsData> {
    if spec.n < 2 || spec.dim == 0 || !(spec.spread > 0.0) {
        return Err(GttaError::Param("blob spec needs n >= 2, dim >= 1 and positive spread".into()));
    }
    let root = RngStream::from_seed(spec.seed);
    let labels: Vec<usize> = (0..spec.n).map(|i| i % 2).collect();
    let clean: Vec<Vec<f64>> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let g = root.derive(i as u64).gaussian(spec.dim, spec.spread)?;
            Ok(spec.mean(labels[i]).iter().zip(g).map(|(m, e)| m + e).collect())
        })
        .collect::<Result<_>>()?;
    let mut distracted = vec![false; spec.n];
    let mut pattern = vec![0.0; spec.dim];
    if let Some(d) = &spec.distractor {
        if !(0.0..=1.0).contains(&d.fraction) {
            return Err(GttaError::Param("distractor fraction must be in [0, 1]".into()));
        }
        pattern = make_pattern(d.shape, spec.dim, d.amplitude, &root.derive_named("pattern"))?;
        let eligible: Vec<usize> = (0..spec.n).filter(|&i| d.class.is_none_or(|c| labels[i] == c)).collect();
        let take = (d.fraction * eligible.len() as f64).round() as usize;
        for &k in root.derive_named("inject").permutation(eligible.len()).iter().take(take) {
            distracted[eligible[k]] = true;
        }
    }
    let inputs: Vec<Vec<f64>> = clean
        .iter()
        .zip(&distracted)
        .map(|(x, &on)| if on { x.iter().zip(&pattern).map(|(a, b)| a + b).collect() } else { x.clone() })
        .collect();
    let targets = Tensor::vector(labels.iter().map(|&c| c as f64).collect())?;
    Ok(BlobsData {
        dataset: Dataset::new(Tensor::from_rows(&inputs)?, Some(targets), Task::Classification { num_classes: 2 })?,
        clean_inputs: Tensor::from_rows(&clean)?,
        distracted,
        pattern,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageSpec {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub min_blobs: usize,
    pub max_blobs: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Background pixels required between blobs; 0 lets blobs touch.
    pub min_gap: usize,
    /// Probability of flipping each pixel on an object boundary in the targets.
    pub boundary_noise: f64,
    /// Standard deviation of additive noise on the blurred inputs.
    pub input_noise: f64,
    pub seed: u64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            n: 100,
            height: 24,
            width: 24,
            min_blobs: 1,
            max_blobs: 4,
            min_radius: 3.0,
            max_radius: 4.5,
            min_gap: 2,
            boundary_noise: 0.0,
            input_noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobImages {
    /// Inputs `[n, H*W]`, targets `[n, H, W]` (with boundary noise applied).
    pub dataset: Dataset,
    /// Noise-free target masks.
    pub clean_targets: Tensor,
    pub instances: Vec<InstanceMap>,
    pub counts: Vec<usize>,
}

const MAX_PLACEMENT_TRIES: usize = 200;

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn contains(&self, r: usize, c: usize) -> bool {
        let (dy, dx) = (r as f64 - self.cy, c as f64 - self.cx);
        let (s, co) = self.theta.sin_cos();
        let u = (dx * co + dy * s) / self.a;
        let v = (-dx * s + dy * co) / self.b;
        u * u + v * v <= 1.0
    }
}

fn render_image(spec: &ImageSpec, rng: &RngStream) -> Result<(Vec<usize>, usize)> {
    let (h, w) = (spec.height, spec.width);
    let mut r = rng.derive(0).rng();
    let k = r.random_range(spec.min_blobs..=spec.max_blobs);
    let mut ids = vec![0usize; h * w];
    let mut placed = 0;
    for _ in 0..k {
        let mut ok = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let a = r.random_range(spec.min_radius..=spec.max_radius);
            let b = r.random_range(spec.min_radius..=spec.max_radius);
            let e = Ellipse {
                cy: r.random_range(a.max(b)..=(h as f64 - 1.0 - a.max(b)).max(a.max(b))),
                cx: r.random_range(a.max(b)..=(w as f64 - 1.0 - a.max(b)).max(a.max(b))),
                a,
                b,
                theta: r.random_range(0.0..std::f64::consts::PI),
            };
            let cells: Vec<usize> = (0..h * w).filter(|&i| e.contains(i / w, i % w)).collect();
            if cells.is_empty() {
                continue;
            }
            let g = spec.min_gap as isize;
            let clash = cells.iter().any(|&i| {
                let (y, x) = ((i / w) as isize, (i % w) as isize);
                (-g..=g).any(|dy| {
                    (-g..=g).any(|dx| {
                        let (yy, xx) = (y + dy, x + dx);
                        yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize && ids[yy as usize * w + xx as usize] != 0
                    })
                }) || ids[i] != 0
            });
            if clash {
                continue;
            }
            placed += 1;
            cells.iter().for_each(|&i| ids[i] = placed);
            ok = true;
            break;
        }
        if !ok {
            break;
        }
    }
    Ok((ids, placed))
}

fn box_blur(mask: &[f64], h: usize, w: usize) -> Vec<f64> {
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            let mut acc = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                        acc += mask[yy as usize * w + xx as usize];
                    }
                }
            }
            acc / 9.0
        })
        .collect()
}

/// Pixels whose 4-neighborhood contains both object and background.
pub fn boundary_pixels(mask: &[f64], h: usize, w: usize) -> Vec<bool> {
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let me = mask[i] > 0.5;
            let mut nb = Vec::with_capacity(4);
            if y > 0 {
                nb.push(mask[i - w]);
            }
            if y + 1 < h {
                nb.push(mask[i + w]);
            }
            if x > 0 {
                nb.push(mask[i - 1]);
            }
            if x + 1 < w {
                nb.push(mask[i + 1]);
            }
            nb.iter().any(|&v| (v > 0.5) != me)
        })
        .collect()
}

/// Elliptical blobs on a dark background; inputs are blurred noisy renderings.
pub fn gen_blob_images(spec: &ImageSpec) -> Result<BlobImages> {
    if spec.n == 0 || spec.height < 3 || spec.width < 3 {
        return Err(GttaError::Param("image spec needs n >= 1 and sides >= 3".into()));
    }
    if spec.min_blobs > spec.max_blobs || !(spec.min_radius > 0.0 && spec.min_radius <= spec.max_radius) {
        return Err(GttaError::Param("blob count and radius ranges must be ordered and positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.boundary_noise) || spec.input_noise < 0.0 {
        return Err(GttaError::Param("noise levels out of range".into()));
    }
    let (h, w) = (spec.height, spec.width);
    let root = RngStream::from_seed(spec.seed);
    type Sample = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<usize>, usize);
    let samples: Vec<Sample> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let r = root.derive(i as u64);
            let (ids, k) = render_image(spec, &r)?;
            let clean: Vec<f64> = ids.iter().map(|&v| if v > 0 { 1.0 } else { 0.0 }).collect();
            let noise = r.derive(1).gaussian(h * w, spec.input_noise)?;
            let input: Vec<f64> = box_blur(&clean, h, w).iter().zip(noise).map(|(a, e)| a + e).collect();
            let mut flip = r.derive(2).rng();
            let noisy: Vec<f64> = clean
                .iter()
                .zip(boundary_pixels(&clean, h, w))
                .map(|(&v, edge)| if edge && flip.random::<f64>() < spec.boundary_noise { 1.0 - v } else { v })
                .collect();
            Ok((input, noisy, clean, ids, k))
        })
        .collect::<Result<_>>()?;
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.0.clone()).collect();
    let targets = Tensor::new(vec![spec.n, h, w], samples.iter().flat_map(|s| s.1.clone()).collect())?;
    let clean_targets = Tensor::new(vec![spec.n, h, w], samples.iter().flat_map(|s| s.2.clone()).collect())?;
    let instances = samples
        .iter()
        .map(|s| InstanceMap::new(h, w, s.3.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlobImages {
        dataset: Dataset::new(Tensor::from_rows(&inputs)?, Some(targets), Task::Segmentation { height: h, width: w })?,
        clean_targets,
        instances,
        counts: samples.iter().map(|s| s.4).collect(),
    })
}

/// Two `side x side` squares joined by a one-pixel bridge, as a probability map.
pub fn bridge_pair(side: usize, bridge_len: usize, margin: usize) -> Result<Tensor> {
    if side < 3 || bridge_len == 0 {
        return Err(GttaError::Param("bridge fixture needs side >= 3 and a bridge".into()));
    }
    let h = side + 2 * margin;
    let w = 2 * side + bridge_len + 2 * margin;
    let mut data = vec![0.0; h * w];
    for r in margin..margin + side {
        for c in margin..margin + side {
            data[r * w + c] = 1.0;
            data[r * w + c + side + bridge_len] = 1.0;
        }
    }
    let mid = margin + side / 2;
    for c in margin + side..margin + side + bridge_len {
        data[mid * w + c] = 1.0;
    }
    Tensor::new(vec![h, w], data)
}
