//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any fail.
//!
//! `GTTA_ACCEPT=3,7` restricts the run to the listed criteria.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gtta_core::analysis::{
    bias_variance_sweep, covariance_spectrum_experiment, std_error_correlation, structured_noise_removal, JitterSpec,
    SpectrumBaseline, StructuredNoiseConfig,
};
use gtta_core::distill::{distill, generate_pseudolabels, score, DistillConfig};
use gtta_core::ensemble::run_gtta;
use gtta_core::perturb::{latent_candidates, latent_sample_covariance};
use gtta_core::predictor::{
    gradient_check, mlp_train, predict_one, weighted_cross_entropy, CountingPredictor, CrossEntropyKind, Mlp,
    OutputKind, Predictor, TrainConfig, WeightedBatch,
};
use gtta_core::segcount::{count, erode, label_components, Connectivity, CountConfig, Mask, StructuringElement};
use gtta_core::synthdata::{
    bridge_pair, gen_blob_images, gen_blobs_with_distractor, make_pattern, BlobImages, BlobsSpec, DistractorSpec,
    ImageSpec, PatternShape,
};
use gtta_core::{Dataset, NoiseSchedule, NoiseStrategy, Result as CoreResult, Retain, RngStream, Subspace, Tensor};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

type Outcome = (bool, String);
type Criterion = (usize, &'static str, fn() -> Outcome);

fn gaussian_rows(rng: &RngStream, n: usize, d: usize, scales: &[f64]) -> Tensor {
    let g = rng.gaussian(n * d, 1.0).unwrap();
    let data = g.iter().enumerate().map(|(k, v)| v * scales[k % d]).collect();
    Tensor::new(vec![n, d], data).unwrap()
}

fn column_scales(rng: &RngStream, d: usize) -> Vec<f64> {
    let mut r = rng.rng();
    (0..d).map(|_| r.random_range(0.5..3.0)).collect()
}

// Criterion 1: PCA against a dense symmetric eigensolver on the sample covariance.
fn pca_correctness() -> Outcome {
    let root = RngStream::from_seed(101);
    let (mut worst_eig, mut worst_vec, mut worst_rt) = (0.0f64, 0.0f64, 0.0f64);
    let mut count_ok = true;
    for t in 0..50u64 {
        let r = root.derive(t);
        let mut g = r.derive(0).rng();
        let n = g.random_range(2..=32usize);
        let d = g.random_range(1..=32usize);
        let x = gaussian_rows(&r.derive(1), n, d, &column_scales(&r.derive(2), d));
        let s = Subspace::fit(&x, Retain::All, None).unwrap();

        let m = DMatrix::from_row_slice(n, d, x.data());
        let mean = m.row_mean();
        let mut c = m.clone();
        for mut row in c.row_iter_mut() {
            row -= &mean;
        }
        let cov = c.transpose() * &c / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let k = (n - 1).min(d);
        count_ok &= s.n_components() == k;
        let ours = s.eigenvalues();
        let scale = eig.eigenvalues[order[0]].max(1.0);
        for i in 0..k.min(s.n_components()) {
            let want = eig.eigenvalues[order[i]];
            worst_eig = worst_eig.max((ours[i] - want).abs() / scale);
            let v = eig.eigenvectors.column(order[i]);
            let u = &s.components()[i];
            let sign = if u.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            let gap = u.iter().zip(v.iter()).map(|(a, b)| (a - sign * b).abs()).fold(0.0, f64::max);
            worst_vec = worst_vec.max(gap);
        }
        if s.n_components() == d {
            for row in x.rows() {
                let back = s.reconstruct(&s.project(row).unwrap()).unwrap();
                let e = back.iter().zip(row).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst_rt = worst_rt.max(e);
            }
        }
    }
    let ok = count_ok && worst_eig <= 1e-8 && worst_vec <= 1e-8 && worst_rt <= 1e-8;
    (
        ok,
        format!("eigenvalue err {worst_eig:.2e}, component err {worst_vec:.2e}, round-trip err {worst_rt:.2e}, counts ok {count_ok}"),
    )
}

// Criterion 2: latent noise is uncorrelated with the scheduled per-component variances.
fn decorrelation() -> Outcome {
    const N: usize = 10_000;
    let root = RngStream::from_seed(202);
    let (mut worst_off, mut worst_diag) = (0.0f64, 0.0f64);
    let mut entries = 0;
    for t in 0..10u64 {
        let r = root.derive(t);
        let d = r.derive(0).rng().random_range(2..=6usize);
        let x = gaussian_rows(&r.derive(1), d + 20, d, &column_scales(&r.derive(2), d));
        let s = Subspace::fit(&x, Retain::All, None).unwrap();
        let sched = NoiseSchedule::constant(0.1, N);
        let sig = sched.per_component_sigma(&s, 1).unwrap();
        let lat = latent_candidates(&sched, &s, x.row(0), &r.derive(3)).unwrap();
        let cov = latent_sample_covariance(&lat.candidates).unwrap();
        for i in 0..s.n_components() {
            worst_diag = worst_diag.max((cov.get(i, i) / (sig[i] * sig[i]) - 1.0).abs());
            for j in 0..i {
                let se = sig[i] * sig[j] / (N as f64).sqrt();
                worst_off = worst_off.max(cov.get(i, j).abs() / se);
                entries += 1;
            }
        }
    }
    (
        worst_off <= 3.0 && worst_diag <= 0.05,
        format!("{entries} off-diagonal entries, worst {worst_off:.2} SE; worst diagonal rel err {:.2}%", 100.0 * worst_diag),
    )
}

/// Smooth scalar model used for the variance-scaling check.
struct Smooth {
    w: Vec<f64>,
}

impl Predictor for Smooth {
    fn output_kind(&self) -> OutputKind {
        OutputKind::RealValues { dims: 1 }
    }
    fn predict(&self, batch: &Tensor) -> CoreResult<Tensor> {
        let out = batch
            .rows()
            .map(|x| {
                let z: f64 = x.iter().zip(&self.w).map(|(a, b)| a * b).sum();
                z.tanh() + 0.1 * z * z
            })
            .collect();
        Tensor::new(vec![batch.nrows(), 1], out)
    }
}

fn ensemble_mean_variance(model: &Smooth, s: &Subspace, sched: &NoiseSchedule, x: &[f64], rng: &RngStream, m: usize) -> f64 {
    let means: Vec<f64> = (0..m)
        .map(|k| run_gtta(model, s, sched, x, &rng.derive(k as u64)).unwrap().mean_prediction.data()[0])
        .collect();
    let mu = means.iter().sum::<f64>() / m as f64;
    means.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m as f64 - 1.0)
}

// Criterion 3: variance of the ensemble mean falls as 1/N.
fn variance_scaling() -> Outcome {
    const M: usize = 200;
    let root = RngStream::from_seed(303);
    let d = 6;
    let x = gaussian_rows(&root.derive(0), 40, d, &[1.0; 6]);
    let s = Subspace::fit(&x, Retain::All, None).unwrap();
    let model = Smooth {
        w: root.derive(1).gaussian(d, 0.5).unwrap(),
    };
    let input = x.row(0);
    let sigma = 0.02;
    let ns: Vec<usize> = (1..=64).collect();
    let constant: Vec<f64> = ns
        .iter()
        .map(|&n| ensemble_mean_variance(&model, &s, &NoiseSchedule::constant(sigma, n), input, &root.derive(2 + n as u64), M))
        .collect();
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = constant.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / lx.len() as f64, ly.iter().sum::<f64>() / ly.len() as f64);
    let slope = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / lx.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>();
    let c = constant[0];
    let mut worst_ratio = 0.0f64;
    for &n in &ns {
        let v = ensemble_mean_variance(&model, &s, &NoiseSchedule::incremental(sigma, n), input, &root.derive(1000 + n as u64), M);
        worst_ratio = worst_ratio.max(v * n as f64 / c);
    }
    (
        (slope + 1.0).abs() <= 0.1 && worst_ratio <= 1.0,
        format!("constant slope {slope:.3}, single-candidate var {c:.3e}, incremental max N*Var/c {worst_ratio:.3}"),
    )
}

fn random_probs(rng: &RngStream, n: usize, k: usize) -> Vec<f64> {
    let g = rng.gaussian(n * k, 1.0).unwrap();
    g.chunks(k)
        .flat_map(|row| {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            row.iter().map(move |v| v.exp() / z).collect::<Vec<_>>()
        })
        .collect()
}

// Criterion 4: weighted loss identities and analytic gradients.
fn loss_checks() -> Outcome {
    let root = RngStream::from_seed(404);
    let (n, k) = (20, 4);
    let p = random_probs(&root.derive(0), n, k);
    let mut y = vec![0.0; n * k];
    for i in 0..n {
        y[i * k + i % k] = 1.0;
    }
    let plain_cat = -(0..n * k).filter(|&e| y[e] == 1.0).map(|e| p[e].ln()).sum::<f64>() / n as f64;
    let cat_gap = [1.0, 0.3]
        .iter()
        .map(|&w| {
            let l = weighted_cross_entropy(&p, &y, &vec![w; n], CrossEntropyKind::Categorical { num_classes: k }).unwrap();
            (l - plain_cat).abs()
        })
        .fold(0.0, f64::max);
    let pb: Vec<f64> = p.iter().map(|v| v.clamp(0.05, 0.95)).collect();
    let plain_bin = -(0..n * k).map(|e| y[e] * pb[e].ln() + (1.0 - y[e]) * (1.0 - pb[e]).ln()).sum::<f64>() / (n * k) as f64;
    let bin_gap = (weighted_cross_entropy(&pb, &y, &vec![1.0; n * k], CrossEntropyKind::Binary).unwrap() - plain_bin).abs();
    let ln2_gap = (weighted_cross_entropy(&[0.5], &[1.0], &[1.0], CrossEntropyKind::Binary).unwrap() - 2f64.ln()).abs();

    // Zero-weight elements: changing their targets leaves the gradient bit-identical.
    let (h, w) = (4, 4);
    let model = Mlp::new(h * w, &[8], OutputKind::PixelProbabilities { height: h, width: w }, &root.derive(1)).unwrap();
    let xs = Tensor::new(vec![6, h * w], root.derive(2).gaussian(6 * h * w, 1.0).unwrap()).unwrap();
    let targets: Vec<f64> = root.derive(3).gaussian(6 * h * w, 1.0).unwrap().iter().map(|v| (*v > 0.0) as u8 as f64).collect();
    let weights: Vec<f64> = (0..targets.len()).map(|e| if e % 3 == 0 { 0.0 } else { 0.7 }).collect();
    let flipped: Vec<f64> = targets.iter().enumerate().map(|(e, &t)| if e % 3 == 0 { 1.0 - t } else { t }).collect();
    let grad = |t: &[f64]| {
        let b = WeightedBatch::new(
            xs.clone(),
            Tensor::new(vec![6, h * w], t.to_vec()).unwrap(),
            Tensor::new(vec![6, h * w], weights.clone()).unwrap(),
        )
        .unwrap();
        model.loss_and_gradient(&b).unwrap().unwrap().1.flat()
    };
    let a = grad(&targets);
    let b = grad(&flipped);
    let zero_ok = a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits());

    let mut worst_fd = 0.0f64;
    for (t, kind) in [
        OutputKind::Probabilities { num_classes: 3 },
        OutputKind::RealValues { dims: 2 },
        OutputKind::PixelProbabilities { height: 3, width: 3 },
    ]
    .into_iter()
    .enumerate()
    {
        let r = root.derive(10 + t as u64);
        let m = Mlp::new(5, &[7, 6], kind, &r.derive(0)).unwrap();
        let rows = 8;
        let xs = Tensor::new(vec![rows, 5], r.derive(1).gaussian(rows * 5, 1.0).unwrap()).unwrap();
        let out = kind.len();
        let tg: Vec<f64> = match kind {
            OutputKind::Probabilities { num_classes } => (0..rows * num_classes).map(|e| ((e % num_classes) == (e / num_classes) % num_classes) as u8 as f64).collect(),
            OutputKind::RealValues { .. } => r.derive(2).gaussian(rows * out, 1.0).unwrap(),
            OutputKind::PixelProbabilities { .. } => (0..rows * out).map(|e| (e % 2) as f64).collect(),
        };
        let wts = match kind {
            OutputKind::PixelProbabilities { .. } => Tensor::new(vec![rows, out], (0..rows * out).map(|e| 0.25 + 0.5 * ((e % 4) as f64 / 3.0)).collect()).unwrap(),
            _ => Tensor::vector((0..rows).map(|e| 0.2 + 0.1 * e as f64).collect()).unwrap(),
        };
        let batch = WeightedBatch::new(xs, Tensor::new(vec![rows, out], tg).unwrap(), wts).unwrap();
        worst_fd = worst_fd.max(gradient_check(&m, &batch, &r.derive(3), 200).unwrap());
    }
    let ok = cat_gap <= 1e-12 && bin_gap <= 1e-12 && ln2_gap <= 1e-12 && zero_ok && worst_fd <= 1e-4;
    (
        ok,
        format!(
            "uniform-weight gaps {cat_gap:.1e}/{bin_gap:.1e}, ln2 gap {ln2_gap:.1e}, zero-weight gradient unchanged {zero_ok}, finite-difference rel err {worst_fd:.2e}"
        ),
    )
}

// Criterion 5: zero noise over a full-rank basis reproduces the base model exactly.
fn degenerate_exactness() -> Outcome {
    let root = RngStream::from_seed(505);
    let mut details = Vec::new();
    let mut ok = true;
    for (t, kind) in [
        OutputKind::Probabilities { num_classes: 3 },
        OutputKind::RealValues { dims: 1 },
        OutputKind::PixelProbabilities { height: 2, width: 3 },
    ]
    .into_iter()
    .enumerate()
    {
        let r = root.derive(t as u64);
        let d = 5;
        let x = gaussian_rows(&r.derive(0), 30, d, &column_scales(&r.derive(1), d));
        let s = Subspace::fit(&x, Retain::All, None).unwrap();
        let model = Mlp::new(d, &[8], kind, &r.derive(2)).unwrap();
        let mut exact = s.n_components() == d;
        for strategy in [NoiseStrategy::Constant, NoiseStrategy::Incremental] {
            let sched = NoiseSchedule::new(strategy, 0.0, 5);
            for (i, row) in x.rows().enumerate() {
                let e = run_gtta(&model, &s, &sched, row, &r.derive(100 + i as u64)).unwrap();
                let base = predict_one(&model, row).unwrap();
                exact &= e.mean_prediction.data().iter().zip(base.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                exact &= e.std_map.data().iter().all(|&v| v == 0.0);
            }
        }
        ok &= exact;
        details.push(format!("{kind:?}: {}", if exact { "bit-exact" } else { "differs" }));
    }
    (ok, details.join("; "))
}

// Criterion 6: equal-sigma latent spectrum is flat; jitter concentrates in two directions.
fn spectrum_shape() -> Outcome {
    let imgs = gen_blob_images(&ImageSpec {
        n: 230,
        height: 16,
        width: 16,
        seed: 606,
        ..ImageSpec::default()
    })
    .unwrap();
    let fit_rows: Vec<usize> = (0..200).collect();
    let test_rows: Vec<usize> = (200..230).collect();
    let fit = imgs.dataset.inputs.select_rows(&fit_rows).unwrap();
    let test = imgs.dataset.inputs.select_rows(&test_rows).unwrap();
    let fitted = Subspace::fit(&fit, Retain::Count(30), None).unwrap();
    // Ranges proportional to the variance ratios make every sigma_i identical.
    let ratios = fitted.explained_variance_ratio().to_vec();
    let ranges = ratios.iter().map(|r| r * 10.0).collect();
    let s = Subspace::from_parts(fitted.mean().to_vec(), fitted.components().to_vec(), ratios, ranges).unwrap();
    let sched = NoiseSchedule::constant(0.1, 100);
    let report = covariance_spectrum_experiment(
        &s,
        &sched,
        &test,
        100,
        &RngStream::from_seed(607),
        SpectrumBaseline::GlobalJitter(JitterSpec::default()),
    )
    .unwrap();
    let spread = report.gtta[0] / report.gtta[report.gtta.len() - 1];
    let base = report.baseline.as_ref().unwrap();
    let jitter_ratio = base[2] / base[0];
    let flat = spread <= 1.05;
    (
        flat && jitter_ratio < 0.05,
        format!(
            "GTTA top-{} eigenvalue max/min {spread:.3} (need <= 1.05: {}); jitter lambda3/lambda1 {jitter_ratio:.2e} (need < 0.05: {})",
            report.gtta.len(),
            if flat { "ok" } else { "fails" },
            if jitter_ratio < 0.05 { "ok" } else { "fails" }
        ),
    )
}

fn image_spec(n: usize, seed: u64, boundary_noise: f64) -> ImageSpec {
    ImageSpec {
        n,
        height: 16,
        width: 16,
        min_blobs: 1,
        max_blobs: 3,
        min_radius: 3.0,
        max_radius: 4.5,
        min_gap: 2,
        boundary_noise,
        input_noise: 0.1,
        seed,
    }
}

fn seg_model(train: &Dataset, epochs: usize, rng: &RngStream) -> Mlp {
    let kind = OutputKind::for_task(train.task);
    let mut m = Mlp::new(train.input_dim(), &[64], kind, &rng.derive(0)).unwrap();
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    mlp_train(&mut m, &WeightedBatch::from_dataset(train).unwrap(), &cfg, &rng.derive(1)).unwrap();
    m
}

// Criterion 7: ensemble std tracks absolute error on noisy-boundary segmentation.
fn std_error() -> Outcome {
    let train = gen_blob_images(&image_spec(300, 700, 0.3)).unwrap();
    let eval = gen_blob_images(&image_spec(40, 701, 0.3)).unwrap();
    let model = seg_model(&train.dataset, 30, &RngStream::from_seed(702));
    let s = Subspace::fit(&train.dataset.inputs, Retain::Fraction(0.99), None).unwrap();
    let sched = NoiseSchedule::constant(SEG_SIGMA, 15);
    let rep = std_error_correlation(&model, &s, &sched, &eval.dataset, 10, &RngStream::from_seed(703)).unwrap();
    let r = rep.pearson.unwrap_or(f64::NAN);
    let mono = rep.monotone_fraction();
    (r > 0.3 && mono >= 0.8, format!("pearson r {r:.3}, monotone bin fraction {mono:.2} over {} pixels", rep.total))
}

const SEG_SIGMA: f64 = 0.002;

// Criterion 8: GTTA reconstructions carry less of an injected pattern than jitter.
fn structured_noise() -> Outcome {
    let mut wins = 0;
    let mut margins = Vec::new();
    for seed in 0..20u64 {
        let data = gen_blobs_with_distractor(&BlobsSpec {
            n: 230,
            dim: 64,
            distractor: None,
            seed: 800 + seed,
            ..BlobsSpec::default()
        })
        .unwrap();
        let fit = data.clean_inputs.select_rows(&(0..200).collect::<Vec<_>>()).unwrap();
        let test = data.clean_inputs.select_rows(&(200..230).collect::<Vec<_>>()).unwrap();
        let pattern = make_pattern(PatternShape::Ring, 64, 3.0, &RngStream::from_seed(850 + seed)).unwrap();
        let cfg = StructuredNoiseConfig {
            fraction: 0.5,
            retain: Retain::Fraction(0.95),
            schedule: NoiseSchedule::constant(STRUCT_SIGMA, 15),
            jitter: JitterSpec::default(),
        };
        let rep = structured_noise_removal(&fit, &test, &pattern, &cfg, &RngStream::from_seed(870 + seed)).unwrap();
        if rep.gtta < rep.baseline {
            wins += 1;
        }
        margins.push(rep.baseline - rep.gtta);
    }
    let min = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    (wins >= 18, format!("GTTA below jitter in {wins}/20 seeds (smallest margin {min:.3})"))
}

const STRUCT_SIGMA: f64 = 0.1;

// Criterion 9: some positive sigma lowers the bias term on the distractor classification task.
fn bias_reduction() -> Outcome {
    let mut wins = 0;
    let mut worst_gap = 0.0f64;
    let grid = BIAS_GRID;
    for seed in 0..20u64 {
        let spec = |n, seed, class| BlobsSpec {
            n,
            dim: 64,
            separation: 3.0,
            spread: 1.0,
            distractor: Some(DistractorSpec {
                shape: PatternShape::Ring,
                amplitude: 3.0,
                fraction: 0.5,
                class,
            }),
            seed,
        };
        let train = gen_blobs_with_distractor(&spec(300, 900 + seed, Some(1))).unwrap();
        let eval = gen_blobs_with_distractor(&spec(60, 900 + seed, None)).unwrap();
        // Same seed, so the evaluation pattern matches the training pattern.
        let eval_ds = eval.dataset.subset(&(0..60).collect::<Vec<_>>()).unwrap();
        let rng = RngStream::from_seed(950 + seed);
        let mut m = Mlp::new(64, &[32], OutputKind::Probabilities { num_classes: 2 }, &rng.derive(0)).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        mlp_train(&mut m, &WeightedBatch::from_dataset(&train.dataset).unwrap(), &cfg, &rng.derive(1)).unwrap();
        let s = Subspace::fit(&train.dataset.inputs, Retain::Fraction(0.99), None).unwrap();
        let rep = bias_variance_sweep(&m, &s, &[NoiseStrategy::Constant], grid, 15, &eval_ds, 20, &rng.derive(2)).unwrap();
        for row in &rep.rows {
            worst_gap = worst_gap.max(row.identity_gap());
        }
        let b0 = rep.rows[0].bias2;
        if rep.rows[1..].iter().any(|r| r.bias2 < b0) {
            wins += 1;
        }
    }
    (
        wins >= 16 && worst_gap <= 1e-9,
        format!("bias reduced in {wins}/20 seeds; worst identity gap {worst_gap:.1e}"),
    )
}

const BIAS_GRID: &[f64] = &[0.0, 0.0005, 0.001, 0.002, 0.005, 0.01, 0.02];

fn clean_dataset(imgs: &BlobImages) -> Dataset {
    Dataset::new(imgs.dataset.inputs.clone(), Some(imgs.clean_targets.clone()), imgs.dataset.task).unwrap()
}

// Criterion 10: uncertainty-weighted distillation is at least as good as unweighted.
fn distillation() -> Outcome {
    let (mut sum_w, mut sum_u) = (0.0, 0.0);
    let mut calls_ok = true;
    for seed in 0..20u64 {
        let labeled = gen_blob_images(&image_spec(40, 1000 + 3 * seed, 0.2)).unwrap();
        let unlabeled = gen_blob_images(&image_spec(150, 1001 + 3 * seed, 0.2)).unwrap();
        let heldout = clean_dataset(&gen_blob_images(&image_spec(60, 1002 + 3 * seed, 0.0)).unwrap());
        let rng = RngStream::from_seed(1100 + seed);
        let base = seg_model(&labeled.dataset, 200, &rng.derive(0));
        let rows: Vec<Vec<f64>> = labeled.dataset.inputs.rows().chain(unlabeled.dataset.inputs.rows()).map(<[f64]>::to_vec).collect();
        let both = Tensor::from_rows(&rows).unwrap();
        let s = Subspace::fit(&both, Retain::Fraction(0.99), None).unwrap();
        let sched = NoiseSchedule::constant(SEG_SIGMA, 15);
        let pseudo = generate_pseudolabels(&base, &s, &sched, &unlabeled.dataset.without_targets(), &rng.derive(1)).unwrap();
        let run = |weighted: bool| {
            let mut student = base.clone();
            let cfg = DistillConfig {
                lambda: 0.5,
                train: TrainConfig {
                    epochs: 20,
                    ..TrainConfig::default()
                },
                hard_labels: false,
                weighted,
            };
            distill(&mut student, &labeled.dataset, &pseudo, &cfg, None, &rng.derive(2)).unwrap();
            student
        };
        let weighted = run(true);
        let unweighted = run(false);
        let (fw, fu) = (score(&weighted, &heldout).unwrap(), score(&unweighted, &heldout).unwrap());
        sum_w += fw;
        sum_u += fu;

        let counted = CountingPredictor::new(weighted);
        for x in heldout.inputs.rows() {
            predict_one(&counted, x).unwrap();
        }
        calls_ok &= counted.calls() == heldout.len() && counted.rows() == heldout.len();
    }
    let (mw, mu) = (sum_w / 20.0, sum_u / 20.0);
    (mw >= mu && calls_ok, format!("mean F weighted {mw:.4} vs unweighted {mu:.4}; one call per input {calls_ok}"))
}

fn brute_erode(m: &Mask, e: &StructuringElement, cells: &[(isize, isize)]) -> Mask {
    let (h, w) = (m.height() as isize, m.width() as isize);
    let mut cur = m.clone();
    for _ in 0..e.iterations() {
        let mut next = Mask::empty(m.height(), m.width());
        for r in 0..h {
            for c in 0..w {
                let keep = cells.iter().all(|&(dr, dc)| {
                    let (rr, cc) = (r + dr, c + dc);
                    rr >= 0 && cc >= 0 && rr < h && cc < w && cur.get(rr as usize, cc as usize)
                });
                next.set(r as usize, c as usize, keep);
            }
        }
        cur = next;
    }
    cur
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Union-find labeling, renumbered by first appearance in raster order.
fn brute_labels(m: &Mask, eight: bool) -> Vec<usize> {
    let (h, w) = (m.height(), m.width());
    let mut parent: Vec<usize> = (0..h * w).collect();
    for r in 0..h {
        for c in 0..w {
            if !m.get(r, c) {
                continue;
            }
            for (dr, dc) in [(-1isize, -1isize), (-1, 0), (-1, 1), (0, -1)] {
                if !eight && dr != 0 && dc != 0 {
                    continue;
                }
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && cc >= 0 && (cc as usize) < w && m.get(rr as usize, cc as usize) {
                    let (a, b) = (find(&mut parent, r * w + c), find(&mut parent, rr as usize * w + cc as usize));
                    parent[a] = b;
                }
            }
        }
    }
    let mut ids = std::collections::HashMap::new();
    (0..h * w)
        .map(|k| {
            if !m.cells()[k] {
                return 0;
            }
            let root = find(&mut parent, k);
            let next = ids.len() + 1;
            *ids.entry(root).or_insert(next)
        })
        .collect()
}

// Criterion 11: erosion-based counting.
fn segcount_checks() -> Outcome {
    let imgs = gen_blob_images(&ImageSpec {
        n: 100,
        seed: 1111,
        ..ImageSpec::default()
    })
    .unwrap();
    let cfg = CountConfig::default();
    let (h, w) = (24, 24);
    let mut misses = 0;
    for i in 0..100 {
        let map = Tensor::new(vec![h, w], imgs.clean_targets.row(i).to_vec()).unwrap();
        if count(&map, &cfg).unwrap().count != imgs.counts[i] {
            misses += 1;
        }
    }
    let mut bridges = 0;
    let mut bridge_ok = 0;
    for side in [5, 7, 9, 11] {
        for len in [1, 2, 3, 5] {
            let map = bridge_pair(side, len, 2).unwrap();
            let mask = Mask::from_tensor(&map).unwrap();
            let joined = label_components(&mask, Connectivity::Eight).1.len() == 1;
            bridges += 1;
            if joined && count(&map, &cfg).unwrap().count == 2 {
                bridge_ok += 1;
            }
        }
    }
    let root = RngStream::from_seed(1112);
    let mut oracle_mismatch = 0;
    for t in 0..200u64 {
        let mut g = root.derive(t).rng();
        let (mh, mw) = (g.random_range(1..=64usize), g.random_range(1..=64usize));
        let density = g.random_range(0.2..0.9);
        let cells: Vec<bool> = (0..mh * mw).map(|_| g.random::<f64>() < density).collect();
        let mask = Mask::new(mh, mw, cells).unwrap();
        let side = [1, 3, 5][g.random_range(0..3usize)];
        let iters = g.random_range(1..=2usize);
        let cross = g.random::<bool>();
        let e = if cross { StructuringElement::cross(side, iters) } else { StructuringElement::square(side, iters) }.unwrap();
        let half = side as isize / 2;
        let offsets: Vec<(isize, isize)> = (-half..=half)
            .flat_map(|dr| (-half..=half).map(move |dc| (dr, dc)))
            .filter(|&(dr, dc)| !cross || dr == 0 || dc == 0)
            .collect();
        if erode(&mask, &e) != brute_erode(&mask, &e, &offsets) {
            oracle_mismatch += 1;
        }
        for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
            let (labels, areas) = label_components(&mask, conn);
            let want = brute_labels(&mask, eight);
            let n = want.iter().max().copied().unwrap_or(0);
            let mut want_areas = vec![0; n];
            want.iter().filter(|&&l| l > 0).for_each(|&l| want_areas[l - 1] += 1);
            if labels != want || areas != want_areas {
                oracle_mismatch += 1;
            }
        }
    }
    (
        misses == 0 && bridge_ok == bridges && oracle_mismatch == 0,
        format!("{misses}/100 blob images miscounted; {bridge_ok}/{bridges} bridge pairs split; {oracle_mismatch} oracle mismatches on 200 masks"),
    )
}

fn gtta(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gtta")).args(args).output().expect("run gtta")
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "provenance.json")
        .collect();
    v.sort();
    v
}

// Criterion 12: every recorded command replays byte-identically under other thread counts.
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name).display().to_string();
    let spec = tmp.path().join("spec.json");
    std::fs::write(&spec, r#"{"n": 40, "height": 12, "width": 12, "boundary_noise": 0.2}"#).unwrap();
    let steps: Vec<(String, Vec<String>)> = vec![
        ("data", vec!["synth", "images", "--spec", &spec.display().to_string(), "--seed", "3", "--out", &p("data")]),
        ("model", vec!["train", "--data", &p("data/data.gttc"), "--hidden", "16", "--epochs", "5", "--out", &p("model")]),
        ("sub", vec!["fit", "--data", &p("data/data.gttc"), "--out", &p("sub")]),
        ("pred", vec!["predict", "--model", &p("model/model.gttc"), "--subspace", &p("sub/subspace.gttc"), "--data", &p("data/data.gttc"), "--sigma", "0.002", "--n", "5", "--out", &p("pred")]),
        ("auto", vec!["auto-sigma", "--model", &p("model/model.gttc"), "--subspace", &p("sub/subspace.gttc"), "--data", &p("data/data.gttc"), "--grid", "0,0.001,0.002", "--n", "4", "--out", &p("auto")]),
        ("dist", vec!["distill", "--model", &p("model/model.gttc"), "--subspace", &p("sub/subspace.gttc"), "--labeled", &p("data/data.gttc"), "--unlabeled", &p("data/data.gttc"), "--sigma", "0.002", "--n", "4", "--epochs", "2", "--out", &p("dist")]),
        ("count", vec!["count", "--maps", &p("pred/mean.gtt"), "--truth", &p("data/counts.gtt"), "--out", &p("count")]),
        ("targets", vec!["targets", "--instances", &p("data/instances.gtt"), "--out", &p("targets")]),
        ("bv", vec!["analyze", "bias-variance", "--model", &p("model/model.gttc"), "--subspace", &p("sub/subspace.gttc"), "--data", &p("data/data.gttc"), "--grid", "0,0.002", "--n", "3", "--repeats", "2", "--out", &p("bv")]),
        ("spec", vec!["analyze", "spectrum", "--subspace", &p("sub/subspace.gttc"), "--data", &p("data/data.gttc"), "--n", "10", "--out", &p("spec")]),
        ("stderr", vec!["analyze", "std-error", "--model", &p("model/model.gttc"), "--subspace", &p("sub/subspace.gttc"), "--data", &p("data/data.gttc"), "--sigma", "0.002", "--n", "4", "--out", &p("stderr")]),
    ]
    .into_iter()
    .map(|(n, a)| (n.to_string(), a.into_iter().map(String::from).collect()))
    .collect();

    let mut failures = Vec::new();
    for (name, args) in &steps {
        let mut argv = vec!["--threads".to_string(), "1".to_string()];
        argv.extend(args.iter().cloned());
        let out = gtta(&argv.iter().map(String::as_str).collect::<Vec<_>>());
        if !out.status.success() {
            failures.push(format!("{name}: {}", String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    let mut artifacts = 0;
    for (name, _) in &steps {
        if failures.iter().any(|f| f.starts_with(&format!("{name}:"))) {
            continue;
        }
        let prov = tmp.path().join(name).join("provenance.json");
        let rerun = tmp.path().join(format!("{name}-replay"));
        let out = gtta(&["--threads", "4", "replay", &prov.display().to_string(), "--out", &rerun.display().to_string()]);
        if !out.status.success() {
            failures.push(format!("{name} replay: {}", String::from_utf8_lossy(&out.stderr).trim()));
            continue;
        }
        let a = files(&tmp.path().join(name));
        let b = files(&rerun);
        let same = a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.file_name() == y.file_name() && std::fs::read(x).unwrap() == std::fs::read(y).unwrap());
        if !same {
            failures.push(format!("{name}: replayed bytes differ"));
        }
        artifacts += a.len();
    }
    (
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} commands, {artifacts} artifacts byte-identical between --threads 1 and replay under --threads 4", steps.len())
        } else {
            failures.join(" | ")
        },
    )
}

fn main() {
    let only: Option<HashSet<usize>> = std::env::var("GTTA_ACCEPT")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [Criterion; 12] = [
        (1, "PCA matches eigendecomposition oracle", pca_correctness),
        (2, "latent perturbations decorrelated", decorrelation),
        (3, "ensemble-mean variance scales as 1/N", variance_scaling),
        (4, "weighted loss and gradients", loss_checks),
        (5, "zero noise reproduces the base model", degenerate_exactness),
        (6, "equal-sigma spectrum flat, jitter rank 2", spectrum_shape),
        (7, "ensemble std correlates with error", std_error),
        (8, "structured pattern washed out", structured_noise),
        (9, "bias reduced by positive sigma", bias_reduction),
        (10, "weighted distillation not worse", distillation),
        (11, "erosion counting and oracles", segcount_checks),
        (12, "replay is byte-identical", determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let took: Duration = start.elapsed();
        let (ok, detail) = result.unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("criterion {id:>2} {}: {name} ({:.1}s) {detail}", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
        if !ok {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
