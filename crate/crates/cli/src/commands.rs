use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gtta_core::analysis::{
    bias_variance_sweep, covariance_spectrum_experiment, std_error_correlation, structured_noise_removal, JitterSpec,
    SpectrumBaseline, StructuredNoiseConfig,
};
use gtta_core::distill::{distill, generate_pseudolabels, DistillConfig};
use gtta_core::ensemble::{run_gtta_rows, select_sigma, EnsembleResult, SigmaSearchConfig};
use gtta_core::io::{load_tensor, save_tensor};
use gtta_core::predictor::{mlp_train, Mlp, OutputKind, Predictor, SubprocessPredictor, TrainConfig, WeightedBatch};
use gtta_core::segcount::{count, make_training_targets, CountConfig, Connectivity, InstanceMap, StructuringElement};
use gtta_core::synthdata::{gen_blob_images, gen_blobs_with_distractor, gen_tabular, BlobsSpec, ImageSpec, TabularSpec};
use gtta_core::{Dataset, NoiseSchedule, NoiseStrategy, Retain, RngStream, Subspace, Task, Tensor};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::*;
use crate::provenance::Outcome;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_dataset(path: &Path, o: &mut Outcome) -> Result<Dataset> {
    o.input(path);
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_subspace(path: &Path, o: &mut Outcome) -> Result<Subspace> {
    o.input(path);
    Subspace::load(path).with_context(|| format!("loading subspace {}", path.display()))
}

fn load_model(spec: &str, task: Task, o: &mut Outcome) -> Result<Box<dyn Predictor>> {
    let kind = OutputKind::for_task(task);
    if let Some(cmd) = spec.strip_prefix("exec:") {
        return Ok(Box::new(SubprocessPredictor::from_command_line(cmd, kind)?));
    }
    let path = Path::new(spec);
    o.input(path);
    let m = Mlp::load(path).with_context(|| format!("loading model {spec}"))?;
    if m.output_kind() != kind {
        bail!("model outputs {:?} but the data task is {task}", m.output_kind());
    }
    Ok(Box::new(m))
}

fn strategy(s: StrategyArg) -> NoiseStrategy {
    match s {
        StrategyArg::Constant => NoiseStrategy::Constant,
        StrategyArg::Incremental => NoiseStrategy::Incremental,
    }
}

fn schedule(a: &NoiseArgs, task: Task, default_n: Option<usize>) -> Result<NoiseSchedule> {
    let n = a.n.or(default_n).unwrap_or(if task == Task::Regression { 100 } else { 15 });
    let mut s = NoiseSchedule::new(strategy(a.strategy), a.sigma, n);
    s.var_floor = a.var_floor;
    if let Some(c) = a.sigma_cap {
        s = s.with_cap(c);
    }
    if let Some(c) = &a.clamp {
        s = s.with_clamp(c[0], c[1]);
    }
    s.validate()?;
    Ok(s)
}

#[derive(Serialize)]
struct StdSummary {
    min: f64,
    mean: f64,
    max: f64,
}

#[derive(Serialize)]
struct PredictionRecord {
    index: usize,
    mean_prediction: String,
    std: StdSummary,
    chosen_sigma: f64,
    n: usize,
    strategy: NoiseStrategy,
}

fn write_ensemble(results: &[EnsembleResult], o: &mut Outcome) -> Result<()> {
    let means: Vec<Tensor> = results.iter().map(|r| r.mean_prediction.clone()).collect();
    let stds: Vec<Tensor> = results.iter().map(|r| r.std_map.clone()).collect();
    save_tensor(&Tensor::stack(&means)?, &o.output("mean.gtt"))?;
    save_tensor(&Tensor::stack(&stds)?, &o.output("std.gtt"))?;
    let records: Vec<PredictionRecord> = results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s = r.std_map.data();
            PredictionRecord {
                index: i,
                mean_prediction: format!("mean.gtt[{i}]"),
                std: StdSummary {
                    min: s.iter().copied().fold(f64::INFINITY, f64::min),
                    mean: s.iter().sum::<f64>() / s.len() as f64,
                    max: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                },
                chosen_sigma: r.chosen_sigma,
                n: r.schedule.ensemble_size,
                strategy: r.schedule.strategy,
            }
        })
        .collect();
    write_json(&o.output("predictions.json"), &records)
}

pub fn synth(a: &SynthArgs) -> Result<Outcome> {
    prepare_out(&a.out)?;
    let mut o = Outcome::new(&a.out, a.seed);
    let spec_text = match &a.spec {
        Some(p) => {
            o.input(p);
            fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?
        }
        None => "{}".into(),
    };
    match a.kind {
        SynthKind::Tabular => {
            let mut spec: TabularSpec = serde_json::from_str(&spec_text)?;
            spec.seed = a.seed.unwrap_or(spec.seed);
            let d = gen_tabular(&spec)?;
            d.train.save(&o.output("train.gttc"))?;
            d.val.save(&o.output("val.gttc"))?;
            d.test.save(&o.output("test.gttc"))?;
            write_json(&o.output("function.json"), &d.function)?;
            write_json(&o.output("spec.json"), &spec)?;
            o.seed = Some(spec.seed);
        }
        SynthKind::Blobs => {
            let mut spec: BlobsSpec = serde_json::from_str(&spec_text)?;
            spec.seed = a.seed.unwrap_or(spec.seed);
            let d = gen_blobs_with_distractor(&spec)?;
            d.dataset.save(&o.output("data.gttc"))?;
            save_tensor(&d.clean_inputs, &o.output("clean.gtt"))?;
            save_tensor(&Tensor::vector(d.pattern.clone())?, &o.output("pattern.gtt"))?;
            let flags = d.distracted.iter().map(|&b| f64::from(u8::from(b))).collect();
            save_tensor(&Tensor::vector(flags)?, &o.output("distracted.gtt"))?;
            write_json(&o.output("spec.json"), &spec)?;
            o.seed = Some(spec.seed);
        }
        SynthKind::Images => {
            let mut spec: ImageSpec = serde_json::from_str(&spec_text)?;
            spec.seed = a.seed.unwrap_or(spec.seed);
            let d = gen_blob_images(&spec)?;
            d.dataset.save(&o.output("data.gttc"))?;
            save_tensor(&d.clean_targets, &o.output("clean_targets.gtt"))?;
            let inst: Vec<Tensor> = d.instances.iter().map(InstanceMap::to_tensor).collect();
            save_tensor(&Tensor::stack(&inst)?, &o.output("instances.gtt"))?;
            save_tensor(&Tensor::vector(d.counts.iter().map(|&c| c as f64).collect())?, &o.output("counts.gtt"))?;
            write_json(&o.output("spec.json"), &spec)?;
            o.seed = Some(spec.seed);
        }
    }
    Ok(o)
}

pub fn train(a: &TrainArgs) -> Result<Outcome> {
    prepare_out(&a.out)?;
    let mut o = Outcome::new(&a.out, Some(a.seed));
    let data = load_dataset(&a.data, &mut o)?;
    let rng = RngStream::from_seed(a.seed);
    let mut model = Mlp::new(data.input_dim(), &a.hidden, OutputKind::for_task(data.task), &rng.derive_named("init"))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        momentum: a.momentum,
    };
    let report = mlp_train(&mut model, &WeightedBatch::from_dataset(&data)?, &cfg, &rng.derive_named("train"))?;
    log::info!("final training loss {:?}", report.loss_curve.last());
    model.save(&o.output("model.gttc"))?;
    write_json(&o.output("report.json"), &report)?;
    Ok(o)
}

pub fn fit(a: &FitArgs) -> Result<Outcome> {
    prepare_out(&a.out)?;
    let mut o = Outcome::new(&a.out, None);
    let data = load_dataset(&a.data, &mut o)?;
    let range_ref = match &a.range_ref {
        Some(p) => Some(load_dataset(p, &mut o)?.inputs),
        None => None,
    };
    let s = Subspace::fit(&data.inputs, Retain::parse(&a.retain)?, range_ref.as_ref())?;
    log::info!("kept {} of {} components", s.n_components(), s.dim());
    s.save(&o.output("subspace.gttc"))?;
    Ok(o)
}

pub fn predict(a: &PredictArgs) -> Result<Outcome> {
    prepare_out(&a.out)?;
    let mut o = Outcome::new(&a.out, Some(a.seed));
    let data = load_dataset(&a.data, &mut o)?;
    let s = load_subspace(&a.subspace, &mut o)?;
    let model = load_model(&a.model, data.task, &mut o)?;
    let sched = schedule(&a.noise, data.task, None)?;
    let results = run_gtta_rows(model.as_ref(), &s, &sched, &data.inputs, &RngStream::from_seed(a.seed))?;
    write_ensemble(&results, &mut o)?;
    Ok(o)
}

pub fn auto_sigma(a: &AutoSigmaArgs) -> Result<Outcome> {
    prepare_out(&a.out)?;
    let mut o = Outcome::new(&a.out, Some(a.seed));
    let data = load_dataset(&a.data, &mut o)?;
    let s = load_subspace(&a.subspace, &mut o)?;
    let model = load_model(&a.model, data.task, &mut o)?;
    let sched = schedule(&a.noise, data.task, None)?;
    let cfg = SigmaSearchConfig {
        grid: a.grid.clone(),
        confidence_threshold: a.threshold,
    };
    let rng = RngStream::from_seed(a.seed);
    let picked = (0..data.len())
        .into_par_iter()
        .map(|i| select_sigma(model.as_ref(), &s, &sched, data.inputs.row(i), &cfg, &rng.derive(i as u64)))
        .collect::<gtta_core::Result<Vec<_>>>()?;
    let sigmas = picked.iter().map(|p| p.0).collect();
    save_tensor(&Tensor::vector(sigmas)?, &o.output("sigmas.gtt"))?;
    let results: Vec<EnsembleResult> = picked.into_iter().map(|p| p.1).collect();
    write_ensemble(&results, &mut o)?;
    Ok(o)
}

pub fn distill_cmd(a: &DistillArgs) -> Result<Outcome> {
    prepare_out(&a.out)?;
    let mut o = Outcome::new(&a.out, Some(a.seed));
    o.input(&a.model);
    let teacher = Mlp::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let s = load_subspace(&a.subspace, &mut o)?;
    let labeled = load_dataset(&a.labeled, &mut o)?;
    let unlabeled = load_dataset(&a.unlabeled, &mut o)?.without_targets();
    let heldout = match &a.heldout {
        Some(p) => Some(load_dataset(p, &mut o)?),
        None => None,
    };
    let sched = schedule(&a.noise, labeled.task, None)?;
    let rng = RngStream::from_seed(a.seed);
    let pseudo = generate_pseudolabels(&teacher, &s, &sched, &unlabeled, &rng.derive_named("teacher"))?;
    let mut student = if a.restart {
        Mlp::new(teacher.input_dim(), &teacher.hidden_widths(), teacher.output_kind(), &rng.derive_named("init"))?
    } else {
        teacher.clone()
    };
    let cfg = DistillConfig {
        lambda: a.lambda,
        train: TrainConfig {
            epochs: a.epochs,
            lr: a.lr,
            batch_size: a.batch_size,
            momentum: a.momentum,
        },
        hard_labels: a.hard_labels,
        weighted: !a.unweighted,
    };
    let report = distill(&mut student, &labeled, &pseudo, &cfg, heldout.as_ref(), &rng.derive_named("train"))?;
    pseudo.save(&o.output("pseudo.gttc"))?;
    student.save(&o.output("student.gttc"))?;
    write_json(&o.output("report.json"), &report)?;
    Ok(o)
}

fn maps_of(t: &Tensor) -> Result<Vec<Tensor>> {
    match t.rank() {
        2 => Ok(vec![t.clone()]),
        3 => Ok((0..t.nrows()).map(|i| t.slice_row(i)).collect()),
        _ => bail!("expected [H, W] or [n, H, W] maps, got {:?}", t.shape()),
    }
}

#[derive(Serialize)]
struct CountReport {
    counts: Vec<usize>,
    areas: Vec<Vec<usize>>,
    mae: Option<f64>,
    config: CountConfig,
}

pub fn count_cmd(a: &CountArgs) -> Result<Outcome> {
    prepare_out(&a.out)?;
    let mut o = Outcome::new(&a.out, None);
    o.input(&a.maps);
    let maps = maps_of(&load_tensor(&a.maps)?)?;
    let cfg = CountConfig {
        threshold: a.threshold,
        element: StructuringElement::square(a.elem, a.iters)?,
        min_area: a.min_area,
        connectivity: Connectivity::from_neighbors(a.connectivity)?,
    };
    let results = maps.par_iter().map(|m| count(m, &cfg)).collect::<gtta_core::Result<Vec<_>>>()?;
    let counts: Vec<usize> = results.iter().map(|r| r.count).collect();
    let mae = match &a.truth {
        Some(p) => {
            o.input(p);
            let truth: Vec<usize> = load_tensor(p)?.data().iter().map(|&c| c as usize).collect();
            Some(gtta_core::segcount::evaluate_counting(&counts, &truth)?)
        }
        None => None,
    };
    if let Some(m) = mae {
        log::info!("count MAE {m}");
    }
    save_tensor(&Tensor::vector(counts.iter().map(|&c| c as f64).collect())?, &o.output("counts.gtt"))?;
    let report = CountReport {
        counts,
        areas: results.into_iter().map(|r| r.areas).collect(),
        mae,
        config: cfg,
    };
    write_json(&o.output("report.json"), &report)?;
    Ok(o)
}

pub fn targets(a: &TargetsArgs) -> Result<Outcome> {
    prepare_out(&a.out)?;
    let mut o = Outcome::new(&a.out, None);
    o.input(&a.instances);
    let maps = maps_of(&load_tensor(&a.instances)?)?;
    let e = StructuringElement::square(a.elem, a.iters)?;
    let made = maps
        .iter()
        .map(|m| Ok(make_training_targets(&InstanceMap::from_tensor(m)?, &e)))
        .collect::<Result<Vec<_>>>()?;
    let masks: Vec<Tensor> = made.iter().map(|t| t.mask.to_tensor()).collect();
    save_tensor(&Tensor::stack(&masks)?, &o.output("targets.gtt"))?;
    let vanished: Vec<&Vec<usize>> = made.iter().map(|t| &t.vanished).collect();
    write_json(&o.output("vanished.json"), &vanished)?;
    Ok(o)
}

fn write_report<T: Serialize>(o: &mut Outcome, report: &T, csv: Option<String>) -> Result<()> {
    write_json(&o.output("report.json"), report)?;
    if let Some(c) = csv {
        fs::write(o.output("report.csv"), c)?;
    }
    Ok(())
}

pub fn analyze(cmd: &AnalyzeCommand) -> Result<Outcome> {
    match cmd {
        AnalyzeCommand::BiasVariance(a) => {
            prepare_out(&a.out)?;
            let mut o = Outcome::new(&a.out, Some(a.seed));
            let data = load_dataset(&a.data, &mut o)?;
            let s = load_subspace(&a.subspace, &mut o)?;
            let model = load_model(&a.model, data.task, &mut o)?;
            let strategies: Vec<NoiseStrategy> = a.strategies.iter().map(|&s| strategy(s)).collect();
            let rep = bias_variance_sweep(model.as_ref(), &s, &strategies, &a.grid, a.n, &data, a.repeats, &RngStream::from_seed(a.seed))?;
            write_report(&mut o, &rep, Some(rep.to_csv()))?;
            Ok(o)
        }
        AnalyzeCommand::Spectrum(a) => {
            prepare_out(&a.out)?;
            let mut o = Outcome::new(&a.out, Some(a.seed));
            let data = load_dataset(&a.data, &mut o)?;
            let s = load_subspace(&a.subspace, &mut o)?;
            let sched = schedule(&a.noise, data.task, Some(100))?;
            let baseline = match a.baseline {
                BaselineArg::None => SpectrumBaseline::None,
                BaselineArg::Jitter => SpectrumBaseline::GlobalJitter(JitterSpec {
                    contrast: a.contrast,
                    brightness: a.brightness,
                }),
            };
            let rep = covariance_spectrum_experiment(&s, &sched, &data.inputs, sched.ensemble_size, &RngStream::from_seed(a.seed), baseline)?;
            write_report(&mut o, &rep, Some(rep.to_csv()))?;
            Ok(o)
        }
        AnalyzeCommand::StdError(a) => {
            prepare_out(&a.out)?;
            let mut o = Outcome::new(&a.out, Some(a.seed));
            let data = load_dataset(&a.data, &mut o)?;
            let s = load_subspace(&a.subspace, &mut o)?;
            let model = load_model(&a.model, data.task, &mut o)?;
            let sched = schedule(&a.noise, data.task, None)?;
            let rep = std_error_correlation(model.as_ref(), &s, &sched, &data, a.bins, &RngStream::from_seed(a.seed))?;
            write_report(&mut o, &rep, Some(rep.to_csv()))?;
            Ok(o)
        }
        AnalyzeCommand::StructuredNoise(a) => {
            prepare_out(&a.out)?;
            let mut o = Outcome::new(&a.out, Some(a.seed));
            let fit = load_dataset(&a.fit, &mut o)?;
            let test = load_dataset(&a.test, &mut o)?;
            o.input(&a.pattern);
            let pattern = load_tensor(&a.pattern)?;
            let cfg = StructuredNoiseConfig {
                fraction: a.fraction,
                retain: Retain::parse(&a.retain)?,
                schedule: schedule(&a.noise, fit.task, None)?,
                jitter: JitterSpec {
                    contrast: a.contrast,
                    brightness: a.brightness,
                },
            };
            let rep = structured_noise_removal(&fit.inputs, &test.inputs, pattern.data(), &cfg, &RngStream::from_seed(a.seed))?;
            write_report(&mut o, &rep, None)?;
            Ok(o)
        }
    }
}
