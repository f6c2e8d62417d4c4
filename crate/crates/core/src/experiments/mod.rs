//! Sweep runner: builds datasets for every grid point and seed, trains and
//! evaluates the configured methods, and writes CSV, PGM and JSON results.
//!
//! Output tree under `<out_dir>/<name>/`:
//!
//! ```text
//! resolved_config.json   summary.json   metrics.csv
//! <label>/seed<k>/       metrics.csv job.json images/*.pgm [models/] [gs_log.csv]
//! ```
//!
//! Each job writes into a private staging directory that is renamed into
//! place when the job finishes, so a crashed run never leaves half a job.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{DataConfig, ExperimentConfig, ExperimentKind, Method, NetworkConfig};

use crate::data::{
    build_dataset, load_idx, load_stl10, synth_digits, synth_shapes, write_pgm, BuildOptions, DataSource,
    ImageDataset, Split,
};
use crate::error::{Error, Result};
use crate::learned::{
    evaluate, split_data, train_dcan_decoder, train_front_end, train_ost, train_tst, train_unet_baseline,
    NetworkSpec, TrainedModel,
};
use crate::measurement::{MeasurementModel, MismatchMode, MismatchSpec, Ordering};
use crate::metrics::{aggregate, error_image, score_pair, write_csv, MetricsReport, Summary};
use crate::rng;
use crate::solvers::{lsqr_solve, phase_retrieve, register_to_reference, twist_solve};
use crate::tensor::Tensor;

/// Results of one method on one job's test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub report: MetricsReport,
    /// Mean clamped RMSE on the training split (learned methods).
    pub train_rmse: Option<f64>,
    /// Mean RMSE of the post-front-end image on the test split.
    pub intermediate_rmse: Option<f64>,
    pub parameters: Option<usize>,
    pub selected: Vec<(String, usize)>,
    pub train_seconds: f64,
    /// Batch inference time per test image.
    pub per_image_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub point: usize,
    pub value: f64,
    pub label: String,
    pub seed: u64,
    pub dir: PathBuf,
    /// Failure reason; `None` when every method ran.
    pub error: Option<String>,
    pub methods: Vec<MethodOutcome>,
    pub seconds: f64,
}

/// Seed-averaged test scores of one method at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub label: String,
    pub value: f64,
    pub method: Method,
    pub seeds: usize,
    pub rmse: Summary,
    pub ssim: Summary,
    pub train_rmse: Option<f64>,
    pub intermediate_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub root: PathBuf,
    pub jobs: Vec<JobOutcome>,
    pub points: Vec<PointSummary>,
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl ExperimentResult {
    /// Seed average of `f` over successful jobs at grid index `point`.
    pub fn seed_mean(&self, point: usize, method: Method, f: impl Fn(&MethodOutcome) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self
            .jobs
            .iter()
            .filter(|j| j.point == point && j.error.is_none())
            .filter_map(|j| j.methods.iter().find(|m| m.method == method))
            .filter_map(&f)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Seed-averaged mean test RMSE.
    pub fn mean_rmse(&self, point: usize, method: Method) -> Option<f64> {
        self.seed_mean(point, method, |m| Some(m.report.rmse.mean))
    }

    pub fn failures(&self) -> impl Iterator<Item = &JobOutcome> {
        self.jobs.iter().filter(|j| j.error.is_some())
    }
}

struct Job {
    point: usize,
    value: f64,
    seed: u64,
}

/// Runs every grid point × seed on up to `threads` workers (0 = all cores).
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let root = cfg.out_dir.join(&cfg.name);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    write_atomic(&root.join("resolved_config.json"), cfg.to_json().as_bytes())?;
    let jobs: Vec<Job> = cfg
        .grid
        .iter()
        .enumerate()
        .flat_map(|(point, &value)| cfg.seeds.iter().map(move |&seed| Job { point, value, seed }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    let outcomes: Vec<JobOutcome> = pool.install(|| jobs.par_iter().map(|j| run_job_dir(cfg, &root, j)).collect());
    let _ = fs::remove_dir(root.join(".staging"));

    let reports: Vec<MetricsReport> = outcomes
        .iter()
        .flat_map(|j| j.methods.iter().map(|m| m.report.clone()))
        .collect();
    write_csv(&root.join("metrics.csv"), &reports)?;
    let result = ExperimentResult {
        experiment: cfg.name.clone(),
        kind: cfg.kind,
        config_hash: cfg.hash(),
        points: summarize(cfg, &outcomes)?,
        root: root.clone(),
        jobs: outcomes,
        notes: notes(cfg),
        seconds: start.elapsed().as_secs_f64(),
    };
    write_atomic(&root.join("summary.json"), &serde_json::to_vec_pretty(&result)?)?;
    Ok(result)
}

fn notes(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = vec![
        "metrics use images clamped to [0, 1]; std is the population standard deviation".to_string(),
        format!(
            "epoch budget: two-step methods {e} per step, one-step ost/dcan {d}, unet_baseline {e}",
            e = cfg.train.epochs,
            d = 2 * cfg.train.epochs
        ),
    ];
    match cfg.kind {
        ExperimentKind::Lowdata => out.push(
            "training and test measurements are both simulated with the same random grayscale patterns".into(),
        ),
        ExperimentKind::Deautocorr => out.push(
            "scores are computed after registering each estimate to the ground truth over cyclic shifts and 180° rotation"
                .into(),
        ),
        ExperimentKind::MismatchSweep => out.push(
            "data are acquired with the perturbed operator; lsqr, twist and the unet_baseline input use the nominal one"
                .into(),
        ),
        _ => {}
    }
    out
}

fn summarize(cfg: &ExperimentConfig, jobs: &[JobOutcome]) -> Result<Vec<PointSummary>> {
    let mut out = Vec::new();
    for (point, &value) in cfg.grid.iter().enumerate() {
        for &method in &cfg.methods {
            let hits: Vec<&MethodOutcome> = jobs
                .iter()
                .filter(|j| j.point == point && j.error.is_none())
                .filter_map(|j| j.methods.iter().find(|m| m.method == method))
                .collect();
            if hits.is_empty() {
                continue;
            }
            let opt_mean = |f: &dyn Fn(&MethodOutcome) -> Option<f64>| {
                let v: Vec<f64> = hits.iter().filter_map(|m| f(m)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            out.push(PointSummary {
                label: cfg.point_label(value),
                value,
                method,
                seeds: hits.len(),
                rmse: Summary::of(&hits.iter().map(|m| m.report.rmse.mean).collect::<Vec<_>>())?,
                ssim: Summary::of(&hits.iter().map(|m| m.report.ssim.mean).collect::<Vec<_>>())?,
                train_rmse: opt_mean(&|m| m.train_rmse),
                intermediate_rmse: opt_mean(&|m| m.intermediate_rmse),
            });
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn run_job_dir(cfg: &ExperimentConfig, root: &Path, job: &Job) -> JobOutcome {
    let start = Instant::now();
    let label = cfg.point_label(job.value);
    let final_dir = root.join(&label).join(format!("seed{}", job.seed));
    let staging = root.join(".staging").join(format!("{label}__seed{}", job.seed));
    let mut outcome = JobOutcome {
        point: job.point,
        value: job.value,
        label,
        seed: job.seed,
        dir: final_dir.clone(),
        error: None,
        methods: Vec::new(),
        seconds: 0.0,
    };
    let _ = fs::remove_dir_all(&staging);
    match fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e)).and_then(|_| run_job(cfg, job, &staging)) {
        Ok(methods) => outcome.methods = methods,
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome.seconds = start.elapsed().as_secs_f64();
    let finish = || -> Result<()> {
        let json = serde_json::to_vec_pretty(&outcome)?;
        fs::write(staging.join("job.json"), json).map_err(|e| Error::io(&staging, e))?;
        if let Some(parent) = final_dir.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir).map_err(|e| Error::io(&final_dir, e))?;
        }
        fs::rename(&staging, &final_dir).map_err(|e| Error::io(&final_dir, e))
    };
    if let Err(e) = finish() {
        let msg = format!("writing job output: {e}");
        outcome.error = Some(match outcome.error.take() {
            Some(prev) => format!("{prev}; {msg}"),
            None => msg,
        });
    }
    outcome
}

/// Ground-truth images for one seed, in `[0, 1]`.
pub fn load_images(data: &DataConfig, side: usize, seed: u64) -> Result<(Vec<Tensor>, Option<Vec<u8>>)> {
    let count = data.splits.total();
    let img_seed = rng::child_seed(seed, "images", 0);
    let path = || {
        data.images
            .as_deref()
            .ok_or_else(|| Error::param(format!("data source {:?} needs an `images` path", data.source)))
    };
    let (images, labels) = match data.source {
        DataSource::SyntheticShapes => return Ok((synth_shapes(count, side, img_seed), None)),
        DataSource::SyntheticDigits => {
            let (i, l) = synth_digits(count, side, img_seed);
            return Ok((i, Some(l)));
        }
        DataSource::IdxMnist => {
            let idx = load_idx(path()?, data.labels.as_deref(), Some(side))?;
            (idx.images, idx.labels)
        }
        DataSource::Stl10Binary => (load_stl10(path()?, Some(side))?, None),
    };
    if images.len() < count {
        return Err(Error::param(format!("source holds {} images, splits need {count}", images.len())));
    }
    // Seeded subset so different seeds see different images.
    let mut order: Vec<usize> = (0..images.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::stream(img_seed, "subset"));
    order.truncate(count);
    let picked = order.iter().map(|&i| images[i].clone()).collect();
    let labels = labels.map(|l| order.iter().map(|&i| l[i]).collect());
    Ok((picked, labels))
}

/// Full operator family of the config at `side` before compression.
pub fn base_model(ordering: Ordering, side: usize) -> Result<MeasurementModel> {
    match ordering {
        Ordering::GrayscaleRandom { seed } => MeasurementModel::grayscale(side, seed),
        o => MeasurementModel::hadamard(side, o),
    }
}

struct Prepared {
    ds: ImageDataset,
    /// Operator the classical solvers assume.
    nominal: MeasurementModel,
    side: usize,
}

fn prepare(cfg: &ExperimentConfig, job: &Job) -> Result<Prepared> {
    let kind = cfg.kind;
    let side = if kind == ExperimentKind::Deautocorr {
        job.value as usize
    } else {
        cfg.data.side
    };
    let (images, labels) = load_images(&cfg.data, side, job.seed)?;
    let model = match kind {
        ExperimentKind::Deautocorr => MeasurementModel::autocorrelation(side),
        ExperimentKind::CompressionSweep => base_model(cfg.ordering, side)?.compress(job.value as usize)?,
        ExperimentKind::Lowdata => base_model(cfg.ordering, side)?.compress_rows(job.value as usize)?,
        _ => base_model(cfg.ordering, side)?.compress(cfg.compression)?,
    };
    let mut opts = BuildOptions::new(cfg.data.splits, job.seed, cfg.data.source);
    opts.labels = labels;
    opts.noise_snr_db = match kind {
        ExperimentKind::NoiseSweep => Some(job.value),
        _ => cfg.noise_snr_db,
    };
    if kind == ExperimentKind::MismatchSweep {
        opts.mismatch = Some(MismatchSpec {
            mode: MismatchMode::InvertElements { fraction: job.value },
            seed: rng::child_seed(job.seed, "mismatch", 0),
        });
    }
    if model.is_linear() && cfg.methods.iter().any(|m| matches!(m, Method::UnetBaseline | Method::Lsqr)) {
        opts.lsqr = Some(cfg.lsqr);
    }
    let mut ds = build_dataset(&images, &model, &opts)?;
    if kind == ExperimentKind::TrainsizeSweep {
        ds = ds.with_train_limit(job.value as usize)?;
    }
    Ok(Prepared { ds, nominal: model, side })
}

fn network_spec(cfg: &ExperimentConfig, method: Method, m: usize, side: usize) -> NetworkSpec {
    network_for(method, &cfg.network, cfg.kind == ExperimentKind::Deautocorr, m, side)
}

/// Architecture a learned `method` uses for `m` inputs and `side × side`
/// outputs. Autocorrelation inputs get the multi-layer front end.
pub fn network_for(method: Method, net: &NetworkConfig, autocorrelation: bool, m: usize, side: usize) -> NetworkSpec {
    match method {
        Method::Dcan => NetworkSpec::dcan(m, side, net.dcan),
        Method::UnetBaseline => NetworkSpec::unet_only(side, net.unet),
        _ if autocorrelation => NetworkSpec::multi_fcl_unet(m, side, net.deautocorr_layers, net.unet),
        _ => NetworkSpec::fcl_unet(m, side, net.unet),
    }
}

/// Reconstructions of the test split as `side × side` images.
struct Recon {
    images: Vec<Tensor>,
    intermediate_rmse: Option<f64>,
    train_rmse: Option<f64>,
    model: Option<TrainedModel>,
    train_seconds: f64,
    per_image_ms: f64,
    extra_log: Option<String>,
}

fn rows_to_images(t: &Tensor, side: usize) -> Result<Vec<Tensor>> {
    (0..t.shape()[0])
        .map(|i| Tensor::new(vec![side, side], t.row(i).to_vec()))
        .collect()
}

fn learned_recon(cfg: &ExperimentConfig, p: &Prepared, model: TrainedModel, train_seconds: f64) -> Result<Recon> {
    let test = split_data(&p.ds, &model.spec, Split::Test)?;
    let t = Instant::now();
    let out = model.predict_batch(&test.inputs)?;
    let per_image_ms = t.elapsed().as_secs_f64() * 1e3 / test.len() as f64;
    let test_eval = evaluate(&model.spec, &model.params, &test, cfg.train.loss)?;
    let train = split_data(&p.ds, &model.spec, Split::Train)?;
    let train_eval = evaluate(&model.spec, &model.params, &train, cfg.train.loss)?;
    Ok(Recon {
        images: rows_to_images(&out, p.side)?,
        intermediate_rmse: model.spec.has_front_end().then_some(test_eval.intermediate_rmse),
        train_rmse: Some(train_eval.rmse),
        model: Some(model),
        train_seconds,
        per_image_ms,
        extra_log: None,
    })
}

fn classical_recon(images: Vec<Tensor>, seconds: f64, n: usize, log: Option<String>) -> Recon {
    Recon {
        images,
        intermediate_rmse: None,
        train_rmse: None,
        model: None,
        train_seconds: 0.0,
        per_image_ms: seconds * 1e3 / n.max(1) as f64,
        extra_log: log,
    }
}

fn run_job(cfg: &ExperimentConfig, job: &Job, dir: &Path) -> Result<Vec<MethodOutcome>> {
    let p = prepare(cfg, job)?;
    let side = p.side;
    let m = p.ds.measurement_len();
    let test_idx = p.ds.splits.test.clone();
    let truths: Vec<Tensor> = test_idx.iter().map(|&i| p.ds.image(i)).collect();
    let mut train_cfg = cfg.train;
    train_cfg.seed = job.seed;

    // Two-step training yields both `tst` and `fcl_dl`; train it once.
    let wants_two_step = cfg.methods.iter().any(|m| matches!(m, Method::Tst | Method::FclDl));
    let mut two_step = None;
    if wants_two_step {
        let spec = network_spec(cfg, Method::Tst, m, side);
        let t = Instant::now();
        if cfg.methods.contains(&Method::Tst) {
            let o = train_tst(&p.ds, &spec, &train_cfg)?;
            two_step = Some((Some(o.model), o.front_end, t.elapsed().as_secs_f64()));
        } else {
            let front = train_front_end(&p.ds, &spec, &train_cfg)?;
            two_step = Some((None, front, t.elapsed().as_secs_f64()));
        }
    }

    let images_dir = dir.join("images");
    let export = cfg.export_images.min(test_idx.len());
    if export > 0 {
        fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
        for (k, &i) in test_idx.iter().take(export).enumerate() {
            write_pgm(&images_dir.join(format!("truth_{i}.pgm")), &truths[k])?;
        }
    }

    let experiment = format!("{}/{}/seed{}", cfg.name, cfg.point_label(job.value), job.seed);
    let mut outcomes = Vec::new();
    let mut reports = Vec::new();
    for &method in &cfg.methods {
        let recon = match method {
            Method::Tst | Method::FclDl => {
                let (full, front, secs) = two_step.as_ref().expect("two-step model trained above");
                let model = if method == Method::Tst {
                    full.clone().expect("tst requested")
                } else {
                    front.clone()
                };
                learned_recon(cfg, &p, model, *secs)?
            }
            Method::Ost | Method::Dcan | Method::UnetBaseline => {
                let spec = network_spec(cfg, method, m, side);
                let t = Instant::now();
                let model = match method {
                    Method::Ost => train_ost(&p.ds, &spec, &train_cfg)?,
                    Method::Dcan => train_dcan_decoder(&p.ds, &spec, &train_cfg)?,
                    _ => train_unet_baseline(&p.ds, &spec, &train_cfg)?,
                };
                learned_recon(cfg, &p, model, t.elapsed().as_secs_f64())?
            }
            Method::Lsqr => {
                let t = Instant::now();
                let rows = match p.ds.lsqr_of(&test_idx) {
                    Ok(r) => r,
                    Err(_) => {
                        let h = p.nominal.matrix()?;
                        let recs: Vec<Tensor> = test_idx
                            .iter()
                            .map(|&i| lsqr_solve(h, &p.ds.measurement(i), &cfg.lsqr))
                            .collect::<Result<_>>()?;
                        let flat: Vec<f64> = recs.iter().flat_map(|r| r.data().to_vec()).collect();
                        Tensor::new(vec![recs.len(), side * side], flat)?
                    }
                };
                classical_recon(rows_to_images(&rows, side)?, t.elapsed().as_secs_f64(), test_idx.len(), None)
            }
            Method::Twist => {
                let h = p.nominal.matrix()?;
                let t = Instant::now();
                let imgs: Vec<Tensor> = test_idx
                    .par_iter()
                    .map(|&i| twist_solve(h, &p.ds.measurement(i), side, &cfg.twist).map(|o| o.image))
                    .collect::<Result<_>>()?;
                classical_recon(imgs, t.elapsed().as_secs_f64(), test_idx.len(), None)
            }
            Method::Gs => {
                let t = Instant::now();
                let l = 2 * side - 1;
                let runs: Vec<(Tensor, f64, usize)> = test_idx
                    .par_iter()
                    .map(|&i| {
                        let a = p.ds.measurement(i).reshape(&[l, l])?;
                        let mut pc = cfg.phase.clone();
                        pc.seed = rng::child_seed(job.seed ^ cfg.phase.seed, "gs", i as u64);
                        let o = phase_retrieve(&a, &pc)?;
                        Ok((o.image, o.restart_residuals[o.best_restart], o.best_restart))
                    })
                    .collect::<Result<_>>()?;
                let secs = t.elapsed().as_secs_f64();
                let mut log = String::from("image_id,rmse,fourier_residual,best_restart,rotated,shift_y,shift_x,correlation,alternate_correlation,twin_suspect\n");
                let mut imgs = Vec::with_capacity(runs.len());
                for ((img, res, best), (&i, truth)) in runs.into_iter().zip(test_idx.iter().zip(&truths)) {
                    let reg = register_to_reference(&img, truth)?;
                    let s = score_pair("", truth, &reg.aligned)?;
                    log.push_str(&format!(
                        "{i},{},{res},{best},{},{},{},{},{},{}\n",
                        s.rmse,
                        reg.rotated,
                        reg.shift.0,
                        reg.shift.1,
                        reg.correlation,
                        reg.alternate_correlation,
                        twin_suspect(reg.correlation, reg.alternate_correlation),
                    ));
                    imgs.push(reg.aligned);
                }
                classical_recon(imgs, secs, test_idx.len(), Some(log))
            }
        };

        // Autocorrelation data determine the image only up to shift and
        // rotation; learned outputs are registered like the GS estimates.
        let images = if cfg.kind == ExperimentKind::Deautocorr && method != Method::Gs {
            recon
                .images
                .iter()
                .zip(&truths)
                .map(|(r, t)| register_to_reference(r, t).map(|g| g.aligned))
                .collect::<Result<Vec<_>>>()?
        } else {
            recon.images
        };
        let scores = images
            .iter()
            .zip(&truths)
            .zip(&test_idx)
            .map(|((r, t), i)| score_pair(i.to_string(), t, r))
            .collect::<Result<Vec<_>>>()?;
        let report = aggregate(&experiment, method.name(), scores)?;
        for (k, &i) in test_idx.iter().take(export).enumerate() {
            write_pgm(&images_dir.join(format!("{}_{i}.pgm", method.name())), &images[k])?;
            let err = error_image(&crate::metrics::clamp_unit(&truths[k]), &crate::metrics::clamp_unit(&images[k]))?;
            write_pgm(&images_dir.join(format!("{}_{i}_error.pgm", method.name())), &err)?;
        }
        if let Some(log) = &recon.extra_log {
            let path = dir.join(format!("{}_log.csv", method.name()));
            fs::write(&path, log).map_err(|e| Error::io(&path, e))?;
        }
        if let (true, Some(model)) = (cfg.save_models, &recon.model) {
            let mdir = dir.join("models");
            fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
            model.save(&mdir.join(format!("{}.tstw", method.name())))?;
        }
        reports.push(report.clone());
        outcomes.push(MethodOutcome {
            method,
            parameters: recon.model.as_ref().map(|m| m.parameter_count()),
            selected: recon.model.as_ref().map(|m| m.provenance.selected.clone()).unwrap_or_default(),
            report,
            train_rmse: recon.train_rmse,
            intermediate_rmse: recon.intermediate_rmse,
            train_seconds: recon.train_seconds,
            per_image_ms: recon.per_image_ms,
        });
    }
    write_csv(&dir.join("metrics.csv"), &reports)?;
    Ok(outcomes)
}

/// Twin-image suspicion: the estimate matches the rotated truth almost as
/// well as the upright one, so both orientations are superimposed.
pub fn twin_suspect(correlation: f64, alternate: f64) -> bool {
    alternate >= 0.9 * correlation
}
