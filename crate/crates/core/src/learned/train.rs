//! Training loops for the two-step pipeline and its baselines.

use rand::seq::SliceRandom;

use super::loss::loss;
use super::model::{EpochRecord, Provenance, TrainedModel, ValidationRecord, EVAL_CHUNK};
use super::network::{fit_input_norm, forward, init_parameters, parameter_slots, Role, BN_MEAN, BN_VAR};
use super::spec::{Head, LossKind, NetworkSpec, TrainConfig};
use crate::autodiff::Graph;
use crate::data::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::score_pair;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::params::ParameterSet;
use crate::rng;
use crate::tensor::Tensor;

/// Network inputs and target images for one split.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inputs the network expects for `split`: measurement vectors for networks
/// with a front end, LSQR estimates otherwise.
pub fn split_data(ds: &ImageDataset, spec: &NetworkSpec, split: Split) -> Result<SplitData> {
    let idx = ds.splits.get(split);
    let inputs = if spec.has_front_end() {
        if ds.measurement_len() != spec.input_length {
            return Err(Error::dim(
                "split_data",
                format!("dataset measurements of length {}, network expects {}", ds.measurement_len(), spec.input_length),
            ));
        }
        ds.measurements_of(idx)
    } else {
        ds.lsqr_of(idx)?
    };
    if ds.side != spec.output_side {
        return Err(Error::dim("split_data", format!("dataset side {}, network side {}", ds.side, spec.output_side)));
    }
    Ok(SplitData {
        inputs,
        targets: ds.images_of(idx),
    })
}

struct Step<'a> {
    label: &'static str,
    /// Settings for front-end weights and for everything else.
    front_optimizer: OptimizerConfig,
    optimizer: OptimizerConfig,
    epochs: usize,
    loss: LossKind,
    trainable: &'a dyn Fn(&str) -> bool,
}

/// Validation scores of `params` on `data` (inference mode).
pub fn evaluate(spec: &NetworkSpec, params: &ParameterSet, data: &SplitData, kind: LossKind) -> Result<ValidationRecord> {
    let b = data.len();
    if b == 0 {
        return Err(Error::param("cannot evaluate on an empty split"));
    }
    let side = spec.output_side;
    let n = spec.pixel_count();
    let mut r = rng::from_seed(0);
    let (mut loss_sum, mut rmse_sum, mut ssim_sum, mut inter_sum) = (0.0, 0.0, 0.0, 0.0);
    for start in (0..b).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(b);
        let x = data.inputs.slice_rows(start, end)?;
        let y = data.targets.slice_rows(start, end)?;
        let mut g = Graph::new(false);
        let f = forward(&mut g, spec, params, &|_| false, &x, &mut r)?;
        let t = g.constant(y.clone().reshape(&[end - start, 1, side, side])?);
        let l = loss(&mut g, kind, f.output, t)?;
        // Losses are batch means; weight by chunk size.
        loss_sum += g.value(l).item()? * (end - start) as f64;
        let out = g.value(f.output).data();
        let mid = g.value(f.intermediate).data();
        for i in 0..end - start {
            let truth = Tensor::new(vec![side, side], y.row(i).to_vec())?;
            let pred = Tensor::new(vec![side, side], out[i * n..(i + 1) * n].to_vec())?;
            let inter = Tensor::new(vec![side, side], mid[i * n..(i + 1) * n].to_vec())?;
            let s = score_pair("", &truth, &pred)?;
            rmse_sum += s.rmse;
            ssim_sum += s.ssim;
            inter_sum += score_pair("", &truth, &inter)?.rmse;
        }
    }
    let bf = b as f64;
    Ok(ValidationRecord {
        loss: loss_sum / bf,
        rmse: rmse_sum / bf,
        ssim: ssim_sum / bf,
        intermediate_rmse: inter_sum / bf,
    })
}

fn uses_batch_stats(spec: &NetworkSpec, step: &Step) -> bool {
    spec.batchnorm_after_fcl && (step.trainable)(super::network::BN_GAMMA)
}

/// Runs one optimization step sequence, appending to `history`. Returns the
/// untrained validation record and the selected epoch.
fn run_step(
    spec: &NetworkSpec,
    params: &mut ParameterSet,
    train: &SplitData,
    val: &SplitData,
    cfg: &TrainConfig,
    step: &Step,
    history: &mut Vec<EpochRecord>,
) -> Result<(ValidationRecord, usize)> {
    let front_names: Vec<String> = parameter_slots(spec)?
        .into_iter()
        .filter(|s| s.front_end)
        .map(|s| s.name)
        .collect();
    let mut front_opt = Optimizer::new(step.front_optimizer);
    let mut opt = Optimizer::new(step.optimizer);
    let initial = evaluate(spec, params, val, step.loss)?;
    let mut best = (initial.loss, 0usize, params.clone());
    let side = spec.output_side;
    let batch_stats = uses_batch_stats(spec, step);
    let n_train = train.len();
    if batch_stats && n_train < 2 {
        return Err(Error::param("batch norm training needs at least two training images"));
    }
    if batch_stats && cfg.batch_size < 2 {
        return Err(Error::param("batch norm training needs batch_size ≥ 2"));
    }
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut update = 0u64;
    for epoch in 1..=step.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(rng::child_seed(cfg.seed, step.label, epoch as u64), "shuffle"));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            // A trailing single image cannot be batch-normalized.
            if batch_stats && batch.len() < 2 {
                continue;
            }
            let x = gather_rows(&train.inputs, batch);
            let y = gather_rows(&train.targets, batch).reshape(&[batch.len(), 1, side, side])?;
            let mut dr = rng::stream(rng::child_seed(cfg.seed, step.label, update), "dropout");
            update += 1;
            let mut g = Graph::new(true);
            let f = forward(&mut g, spec, params, step.trainable, &x, &mut dr)?;
            let t = g.constant(y);
            let l = loss(&mut g, step.loss, f.output, t)?;
            g.backward(l)?;
            let (front_grads, grads): (Vec<(String, Tensor)>, Vec<(String, Tensor)>) = f
                .trainable
                .iter()
                .filter_map(|(name, v)| g.grad(*v).map(|gr| (name.clone(), gr)))
                .partition(|(name, _)| front_names.contains(name));
            if !front_grads.is_empty() {
                front_opt.step(params, &front_grads)?;
            }
            if !grads.is_empty() {
                opt.step(params, &grads)?;
            }
            if let Some(stats) = f.bn_stats {
                let n = stats.mean.len();
                params.insert(BN_MEAN, Tensor::new(vec![n], stats.mean)?);
                params.insert(BN_VAR, Tensor::new(vec![n], stats.var)?);
            }
            loss_sum += g.value(l).item()? * batch.len() as f64;
            seen += batch.len();
        }
        let validation = if epoch % cfg.eval_every == 0 || epoch == step.epochs {
            let v = evaluate(spec, params, val, step.loss)?;
            if v.loss < best.0 {
                best = (v.loss, epoch, params.clone());
            }
            Some(v)
        } else {
            None
        };
        history.push(EpochRecord {
            step: step.label.to_string(),
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            validation,
        });
    }
    let selected = if cfg.keep_best {
        *params = best.2;
        best.1
    } else {
        step.epochs
    };
    Ok((initial, selected))
}

fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let w = t.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(vec![idx.len(), w], data).expect("rows of a finite tensor")
}

struct Prepared {
    train: SplitData,
    val: SplitData,
    hash: String,
}

fn prepare(ds: &ImageDataset, spec: &NetworkSpec, cfg: &TrainConfig) -> Result<Prepared> {
    cfg.validate()?;
    spec.validate()?;
    if ds.splits.train.is_empty() || ds.splits.validation.is_empty() {
        return Err(Error::param("training needs non-empty train and validation splits"));
    }
    if spec.batchnorm_after_fcl && cfg.batch_size < 2 {
        return Err(Error::param("batch norm training needs batch_size ≥ 2"));
    }
    Ok(Prepared {
        train: split_data(ds, spec, Split::Train)?,
        val: split_data(ds, spec, Split::Validation)?,
        hash: ds.content_hash(),
    })
}

fn weight_names(spec: &NetworkSpec, front_end: bool) -> Result<Vec<String>> {
    Ok(parameter_slots(spec)?
        .into_iter()
        .filter(|s| s.role == Role::Weight && s.front_end == front_end)
        .map(|s| s.name)
        .collect())
}

fn provenance(trainer: &str, hash: &str, cfg: &TrainConfig) -> Provenance {
    Provenance {
        trainer: trainer.to_string(),
        dataset_hash: hash.to_string(),
        config: *cfg,
        seed: cfg.seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        untrained_validation: Vec::new(),
        selected: Vec::new(),
    }
}

/// Both products of two-step training.
#[derive(Clone, Debug)]
pub struct TstOutcome {
    /// The step-1 front end on its own ("FCL-DL").
    pub front_end: TrainedModel,
    /// Frozen front end followed by the trained head ("TST-DL").
    pub model: TrainedModel,
}

fn front_end_spec(spec: &NetworkSpec) -> NetworkSpec {
    NetworkSpec {
        head: Head::None,
        front_end_frozen: false,
        ..*spec
    }
}

/// Step 1 only: the front end trained with MSE for `cfg.epochs` epochs.
pub fn train_front_end(ds: &ImageDataset, spec: &NetworkSpec, cfg: &TrainConfig) -> Result<TrainedModel> {
    let fe = front_end_spec(spec);
    if !fe.has_front_end() {
        return Err(Error::param("front-end training needs an FCL front end"));
    }
    let prep = prepare(ds, &fe, cfg)?;
    let mut params = init_parameters(&fe, cfg.seed)?;
    fit_input_norm(&fe, &mut params, &prep.train.inputs)?;
    let names = weight_names(&fe, true)?;
    let trainable = |n: &str| names.iter().any(|m| m == n);
    let mut history = Vec::new();
    let step = Step {
        label: "front_end",
        front_optimizer: cfg.front_end_optimizer(),
        optimizer: cfg.optimizer,
        epochs: cfg.epochs,
        loss: LossKind::Mse,
        trainable: &trainable,
    };
    let (initial, selected) = run_step(&fe, &mut params, &prep.train, &prep.val, cfg, &step, &mut history)?;
    let mut prov = provenance("fcl", &prep.hash, cfg);
    prov.untrained_validation.push(initial);
    prov.selected.push(("front_end".into(), selected));
    Ok(TrainedModel {
        spec: fe,
        params,
        history,
        provenance: prov,
    })
}

/// Two-step training: the front end with MSE, then the head on top of the
/// frozen front end with `cfg.loss`, `cfg.epochs` epochs each.
pub fn train_tst(ds: &ImageDataset, spec: &NetworkSpec, cfg: &TrainConfig) -> Result<TstOutcome> {
    if matches!(spec.head, Head::None) {
        return Err(Error::param("two-step training needs a head after the front end"));
    }
    let front = train_front_end(ds, spec, cfg)?;
    let full = NetworkSpec {
        front_end_frozen: true,
        ..*spec
    };
    let prep = prepare(ds, &full, cfg)?;
    let mut params = init_parameters(&full, rng::child_seed(cfg.seed, "tst_head", 0))?;
    params.extend_from(&front.params);
    let head_names = weight_names(&full, false)?;
    let trainable = |n: &str| head_names.iter().any(|m| m == n);
    let mut history = front.history.clone();
    let step = Step {
        label: "refine",
        front_optimizer: cfg.front_end_optimizer(),
        optimizer: cfg.optimizer,
        epochs: cfg.epochs,
        loss: cfg.loss,
        trainable: &trainable,
    };
    let (initial, selected) = run_step(&full, &mut params, &prep.train, &prep.val, cfg, &step, &mut history)?;
    let mut prov = front.provenance.clone();
    prov.trainer = "tst".into();
    prov.untrained_validation.push(initial);
    prov.selected.push(("refine".into(), selected));
    Ok(TstOutcome {
        model: TrainedModel {
            spec: full,
            params,
            history,
            provenance: prov,
        },
        front_end: front,
    })
}

fn train_one_step(
    trainer: &str,
    ds: &ImageDataset,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainedModel> {
    let prep = prepare(ds, spec, cfg)?;
    let mut params = init_parameters(spec, cfg.seed)?;
    fit_input_norm(spec, &mut params, &prep.train.inputs)?;
    let names: Vec<String> = parameter_slots(spec)?
        .into_iter()
        .filter(|s| s.role == Role::Weight)
        .map(|s| s.name)
        .collect();
    let trainable = |n: &str| names.iter().any(|m| m == n);
    let mut history = Vec::new();
    let step = Step {
        label: "joint",
        front_optimizer: cfg.front_end_optimizer(),
        optimizer: cfg.optimizer,
        epochs,
        loss: cfg.loss,
        trainable: &trainable,
    };
    let (initial, selected) = run_step(spec, &mut params, &prep.train, &prep.val, cfg, &step, &mut history)?;
    let mut prov = provenance(trainer, &prep.hash, cfg);
    prov.untrained_validation.push(initial);
    prov.selected.push(("joint".into(), selected));
    Ok(TrainedModel {
        spec: *spec,
        params,
        history,
        provenance: prov,
    })
}

/// One-step training of front end and head together for `2·cfg.epochs`.
pub fn train_ost(ds: &ImageDataset, spec: &NetworkSpec, cfg: &TrainConfig) -> Result<TrainedModel> {
    let spec = NetworkSpec {
        front_end_frozen: false,
        ..*spec
    };
    train_one_step("ost", ds, &spec, cfg, 2 * cfg.epochs)
}

/// FCL followed by three convolutions, trained in one step for `2·cfg.epochs`.
pub fn train_dcan_decoder(ds: &ImageDataset, spec: &NetworkSpec, cfg: &TrainConfig) -> Result<TrainedModel> {
    if !matches!(spec.head, Head::DcanDecoder(_)) || !spec.has_front_end() {
        return Err(Error::param("DCAN training needs an FCL front end and a DCAN decoder head"));
    }
    train_one_step("dcan", ds, spec, cfg, 2 * cfg.epochs)
}

/// U-Net on the dataset's LSQR estimates for `cfg.epochs`.
pub fn train_unet_baseline(ds: &ImageDataset, spec: &NetworkSpec, cfg: &TrainConfig) -> Result<TrainedModel> {
    if spec.has_front_end() || !matches!(spec.head, Head::Unet(_)) {
        return Err(Error::param("the LSQR-input baseline is a U-Net without a front end"));
    }
    if ds.lsqr.is_none() {
        return Err(Error::Missing("dataset has no LSQR channel for the U-Net baseline".into()));
    }
    train_one_step("unet_lsqr", ds, spec, cfg, cfg.epochs)
}
