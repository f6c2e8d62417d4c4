//! Parameter layout, initialization and the forward graph.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal, Uniform};

use super::spec::{FrontEnd, Head, NetworkSpec, UnetSpec};
use crate::autodiff::{BatchNormConfig, Graph, RunningStats, Var};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub const INPUT_MEAN: &str = "input.mean";
pub const INPUT_STD: &str = "input.std";
pub const BN_GAMMA: &str = "bn.gamma";
pub const BN_BETA: &str = "bn.beta";
pub const BN_MEAN: &str = "bn.running_mean";
pub const BN_VAR: &str = "bn.running_var";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Updated by the optimizer.
    Weight,
    /// Fixed-size state updated outside the optimizer (norm statistics).
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    /// Belongs to the FCL front end (including its batch norm and input
    /// statistics).
    pub front_end: bool,
    init: Init,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Zeros,
    Ones,
    /// Uniform with limit `sqrt(6/(fan_in+fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    /// Normal with std `sqrt(2/fan_in)`.
    He { fan_in: usize },
}

fn unet_channels(u: &UnetSpec, level: usize) -> usize {
    u.base_channels << level
}

fn conv_slots(out: &mut Vec<ParamSlot>, prefix: &str, cin: usize, cout: usize, k: usize) {
    out.push(ParamSlot {
        name: format!("{prefix}.weight"),
        shape: vec![cout, cin, k, k],
        role: Role::Weight,
        front_end: false,
        init: Init::He { fan_in: cin * k * k },
    });
    out.push(ParamSlot {
        name: format!("{prefix}.bias"),
        shape: vec![cout],
        role: Role::Weight,
        front_end: false,
        init: Init::Zeros,
    });
}

fn dense_widths(spec: &NetworkSpec) -> Vec<usize> {
    let n = spec.pixel_count();
    match spec.front_end {
        FrontEnd::Fcl => vec![spec.input_length, n],
        FrontEnd::MultiFcl { layers, hidden, .. } => {
            let h = hidden.unwrap_or(n);
            let mut w = vec![spec.input_length];
            w.extend(std::iter::repeat_n(h, layers - 1));
            w.push(n);
            w
        }
        FrontEnd::None => vec![],
    }
}

/// Every named tensor the network owns, in a fixed order.
pub fn parameter_slots(spec: &NetworkSpec) -> Result<Vec<ParamSlot>> {
    spec.validate()?;
    let mut out = Vec::new();
    let fe = |name: &str, shape: Vec<usize>, role: Role, init: Init| ParamSlot {
        name: name.to_string(),
        shape,
        role,
        front_end: true,
        init,
    };
    let m = spec.input_length;
    let n = spec.pixel_count();
    if spec.has_front_end() && spec.input_norm.standardize {
        out.push(fe(INPUT_MEAN, vec![m], Role::Buffer, Init::Zeros));
        out.push(fe(INPUT_STD, vec![m], Role::Buffer, Init::Ones));
    }
    let widths = dense_widths(spec);
    for (i, w) in widths.windows(2).enumerate() {
        out.push(fe(
            &format!("fcl{i}.weight"),
            vec![w[0], w[1]],
            Role::Weight,
            Init::Glorot { fan_in: w[0], fan_out: w[1] },
        ));
        out.push(fe(&format!("fcl{i}.bias"), vec![w[1]], Role::Weight, Init::Zeros));
    }
    if spec.batchnorm_after_fcl {
        out.push(fe(BN_GAMMA, vec![n], Role::Weight, Init::Ones));
        out.push(fe(BN_BETA, vec![n], Role::Weight, Init::Zeros));
        out.push(fe(BN_MEAN, vec![n], Role::Buffer, Init::Zeros));
        out.push(fe(BN_VAR, vec![n], Role::Buffer, Init::Ones));
    }
    match spec.head {
        Head::Unet(u) => {
            let mut cin = 1;
            for l in 0..u.depth {
                let c = unet_channels(&u, l);
                conv_slots(&mut out, &format!("unet.down{l}.conv0"), cin, c, 3);
                conv_slots(&mut out, &format!("unet.down{l}.conv1"), c, c, 3);
                cin = c;
            }
            let cb = unet_channels(&u, u.depth);
            conv_slots(&mut out, "unet.bottom.conv0", cin, cb, 3);
            conv_slots(&mut out, "unet.bottom.conv1", cb, cb, 3);
            let mut below = cb;
            for l in (0..u.depth).rev() {
                let c = unet_channels(&u, l);
                conv_slots(&mut out, &format!("unet.up{l}.upconv"), below, c, 3);
                conv_slots(&mut out, &format!("unet.up{l}.conv0"), 2 * c, c, 3);
                conv_slots(&mut out, &format!("unet.up{l}.conv1"), c, c, 3);
                below = c;
            }
            conv_slots(&mut out, "unet.out", unet_channels(&u, 0), 1, 1);
            if u.residual {
                // The residual head starts as the identity map.
                let n = out.len();
                out[n - 2].init = Init::Zeros;
            }
        }
        Head::DcanDecoder(d) => {
            conv_slots(&mut out, "dcan.conv0", 1, d.channels, 3);
            conv_slots(&mut out, "dcan.conv1", d.channels, d.channels, 3);
            conv_slots(&mut out, "dcan.conv2", d.channels, 1, 3);
        }
        Head::None => {}
    }
    Ok(out)
}

/// Freshly initialized parameters (Glorot for dense layers, He for
/// convolutions, zero biases, identity batch norm).
pub fn init_parameters(spec: &NetworkSpec, seed: u64) -> Result<ParameterSet> {
    let mut set = ParameterSet::new();
    for slot in parameter_slots(spec)? {
        let mut r = rng::stream(seed, &format!("init/{}", slot.name));
        let len: usize = slot.shape.iter().product();
        let data: Vec<f64> = match slot.init {
            Init::Zeros => vec![0.0; len],
            Init::Ones => vec![1.0; len],
            Init::Glorot { fan_in, fan_out } => {
                let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let u = Uniform::new_inclusive(-lim, lim);
                (0..len).map(|_| u.sample(&mut r)).collect()
            }
            Init::He { fan_in } => {
                let nd = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::param(e.to_string()))?;
                (0..len).map(|_| nd.sample(&mut r)).collect()
            }
        };
        set.insert(slot.name, Tensor::new(slot.shape, data)?);
    }
    Ok(set)
}

/// Checks that `params` holds exactly the tensors `spec` requires.
pub fn check_parameters(spec: &NetworkSpec, params: &ParameterSet) -> Result<()> {
    let slots = parameter_slots(spec)?;
    for s in &slots {
        let t = params.get(&s.name)?;
        if t.shape() != s.shape.as_slice() {
            return Err(Error::Contract(format!(
                "parameter `{}` has shape {:?}, network expects {:?}",
                s.name,
                t.shape(),
                s.shape
            )));
        }
    }
    if params.len() != slots.len() {
        let known: Vec<&str> = slots.iter().map(|s| s.name.as_str()).collect();
        let extra: Vec<&str> = params.names().filter(|n| !known.contains(n)).collect();
        return Err(Error::Contract(format!("unexpected parameters {extra:?}")));
    }
    Ok(())
}

/// Applies the per-vector max normalization and the stored per-feature
/// standardization to a batch `B × M`.
pub fn preprocess(spec: &NetworkSpec, params: &ParameterSet, batch: &Tensor) -> Result<Tensor> {
    if batch.rank() != 2 || batch.shape()[1] != spec.input_length {
        return Err(Error::dim(
            "network input",
            format!("batch {:?}, network expects length {}", batch.shape(), spec.input_length),
        ));
    }
    let mut x = batch.clone();
    let m = spec.input_length;
    if spec.input_norm.max_normalize {
        for row in x.data_mut().chunks_exact_mut(m) {
            let peak = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if peak > 0.0 {
                row.iter_mut().for_each(|v| *v /= peak);
            }
        }
    }
    if spec.has_front_end() && spec.input_norm.standardize {
        let mean = params.get(INPUT_MEAN)?.data();
        let std = params.get(INPUT_STD)?.data();
        for row in x.data_mut().chunks_exact_mut(m) {
            for ((v, mu), sd) in row.iter_mut().zip(mean).zip(std) {
                *v = (*v - mu) / sd;
            }
        }
    }
    Ok(x)
}

/// Fits the standardization statistics on a raw training batch.
pub fn fit_input_norm(spec: &NetworkSpec, params: &mut ParameterSet, train_inputs: &Tensor) -> Result<()> {
    if !(spec.has_front_end() && spec.input_norm.standardize) {
        return Ok(());
    }
    let mut tmp = params.clone();
    tmp.insert(INPUT_MEAN, Tensor::zeros(&[spec.input_length]));
    tmp.insert(INPUT_STD, Tensor::ones(&[spec.input_length]));
    let x = preprocess(spec, &tmp, train_inputs)?;
    let (b, m) = (x.shape()[0], x.shape()[1]);
    if b == 0 {
        return Err(Error::param("cannot fit input statistics on zero samples"));
    }
    let mut mean = vec![0.0; m];
    for row in x.data().chunks_exact(m) {
        mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= b as f64);
    let mut var = vec![0.0; m];
    for row in x.data().chunks_exact(m) {
        var.iter_mut().zip(row).zip(&mean).for_each(|((a, v), mu)| *a += (v - mu).powi(2));
    }
    let scale = mean.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / b as f64).sqrt();
            // Constant features are centered but not rescaled.
            if s > 1e-9 * scale {
                s
            } else {
                1.0
            }
        })
        .collect();
    params.insert(INPUT_MEAN, Tensor::new(vec![m], mean)?);
    params.insert(INPUT_STD, Tensor::new(vec![m], std)?);
    Ok(())
}

/// Graph handles produced by one forward pass.
pub struct Forward {
    /// Post-front-end image, `B × 1 × side × side`.
    pub intermediate: Var,
    /// Network output, `B × 1 × side × side`.
    pub output: Var,
    /// Optimizer-visible leaves, by parameter name.
    pub trainable: Vec<(String, Var)>,
    /// Batch-norm statistics after the pass (changed only when the front end
    /// ran with batch statistics).
    pub bn_stats: Option<RunningStats>,
}

struct Binder<'a> {
    params: &'a ParameterSet,
    train: &'a dyn Fn(&str) -> bool,
    bound: BTreeMap<String, Var>,
    trainable: Vec<(String, Var)>,
}

impl Binder<'_> {
    fn bind(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self.params.get(name)?.clone();
        let v = if (self.train)(name) {
            let v = g.param(value);
            self.trainable.push((name.to_string(), v));
            v
        } else {
            g.constant(value)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    fn conv(&mut self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let w = self.bind(g, &format!("{prefix}.weight"))?;
        let b = self.bind(g, &format!("{prefix}.bias"))?;
        g.conv2d(x, w, Some(b))
    }

    fn conv_relu(&mut self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let y = self.conv(g, x, prefix)?;
        g.relu(y)
    }
}

/// Builds the forward pass for a raw input batch `B × M`.
///
/// `train` decides which parameters become optimizer leaves. The front end
/// uses batch statistics only when the graph is in training mode and the
/// front end is being trained; otherwise it uses the stored running
/// statistics.
pub fn forward(
    g: &mut Graph,
    spec: &NetworkSpec,
    params: &ParameterSet,
    train: &dyn Fn(&str) -> bool,
    raw_inputs: &Tensor,
    rng: &mut Rng,
) -> Result<Forward> {
    let x = preprocess(spec, params, raw_inputs)?;
    let b = x.shape()[0];
    let side = spec.output_side;
    let mut binder = Binder {
        params,
        train,
        bound: BTreeMap::new(),
        trainable: Vec::new(),
    };
    let input = g.constant(x);
    let mut bn_stats = None;

    let flat = match spec.front_end {
        FrontEnd::None => input,
        FrontEnd::Fcl | FrontEnd::MultiFcl { .. } => {
            let slope = match spec.front_end {
                FrontEnd::MultiFcl { leaky_slope, .. } => leaky_slope,
                _ => 0.0,
            };
            let layers = dense_widths(spec).len() - 1;
            let mut h = input;
            for i in 0..layers {
                let w = binder.bind(g, &format!("fcl{i}.weight"))?;
                let bias = binder.bind(g, &format!("fcl{i}.bias"))?;
                let z = g.matmul(h, w)?;
                h = g.add_row(z, bias)?;
                if i + 1 < layers {
                    h = g.leaky_relu(h, slope)?;
                }
            }
            if spec.batchnorm_after_fcl {
                let gamma = binder.bind(g, BN_GAMMA)?;
                let beta = binder.bind(g, BN_BETA)?;
                let mut stats = RunningStats {
                    mean: params.get(BN_MEAN)?.data().to_vec(),
                    var: params.get(BN_VAR)?.data().to_vec(),
                };
                let batch_stats = g.is_training() && train(BN_GAMMA);
                h = g.batchnorm_mode(h, gamma, beta, &mut stats, BatchNormConfig::default(), batch_stats)?;
                if batch_stats {
                    bn_stats = Some(stats);
                }
            }
            h
        }
    };
    let intermediate = g.reshape(flat, &[b, 1, side, side])?;

    let output = match spec.head {
        Head::None => intermediate,
        Head::DcanDecoder(_) => {
            let h = binder.conv_relu(g, intermediate, "dcan.conv0")?;
            let h = binder.conv_relu(g, h, "dcan.conv1")?;
            binder.conv(g, h, "dcan.conv2")?
        }
        Head::Unet(u) => {
            let mut skips = Vec::with_capacity(u.depth);
            let mut h = intermediate;
            for l in 0..u.depth {
                h = binder.conv_relu(g, h, &format!("unet.down{l}.conv0"))?;
                h = binder.conv_relu(g, h, &format!("unet.down{l}.conv1"))?;
                skips.push(h);
                h = g.maxpool2(h)?;
            }
            h = binder.conv_relu(g, h, "unet.bottom.conv0")?;
            h = binder.conv_relu(g, h, "unet.bottom.conv1")?;
            for l in (0..u.depth).rev() {
                h = g.upsample_nn(h, 2)?;
                h = binder.conv_relu(g, h, &format!("unet.up{l}.upconv"))?;
                h = g.concat_channels(skips[l], h)?;
                h = binder.conv_relu(g, h, &format!("unet.up{l}.conv0"))?;
                h = binder.conv_relu(g, h, &format!("unet.up{l}.conv1"))?;
                h = g.dropout(h, u.dropout, rng)?;
            }
            let out = binder.conv(g, h, "unet.out")?;
            if u.residual {
                g.add(out, intermediate)?
            } else {
                out
            }
        }
    };
    Ok(Forward {
        intermediate,
        output,
        trainable: binder.trainable,
        bn_stats,
    })
}
