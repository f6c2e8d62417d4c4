//! SGD and Adam over a [`ParameterSet`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    step_count: u64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to each parameter named in `grads`. All gradients
    /// are validated before anything is modified.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &[(String, Tensor)]) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::dim(
                    "optimizer_step",
                    format!("`{name}`: param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.data().iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        self.step_count += 1;
        let cfg = self.config;
        let t = self.step_count as i32;
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            match cfg.kind {
                OptimizerKind::Sgd => {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= cfg.learning_rate * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let n = g.len();
                    let m = self.first_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let v = self.second_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let bc1 = 1.0 - cfg.beta1.powi(t);
                    let bc2 = 1.0 - cfg.beta2.powi(t);
                    for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
                        *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
