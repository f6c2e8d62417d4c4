//! Trained networks: inference, timing and persistence.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::network::{check_parameters, forward};
use super::spec::{NetworkSpec, TrainConfig};
use crate::autodiff::Graph;
use crate::data::sidecar_path;
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::rng;
use crate::tensor::Tensor;

/// Scores on the validation split after an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    /// Objective of the current step (unclamped outputs).
    pub loss: f64,
    /// Mean RMSE and SSIM of clamped outputs.
    pub rmse: f64,
    pub ssim: f64,
    /// Mean RMSE of the post-front-end image.
    pub intermediate_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// `front_end`, `refine` or `joint`.
    pub step: String,
    /// 1-based epoch within the step.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Option<ValidationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub trainer: String,
    pub dataset_hash: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub crate_version: String,
    /// Validation scores before any update, per step.
    pub untrained_validation: Vec<ValidationRecord>,
    /// `(step, epoch)` whose parameters were kept; epoch 0 means untrained.
    pub selected: Vec<(String, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
    pub history: Vec<EpochRecord>,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub images: usize,
    pub total_seconds: f64,
    pub per_image_ms: f64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    spec: NetworkSpec,
    parameters: Vec<String>,
    history: Vec<EpochRecord>,
    provenance: Provenance,
}

const MANIFEST_FORMAT: &str = "spix-model";
/// Images per inference graph in batch prediction.
pub(crate) const EVAL_CHUNK: usize = 64;

impl TrainedModel {
    fn run(&self, inputs: &Tensor, intermediate: bool) -> Result<Tensor> {
        let b = inputs.shape()[0];
        let n = self.spec.pixel_count();
        let mut out = Vec::with_capacity(b * n);
        let mut r = rng::from_seed(0);
        for start in (0..b).step_by(EVAL_CHUNK) {
            let chunk = inputs.slice_rows(start, (start + EVAL_CHUNK).min(b))?;
            let mut g = Graph::new(false);
            let f = forward(&mut g, &self.spec, &self.params, &|_| false, &chunk, &mut r)?;
            let v = if intermediate { f.intermediate } else { f.output };
            out.extend_from_slice(g.value(v).data());
        }
        Tensor::new(vec![b, n], out)
    }

    fn single(&self, measurement: &Tensor, intermediate: bool) -> Result<Tensor> {
        if measurement.len() != self.spec.input_length {
            return Err(Error::dim(
                "predict",
                format!("measurement of length {}, model expects {}", measurement.len(), self.spec.input_length),
            ));
        }
        let x = measurement.clone().reshape(&[1, self.spec.input_length])?;
        let s = self.spec.output_side;
        self.run(&x, intermediate)?.reshape(&[s, s])
    }

    /// Reconstruction of one measurement vector, `side × side`.
    pub fn predict(&self, measurement: &Tensor) -> Result<Tensor> {
        self.single(measurement, false)
    }

    /// Post-front-end image for one measurement vector, `side × side`.
    pub fn predict_intermediate(&self, measurement: &Tensor) -> Result<Tensor> {
        self.single(measurement, true)
    }

    /// Reconstructions of a batch `B × M`, returned as `B × side²`.
    pub fn predict_batch(&self, inputs: &Tensor) -> Result<Tensor> {
        self.check_batch(inputs)?;
        self.run(inputs, false)
    }

    pub fn predict_intermediate_batch(&self, inputs: &Tensor) -> Result<Tensor> {
        self.check_batch(inputs)?;
        self.run(inputs, true)
    }

    fn check_batch(&self, inputs: &Tensor) -> Result<()> {
        if inputs.rank() != 2 || inputs.shape()[1] != self.spec.input_length {
            return Err(Error::dim(
                "predict",
                format!("batch {:?}, model expects rows of {}", inputs.shape(), self.spec.input_length),
            ));
        }
        Ok(())
    }

    /// Wall-clock time of one-at-a-time inference over every row of `inputs`.
    pub fn measure_latency(&self, inputs: &Tensor) -> Result<Latency> {
        self.check_batch(inputs)?;
        let b = inputs.shape()[0];
        if b == 0 {
            return Err(Error::param("latency needs at least one image"));
        }
        let start = Instant::now();
        for i in 0..b {
            let row = Tensor::new(vec![self.spec.input_length], inputs.row(i).to_vec())?;
            std::hint::black_box(self.predict(&row)?);
        }
        let total = start.elapsed().as_secs_f64();
        Ok(Latency {
            images: b,
            total_seconds: total,
            per_image_ms: total * 1e3 / b as f64,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Writes the `TSTW` weights to `path` and the JSON manifest to
    /// `<path>.json`. Weights are stored in single precision.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            spec: self.spec,
            parameters: self.params.names().map(str::to_string).collect(),
            history: self.history.clone(),
            provenance: self.provenance.clone(),
        };
        let mp = sidecar_path(path);
        std::fs::write(&mp, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mp = sidecar_path(path);
        let bytes = std::fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("manifest format `{}`", manifest.format)));
        }
        let params = ParameterSet::load(path)?;
        let names: Vec<String> = params.names().map(str::to_string).collect();
        let mut listed = manifest.parameters.clone();
        listed.sort();
        if names != listed {
            return Err(Error::Format(format!(
                "weight file holds {names:?}, manifest lists {:?}",
                manifest.parameters
            )));
        }
        check_parameters(&manifest.spec, &params)?;
        Ok(Self {
            spec: manifest.spec,
            params,
            history: manifest.history,
            provenance: manifest.provenance,
        })
    }

    /// Same model with parameters rounded as a save/load cycle would.
    pub fn rounded_to_f32(&self) -> Self {
        let mut m = self.clone();
        m.params.round_to_f32();
        m
    }
}
