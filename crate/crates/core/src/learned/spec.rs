use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;

/// Learned map from the measurement vector to a first image estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FrontEnd {
    /// One dense layer `M → side²`.
    Fcl,
    /// `layers` dense layers with a leaky rectifier between consecutive ones.
    MultiFcl {
        layers: usize,
        /// Hidden width; `None` uses the output pixel count.
        hidden: Option<usize>,
        leaky_slope: f64,
    },
    /// The input is already an image (e.g. an LSQR estimate).
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnetSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub dropout: f64,
    /// Adds the network input to its output, so the U-Net learns a
    /// correction. The output convolution then starts at zero.
    pub residual: bool,
}

impl Default for UnetSpec {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            dropout: 0.2,
            residual: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcanSpec {
    pub channels: usize,
}

impl Default for DcanSpec {
    fn default() -> Self {
        Self { channels: 16 }
    }
}

/// Image-to-image stage after the front end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Head {
    Unet(UnetSpec),
    DcanDecoder(DcanSpec),
    None,
}

/// How raw measurement vectors are rescaled before the front end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputNorm {
    /// Divide each vector by its maximum first.
    pub max_normalize: bool,
    /// Standardize each feature with training-set mean and std.
    pub standardize: bool,
}

impl Default for InputNorm {
    fn default() -> Self {
        Self {
            max_normalize: false,
            standardize: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_length: usize,
    pub output_side: usize,
    pub front_end: FrontEnd,
    pub front_end_frozen: bool,
    pub batchnorm_after_fcl: bool,
    pub head: Head,
    #[serde(default)]
    pub input_norm: InputNorm,
}

impl NetworkSpec {
    /// FCL + batch norm, no head (the first training step, "FCL-DL").
    pub fn fcl(input_length: usize, output_side: usize) -> Self {
        Self {
            input_length,
            output_side,
            front_end: FrontEnd::Fcl,
            front_end_frozen: false,
            batchnorm_after_fcl: true,
            head: Head::None,
            input_norm: InputNorm::default(),
        }
    }

    /// FCL + batch norm + U-Net.
    pub fn fcl_unet(input_length: usize, output_side: usize, unet: UnetSpec) -> Self {
        Self {
            head: Head::Unet(unet),
            ..Self::fcl(input_length, output_side)
        }
    }

    /// FCL + batch norm + three convolutions.
    pub fn dcan(input_length: usize, output_side: usize, dcan: DcanSpec) -> Self {
        Self {
            head: Head::DcanDecoder(dcan),
            ..Self::fcl(input_length, output_side)
        }
    }

    /// U-Net on an image-shaped input.
    pub fn unet_only(output_side: usize, unet: UnetSpec) -> Self {
        Self {
            input_length: output_side * output_side,
            output_side,
            front_end: FrontEnd::None,
            front_end_frozen: false,
            batchnorm_after_fcl: false,
            head: Head::Unet(unet),
            input_norm: InputNorm {
                max_normalize: false,
                standardize: false,
            },
        }
    }

    /// `layers` dense layers (leaky slope 0.01) + batch norm + U-Net, with
    /// max-normalized inputs, for autocorrelation data.
    pub fn multi_fcl_unet(input_length: usize, output_side: usize, layers: usize, unet: UnetSpec) -> Self {
        Self {
            front_end: FrontEnd::MultiFcl {
                layers,
                hidden: None,
                leaky_slope: 0.01,
            },
            input_norm: InputNorm {
                max_normalize: true,
                standardize: true,
            },
            ..Self::fcl_unet(input_length, output_side, unet)
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.output_side * self.output_side
    }

    pub fn has_front_end(&self) -> bool {
        !matches!(self.front_end, FrontEnd::None)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_length == 0 || self.output_side == 0 {
            return Err(Error::param("network input length and output side must be positive"));
        }
        match self.front_end {
            FrontEnd::MultiFcl { layers: 0, .. } => return Err(Error::param("multi-FCL needs at least one layer")),
            FrontEnd::MultiFcl { hidden: Some(0), .. } => return Err(Error::param("hidden width must be positive")),
            FrontEnd::None if self.input_length != self.pixel_count() => {
                return Err(Error::param(format!(
                    "image-input network needs input length {} for side {}",
                    self.pixel_count(),
                    self.output_side
                )))
            }
            FrontEnd::None if self.batchnorm_after_fcl => {
                return Err(Error::param("batch norm after FCL requires a front end"))
            }
            _ => {}
        }
        match self.head {
            Head::Unet(u) => {
                if u.depth == 0 || u.base_channels == 0 {
                    return Err(Error::param("U-Net depth and channels must be positive"));
                }
                if !self.output_side.is_multiple_of(1 << u.depth) {
                    return Err(Error::param(format!(
                        "side {} is not divisible by 2^{} for a depth-{} U-Net",
                        self.output_side, u.depth, u.depth
                    )));
                }
                if !(0.0..1.0).contains(&u.dropout) {
                    return Err(Error::param(format!("dropout {} outside [0,1)", u.dropout)));
                }
            }
            Head::DcanDecoder(d) if d.channels == 0 => return Err(Error::param("DCAN channels must be positive")),
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    Mse,
    /// `RMSE + alpha · (1 − SSIM)/2`.
    RmsePlusDssim { alpha: f64 },
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::RmsePlusDssim { alpha: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Epochs per training step; one-step baselines get twice this.
    pub epochs: usize,
    pub batch_size: usize,
    /// Loss for image-refinement steps. Front-end pre-training always uses MSE.
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    /// Optimizer for front-end weights in every procedure (pre-training and
    /// joint training alike); `None` reuses `optimizer`.
    pub front_end_optimizer: Option<OptimizerConfig>,
    pub seed: u64,
    /// Validate every `eval_every` epochs (and always on the last one).
    pub eval_every: usize,
    /// Restore the parameters with the lowest validation loss at the end.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 50,
            loss: LossKind::default(),
            optimizer: OptimizerConfig::default(),
            front_end_optimizer: None,
            seed: 0,
            eval_every: 1,
            keep_best: true,
        }
    }
}

impl TrainConfig {
    pub fn front_end_optimizer(&self) -> OptimizerConfig {
        self.front_end_optimizer.unwrap_or(self.optimizer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every must be at least 1"));
        }
        if let LossKind::RmsePlusDssim { alpha } = self.loss {
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(Error::param(format!("DSSIM weight {alpha} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}
