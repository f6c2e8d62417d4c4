use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataSource, SplitSizes};
use crate::error::{Error, Result};
use crate::learned::{DcanSpec, TrainConfig, UnetSpec};
use crate::measurement::Ordering;
use crate::solvers::{LsqrConfig, PhaseRetrievalConfig, TwistConfig};

/// Which study a config describes; fixes how `grid` values are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Grid of compression ratios.
    CompressionSweep,
    /// Grid of measurement SNRs in dB.
    NoiseSweep,
    /// Grid of operator element-inversion fractions.
    MismatchSweep,
    /// Grid of training-set sizes.
    TrainsizeSweep,
    /// Grid of image sides; autocorrelation measurements.
    Deautocorr,
    /// Grid of pattern counts; random grayscale patterns.
    Lowdata,
}

impl ExperimentKind {
    pub fn grid_label(self) -> &'static str {
        match self {
            Self::CompressionSweep => "ratio",
            Self::NoiseSweep => "snr_db",
            Self::MismatchSweep => "fraction",
            Self::TrainsizeSweep => "train",
            Self::Deautocorr => "side",
            Self::Lowdata => "m",
        }
    }
}

/// Reconstruction methods a sweep can evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Two-step trained front end + U-Net.
    Tst,
    /// Same network trained end to end.
    Ost,
    /// Front end followed by three convolutions.
    Dcan,
    /// U-Net fed with LSQR initial guesses.
    UnetBaseline,
    /// Output of the two-step front end alone.
    FclDl,
    Lsqr,
    Twist,
    /// Iterative phase retrieval (autocorrelation data only).
    Gs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tst => "tst",
            Self::Ost => "ost",
            Self::Dcan => "dcan",
            Self::UnetBaseline => "unet_baseline",
            Self::FclDl => "fcl_dl",
            Self::Lsqr => "lsqr",
            Self::Twist => "twist",
            Self::Gs => "gs",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Self::Tst | Self::Ost | Self::Dcan | Self::UnetBaseline | Self::FclDl)
    }

    fn needs_linear(self) -> bool {
        matches!(self, Self::Ost | Self::Dcan | Self::UnetBaseline | Self::Lsqr | Self::Twist)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// IDX image file or STL-10 binary for file-backed sources.
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub side: usize,
    pub splits: SplitSizes,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::SyntheticShapes,
            images: None,
            labels: None,
            side: 32,
            splits: SplitSizes {
                train: 2000,
                validation: 400,
                test: 400,
            },
        }
    }
}

/// Architecture knobs shared by every learned method of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub unet: UnetSpec,
    pub dcan: DcanSpec,
    /// Dense layers in the front end for autocorrelation inputs.
    pub deautocorr_layers: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            unet: UnetSpec::default(),
            dcan: DcanSpec::default(),
            deautocorr_layers: 3,
        }
    }
}

/// A complete, self-contained description of one sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub data: DataConfig,
    /// Pattern ordering for Hadamard kinds; the seed of `grayscale_random`
    /// is used for `lowdata`.
    pub ordering: Ordering,
    /// Compression ratio applied when the grid varies something else.
    pub compression: usize,
    /// Fixed SNR for kinds other than `noise_sweep`.
    pub noise_snr_db: Option<f64>,
    pub grid: Vec<f64>,
    pub methods: Vec<Method>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub lsqr: LsqrConfig,
    pub twist: TwistConfig,
    pub phase: PhaseRetrievalConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Test images per method exported as PGM.
    pub export_images: usize,
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            kind: ExperimentKind::CompressionSweep,
            data: DataConfig::default(),
            ordering: Ordering::RussianDoll,
            compression: 4,
            noise_snr_db: None,
            grid: vec![4.0],
            methods: vec![Method::Tst, Method::Ost],
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            lsqr: LsqrConfig::default(),
            twist: TwistConfig::default(),
            phase: PhaseRetrievalConfig::default(),
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
            export_images: 4,
            save_models: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::param(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("experiment name `{}` must be a plain non-empty word", self.name));
        }
        if self.grid.is_empty() {
            return bad("grid must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            return bad("grid values must be finite".into());
        }
        let integral = |v: f64| v >= 1.0 && v.fract() == 0.0;
        match self.kind {
            ExperimentKind::CompressionSweep
            | ExperimentKind::TrainsizeSweep
            | ExperimentKind::Deautocorr
            | ExperimentKind::Lowdata => {
                if let Some(v) = self.grid.iter().find(|v| !integral(**v)) {
                    return bad(format!("{} grid value {v} must be a positive integer", self.kind.grid_label()));
                }
            }
            ExperimentKind::MismatchSweep => {
                if let Some(v) = self.grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return bad(format!("inversion fraction {v} outside [0, 1]"));
                }
            }
            ExperimentKind::NoiseSweep => {}
        }
        if self.kind == ExperimentKind::TrainsizeSweep {
            let max = self.grid.iter().fold(0.0f64, |a, &b| a.max(b)) as usize;
            if max > self.data.splits.train {
                return bad(format!("training size {max} exceeds the {} training images", self.data.splits.train));
            }
        }
        if self.kind == ExperimentKind::Deautocorr {
            if let Some(m) = self.methods.iter().find(|m| m.needs_linear()) {
                return bad(format!("method `{}` needs a linear operator", m.name()));
            }
            if self.network.deautocorr_layers == 0 {
                return bad("deautocorr_layers must be at least 1".into());
            }
        } else if self.methods.contains(&Method::Gs) {
            return bad("method `gs` applies to autocorrelation data only".into());
        }
        let grayscale = matches!(self.ordering, Ordering::GrayscaleRandom { .. });
        if self.kind == ExperimentKind::Lowdata && !grayscale {
            return bad("lowdata uses random grayscale patterns; set ordering to grayscale_random".into());
        }
        if self.compression == 0 {
            return bad("compression ratio must be positive".into());
        }
        if self.data.splits.test == 0 {
            return bad("test split must not be empty".into());
        }
        self.train.validate()
    }

    /// Display label of one grid value, e.g. `snr_db=-5`.
    pub fn point_label(&self, value: f64) -> String {
        format!("{}={}", self.kind.grid_label(), value)
    }
}
