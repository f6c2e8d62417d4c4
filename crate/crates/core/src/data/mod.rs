//! Paired image/measurement datasets, their on-disk container, and image
//! sources.
//!
//! `TSTD` container layout (integers and floats little-endian):
//!
//! ```text
//! "TSTD" version:u32 n_images:u32 side:u32 m:u32
//! train_len:u32 train:u32×len  val_len:u32 val:u32×len  test_len:u32 test:u32×len
//! images:f32 × n·side²   measurements:f32 × n·m
//! has_lsqr:u8  [lsqr:f32 × n·side²]
//! ```
//!
//! Descriptive metadata (source, operator, seed, noise, mismatch) lives in a
//! JSON sidecar next to the container.

mod loaders;
mod synth;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::measurement::{add_noise_snr, MeasurementModel, MismatchSpec};
use crate::params::ByteCursor;
use crate::rng;
use crate::solvers::{lsqr_solve, LsqrConfig};
use crate::tensor::Tensor;

pub use loaders::{
    load_idx, load_stl10, parse_idx_images, parse_idx_labels, parse_stl10, resize_area_or_bilinear,
    resize_bilinear, IdxImages, STL10_RECORD,
};
pub use synth::{render_digit, synth_digits, synth_shapes};

pub const TSTD_MAGIC: &[u8; 4] = b"TSTD";
pub const TSTD_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    IdxMnist,
    Stl10Binary,
    SyntheticShapes,
    SyntheticDigits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

/// Disjoint index sets into the image list.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Splits {
    /// Seeded shuffle of `0..n` cut into consecutive train/validation/test blocks.
    pub fn shuffled(n: usize, sizes: SplitSizes, seed: u64) -> Result<Self> {
        if sizes.total() > n {
            return Err(Error::param(format!("split sizes sum to {} but only {n} images", sizes.total())));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, "dataset_splits"));
        let (a, b) = (sizes.train, sizes.train + sizes.validation);
        Ok(Self {
            train: idx[..a].to_vec(),
            validation: idx[a..b].to_vec(),
            test: idx[b..sizes.total()].to_vec(),
        })
    }

    pub fn get(&self, which: Split) -> &[usize] {
        match which {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Contract(format!("split index {i} out of range or repeated")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: DataSource,
    /// Human-readable description of the operator that produced the data.
    pub model: String,
    pub seed: u64,
    pub noise_snr_db: Option<f64>,
    pub mismatch: Option<MismatchSpec>,
    pub labels: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub side: usize,
    /// `n × side²`, values in `[0, 1]`.
    pub images: Tensor,
    /// `n × M`.
    pub measurements: Tensor,
    /// Optional LSQR initial guesses, `n × side²`.
    pub lsqr: Option<Tensor>,
    pub splits: Splits,
    pub meta: DatasetMeta,
}

/// Options for [`build_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    pub noise_snr_db: Option<f64>,
    pub mismatch: Option<MismatchSpec>,
    /// Compute LSQR initial guesses with the unperturbed operator.
    pub lsqr: Option<LsqrConfig>,
    pub splits: SplitSizes,
    pub seed: u64,
    pub source: DataSource,
    pub labels: Option<Vec<u8>>,
}

impl BuildOptions {
    pub fn new(splits: SplitSizes, seed: u64, source: DataSource) -> Self {
        Self {
            noise_snr_db: None,
            mismatch: None,
            lsqr: None,
            splits,
            seed,
            source,
            labels: None,
        }
    }
}

fn stack(rows: &[Tensor], width: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::dim("stack", format!("row of {} values, expected {width}", r.len())));
        }
        data.extend_from_slice(r.data());
    }
    Tensor::new(vec![rows.len(), width], data)
}

pub fn describe_model(model: &MeasurementModel) -> String {
    match model.ordering {
        Some(o) => format!(
            "linear side={} m={} full={} ordering={}",
            model.image_side,
            model.measurement_len(),
            model.full_basis_size,
            serde_json::to_string(&o).unwrap_or_default()
        ),
        None => format!("autocorrelation side={} m={}", model.image_side, model.measurement_len()),
    }
}

/// Simulates acquisition of every image with `model` (perturbed per
/// `opts.mismatch`), adds optional noise, and optionally attaches LSQR
/// reconstructions computed with the unperturbed operator.
pub fn build_dataset(images: &[Tensor], model: &MeasurementModel, opts: &BuildOptions) -> Result<ImageDataset> {
    if images.is_empty() {
        return Err(Error::param("cannot build a dataset from zero images"));
    }
    let side = model.image_side;
    let n_pix = side * side;
    for (i, img) in images.iter().enumerate() {
        if img.len() != n_pix {
            return Err(Error::dim("build_dataset", format!("image {i} has {} pixels, model side {side}", img.len())));
        }
        if img.min() < 0.0 || img.max() > 1.0 {
            return Err(Error::param(format!("image {i} has values outside [0, 1]")));
        }
    }
    let acquire = match &opts.mismatch {
        Some(spec) => model.perturb(spec)?,
        None => model.clone(),
    };
    let measurements: Vec<Tensor> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let g = acquire.forward_measure(img)?;
            match opts.noise_snr_db {
                Some(snr) => add_noise_snr(&g, snr, rng::child_seed(opts.seed, "measurement_noise", i as u64)),
                None => Ok(g),
            }
        })
        .collect::<Result<_>>()?;
    let lsqr = match &opts.lsqr {
        Some(cfg) => {
            let h = model.matrix()?;
            let guesses: Vec<Tensor> = measurements.par_iter().map(|g| lsqr_solve(h, g, cfg)).collect::<Result<_>>()?;
            Some(stack(&guesses, n_pix)?)
        }
        None => None,
    };
    let flat: Vec<Tensor> = images.iter().map(|t| t.clone().reshape(&[n_pix])).collect::<Result<_>>()?;
    Ok(ImageDataset {
        side,
        images: stack(&flat, n_pix)?,
        measurements: stack(&measurements, model.measurement_len())?,
        lsqr,
        splits: Splits::shuffled(images.len(), opts.splits, opts.seed)?,
        meta: DatasetMeta {
            source: opts.source,
            model: describe_model(model),
            seed: opts.seed,
            noise_snr_db: opts.noise_snr_db,
            mismatch: opts.mismatch,
            labels: opts.labels.clone(),
        },
    })
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let w = t.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::from_parts_unchecked(vec![idx.len(), w], data).expect("gathered rows")
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn measurement_len(&self) -> usize {
        self.measurements.shape()[1]
    }

    pub fn image(&self, i: usize) -> Tensor {
        Tensor::from_parts_unchecked(vec![self.side, self.side], self.images.row(i).to_vec()).expect("image row")
    }

    pub fn measurement(&self, i: usize) -> Tensor {
        Tensor::from_parts_unchecked(vec![self.measurement_len()], self.measurements.row(i).to_vec())
            .expect("measurement row")
    }

    pub fn images_of(&self, idx: &[usize]) -> Tensor {
        gather(&self.images, idx)
    }

    pub fn measurements_of(&self, idx: &[usize]) -> Tensor {
        gather(&self.measurements, idx)
    }

    pub fn lsqr_of(&self, idx: &[usize]) -> Result<Tensor> {
        self.lsqr
            .as_ref()
            .map(|t| gather(t, idx))
            .ok_or_else(|| Error::Missing("dataset has no LSQR channel".into()))
    }

    /// Copy with only the first `n` training indices kept.
    pub fn with_train_limit(&self, n: usize) -> Result<Self> {
        if n > self.splits.train.len() {
            return Err(Error::param(format!("only {} training images", self.splits.train.len())));
        }
        let mut out = self.clone();
        out.splits.train.truncate(n);
        Ok(out)
    }

    /// Values as they will read back from a `TSTD` file.
    pub fn rounded_to_f32(&self) -> Self {
        let r = |t: &Tensor| t.map(|v| v as f32 as f64);
        Self {
            images: r(&self.images),
            measurements: r(&self.measurements),
            lsqr: self.lsqr.as_ref().map(r),
            ..self.clone()
        }
    }

    pub fn write_tstd<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.len();
        let mut buf = Vec::with_capacity(32 + 4 * (self.images.len() * 2 + self.measurements.len()));
        buf.extend_from_slice(TSTD_MAGIC);
        for v in [TSTD_VERSION, n as u32, self.side as u32, self.measurement_len() as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for part in [&self.splits.train, &self.splits.validation, &self.splits.test] {
            buf.extend_from_slice(&(part.len() as u32).to_le_bytes());
            for &i in part {
                buf.extend_from_slice(&(i as u32).to_le_bytes());
            }
        }
        let mut put = |t: &Tensor| {
            for &v in t.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        };
        put(&self.images);
        put(&self.measurements);
        match &self.lsqr {
            Some(l) => {
                buf.push(1);
                for &v in l.data() {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            None => buf.push(0),
        }
        w.write_all(&buf).map_err(|e| Error::Format(format!("writing TSTD: {e}")))
    }

    pub fn read_tstd(bytes: &[u8], meta: DatasetMeta) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4)? != TSTD_MAGIC {
            return Err(Error::Format("bad TSTD magic".into()));
        }
        let version = cur.u32()?;
        if version != TSTD_VERSION {
            return Err(Error::Format(format!("unsupported TSTD version {version}")));
        }
        let n = cur.u32()? as usize;
        let side = cur.u32()? as usize;
        let m = cur.u32()? as usize;
        let mut parts = Vec::with_capacity(3);
        for _ in 0..3 {
            let len = cur.u32()? as usize;
            parts.push((0..len).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?);
        }
        let mut block = |rows: usize, cols: usize| -> Result<Tensor> {
            let data = (0..rows * cols).map(|_| cur.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            Tensor::new(vec![rows, cols], data).map_err(|e| Error::Format(format!("TSTD block: {e}")))
        };
        let images = block(n, side * side)?;
        let measurements = block(n, m)?;
        let lsqr = match cur.u8()? {
            0 => None,
            1 => {
                let data = (0..n * side * side).map(|_| cur.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
                Some(Tensor::new(vec![n, side * side], data).map_err(|e| Error::Format(format!("TSTD block: {e}")))?)
            }
            b => return Err(Error::Format(format!("bad LSQR presence byte {b}"))),
        };
        if !cur.is_done() {
            return Err(Error::Format("trailing bytes after TSTD payload".into()));
        }
        let test = parts.pop().expect("three parts");
        let validation = parts.pop().expect("three parts");
        let train = parts.pop().expect("three parts");
        let splits = Splits { train, validation, test };
        splits.check(n).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            side,
            images,
            measurements,
            lsqr,
            splits,
            meta,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_tstd(&mut v).expect("writing to memory");
        v
    }

    /// SHA-256 of the `TSTD` encoding, hex.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Writes `path` and its `<path>.json` metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let json = serde_json::to_vec_pretty(&self.meta)?;
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let meta: DatasetMeta = match std::fs::read(&side) {
            Ok(b) => serde_json::from_slice(&b)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => DatasetMeta {
                source: DataSource::SyntheticShapes,
                model: "unknown".into(),
                seed: 0,
                noise_snr_db: None,
                mismatch: None,
                labels: None,
            },
            Err(e) => return Err(Error::io(&side, e)),
        };
        Self::read_tstd(&bytes, meta)
    }
}

/// `<path>.json`, e.g. `train.tstd` → `train.tstd.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Binary PGM (P5, 8-bit); values are clamped to `[0, 1]` and scaled to 255.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    std::fs::write(path, pgm_bytes(image)?).map_err(|e| Error::io(path, e))
}

pub fn pgm_bytes(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *image.shape() {
        [h, w] => (h, w),
        [n] => {
            let s = (n as f64).sqrt().round() as usize;
            if s * s != n {
                return Err(Error::dim("write_pgm", format!("{n} pixels is not square")));
            }
            (s, s)
        }
        ref other => return Err(Error::dim("write_pgm", format!("{other:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Image at 8-bit precision as read back from a PGM file.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Format("only 8-bit P5 PGM is supported".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM extent {s}")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Format("truncated PGM body".into()))?;
    Tensor::new(vec![h, w], body.iter().map(|&b| b as f64 / 255.0).collect())
}
