//! Image-quality metrics: RMSE, windowed SSIM, error images and aggregates.
//!
//! Metric functions take images on a `[0, 1]` scale. Reconstructions can
//! overshoot, so [`score_pair`] clamps both images before scoring.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Window and stability constants for SSIM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub dynamic_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            dynamic_range: 1.0,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Largest odd window no bigger than the default that fits `side`, with
    /// the Gaussian width scaled in proportion.
    pub fn fitted(side: usize) -> Self {
        let d = Self::default();
        if side >= d.window {
            return d;
        }
        let window = if side % 2 == 1 { side } else { side.saturating_sub(1).max(1) };
        Self {
            window,
            sigma: d.sigma * window as f64 / d.window as f64,
            ..d
        }
    }

    /// Normalized Gaussian weights, row-major `window × window`.
    pub fn kernel(&self) -> Vec<f64> {
        let n = self.window;
        let c = (n as f64 - 1.0) / 2.0;
        let g1: Vec<f64> = (0..n)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let mut k: Vec<f64> = (0..n * n).map(|i| g1[i / n] * g1[i % n]).collect();
        let total: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= total);
        k
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn rmse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("rmse", a, b)?;
    if a.is_empty() {
        return Err(Error::dim("rmse", "empty images"));
    }
    let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

/// Elementwise `|a − b|`.
pub fn error_image(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("error_image", a, b)?;
    a.zip_map(b, |x, y| (x - y).abs())
}

fn plane_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        [1, h, w] | [1, 1, h, w] => Ok((h, w)),
        [n] => {
            let s = (n as f64).sqrt().round() as usize;
            if s * s == n {
                Ok((s, s))
            } else {
                Err(Error::dim(op, format!("vector of length {n} is not a square image")))
            }
        }
        ref other => Err(Error::dim(op, format!("expected a single image, got {other:?}"))),
    }
}

/// Mean SSIM over all valid window positions with the default 11×11
/// Gaussian window.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

pub fn ssim_with(a: &Tensor, b: &Tensor, p: &SsimParams) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (h, w) = plane_dims("ssim", a)?;
    if p.window == 0 || h < p.window || w < p.window {
        return Err(Error::param(format!(
            "{h}×{w} image is smaller than the {}×{} SSIM window",
            p.window, p.window
        )));
    }
    Ok(ssim_map(a.data(), b.data(), h, w, p).iter().sum::<f64>() / ((h - p.window + 1) * (w - p.window + 1)) as f64)
}

/// Local SSIM at every valid window position.
pub fn ssim_map(a: &[f64], b: &[f64], h: usize, w: usize, p: &SsimParams) -> Vec<f64> {
    let n = p.window;
    let k = p.kernel();
    let (c1, c2) = (p.c1(), p.c2());
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ki in 0..n {
                for kj in 0..n {
                    let wt = k[ki * n + kj];
                    let x = a[(i + ki) * w + j + kj];
                    let y = b[(i + ki) * w + j + kj];
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            out.push(((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
        }
    }
    out
}

/// `(1 − SSIM) / 2`.
pub fn dssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

pub fn clamp_unit(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub rmse: f64,
    pub ssim: f64,
}

/// Scores a reconstruction against its ground truth after clamping both
/// to `[0, 1]`. Images smaller than the SSIM window use a fitted window.
pub fn score_pair(id: impl Into<String>, truth: &Tensor, recon: &Tensor) -> Result<ImageScore> {
    let t = clamp_unit(truth);
    let r = clamp_unit(recon);
    let (h, w) = plane_dims("score_pair", &t)?;
    Ok(ImageScore {
        image_id: id.into(),
        rmse: rmse(&t, &r)?,
        ssim: ssim_with(&t, &r, &SsimParams::fitted(h.min(w)))?,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation (divisor `n`).
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("cannot summarize an empty list"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub model: String,
    pub per_image: Vec<ImageScore>,
    pub rmse: Summary,
    pub ssim: Summary,
    pub clamped_to_unit: bool,
    pub std_kind: String,
}

pub fn aggregate(experiment: &str, model: &str, scores: Vec<ImageScore>) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::param("aggregate needs at least one image"));
    }
    let r: Vec<f64> = scores.iter().map(|s| s.rmse).collect();
    let s: Vec<f64> = scores.iter().map(|s| s.ssim).collect();
    Ok(MetricsReport {
        experiment: experiment.to_string(),
        model: model.to_string(),
        rmse: Summary::of(&r)?,
        ssim: Summary::of(&s)?,
        per_image: scores,
        clamped_to_unit: true,
        std_kind: "population".to_string(),
    })
}

pub const CSV_HEADER: [&str; 5] = ["experiment", "model", "image_id", "rmse", "ssim"];

impl MetricsReport {
    /// Per-image rows followed by `mean` and `std` rows.
    pub fn write_csv_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for s in &self.per_image {
            w.write_record([
                self.experiment.as_str(),
                self.model.as_str(),
                s.image_id.as_str(),
                &s.rmse.to_string(),
                &s.ssim.to_string(),
            ])?;
        }
        for (tag, r, s) in [
            ("mean", self.rmse.mean, self.ssim.mean),
            ("std", self.rmse.std, self.ssim.std),
        ] {
            w.write_record([self.experiment.as_str(), self.model.as_str(), tag, &r.to_string(), &s.to_string()])?;
        }
        Ok(())
    }
}

/// Writes one CSV with a header and the rows of every report.
pub fn write_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        r.write_csv_rows(&mut w)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
