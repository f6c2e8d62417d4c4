//! Measurement operators for single-pixel acquisition.
//!
//! A linear [`MeasurementModel`] stores one illumination pattern per row of
//! its matrix; the detector reading for an image is the inner product of the
//! vectorized image with each pattern. The autocorrelation model replaces the
//! matrix with the (nonlinear) image autocorrelation.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::rng;
use crate::tensor::Tensor;

/// How the rows of the full basis were generated and ordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "ordering")]
pub enum Ordering {
    /// Natural Sylvester row order.
    Sylvester,
    /// Nested-resolution shells, sequency-sorted within each shell.
    RussianDoll,
    /// Seeded uniform permutation of the Sylvester rows.
    RandomPermutation { seed: u64 },
    /// i.i.d. uniform `[0,1]` patterns.
    GrayscaleRandom { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Linear(Tensor),
    Autocorrelation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementModel {
    pub kind: ModelKind,
    pub ordering: Option<Ordering>,
    pub image_side: usize,
    /// Number of rows of the uncompressed basis.
    pub full_basis_size: usize,
}

/// Operator perturbation used to simulate model mismatch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MismatchMode {
    InvertElements { fraction: f64 },
    GaussianPerturb { sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchSpec {
    #[serde(flatten)]
    pub mode: MismatchMode,
    pub seed: u64,
}

fn check_power_of_two(side: usize, what: &str) -> Result<()> {
    if side == 0 || !side.is_power_of_two() {
        return Err(Error::param(format!("{what} side {side} is not a power of two")));
    }
    Ok(())
}

/// Sylvester Hadamard matrix for `side × side` images: `N = side²` rows,
/// each row one ±1 pattern in row-major pixel order.
pub fn hadamard_full(image_side: usize) -> Result<Tensor> {
    check_power_of_two(image_side, "Hadamard")?;
    let n = image_side * image_side;
    let mut data = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            data.push(if (r & c).count_ones() % 2 == 0 { 1.0 } else { -1.0 });
        }
    }
    Tensor::new(vec![n, n], data)
}

/// Coarsest dyadic level `k` at which `pattern` is constant on blocks of
/// `(side/2^k)²` pixels.
fn block_level(pattern: &[f64], side: usize) -> usize {
    let levels = side.trailing_zeros() as usize;
    (0..=levels)
        .find(|&k| {
            let b = side >> k;
            (0..side).all(|y| {
                (0..side).all(|x| pattern[y * side + x] == pattern[(y / b * b) * side + x / b * b])
            })
        })
        .unwrap_or(levels)
}

fn sign_changes(pattern: &[f64], side: usize) -> usize {
    let along_row = (1..side).filter(|&x| pattern[x] != pattern[x - 1]).count();
    let along_col = (1..side).filter(|&y| pattern[y * side] != pattern[(y - 1) * side]).count();
    along_row + along_col
}

/// Row permutation of a full Hadamard basis into nested shells: the first
/// `4^k` rows span every image block-averaged to `2^k × 2^k`. Inside a
/// shell the new rows are sorted by 2-D sequency, ties by original index.
pub fn russian_doll_order(full_basis: &Tensor, image_side: usize) -> Result<Vec<usize>> {
    check_power_of_two(image_side, "Russian-doll")?;
    let n = image_side * image_side;
    if full_basis.shape() != [n, n] {
        return Err(Error::dim(
            "russian_doll_order",
            format!("basis {:?} for side {image_side}", full_basis.shape()),
        ));
    }
    let mut keyed: Vec<(usize, usize, usize)> = (0..n)
        .map(|r| {
            let row = full_basis.row(r);
            (block_level(row, image_side), sign_changes(row, image_side), r)
        })
        .collect();
    keyed.sort_unstable();
    Ok(keyed.into_iter().map(|(_, _, r)| r).collect())
}

/// Seeded uniform permutation of `0..n`.
pub fn random_permutation_order(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, "random_permutation_order"));
    perm
}

/// `m` patterns with i.i.d. uniform `[0,1)` entries.
pub fn grayscale_random_patterns(m: usize, image_side: usize, seed: u64) -> Result<Tensor> {
    if m == 0 || image_side == 0 {
        return Err(Error::param("empty pattern set"));
    }
    let n = image_side * image_side;
    let mut r = rng::stream(seed, "grayscale_random_patterns");
    Tensor::new(vec![m, n], (0..m * n).map(|_| r.gen::<f64>()).collect())
}

fn permute_rows(matrix: &Tensor, order: &[usize]) -> Result<Tensor> {
    let cols = matrix.shape()[1];
    let mut data = Vec::with_capacity(order.len() * cols);
    for &r in order {
        data.extend_from_slice(matrix.row(r));
    }
    Tensor::new(vec![order.len(), cols], data)
}

impl MeasurementModel {
    /// Full Hadamard basis in the requested order.
    pub fn hadamard(image_side: usize, ordering: Ordering) -> Result<Self> {
        let basis = hadamard_full(image_side)?;
        let n = basis.shape()[0];
        let matrix = match ordering {
            Ordering::Sylvester => basis,
            Ordering::RussianDoll => permute_rows(&basis, &russian_doll_order(&basis, image_side)?)?,
            Ordering::RandomPermutation { seed } => permute_rows(&basis, &random_permutation_order(n, seed))?,
            Ordering::GrayscaleRandom { .. } => {
                return Err(Error::param("grayscale ordering is not a Hadamard family"))
            }
        };
        Ok(Self {
            kind: ModelKind::Linear(matrix),
            ordering: Some(ordering),
            image_side,
            full_basis_size: n,
        })
    }

    /// `side²` random grayscale patterns as the full basis.
    pub fn grayscale(image_side: usize, seed: u64) -> Result<Self> {
        let n = image_side * image_side;
        Ok(Self {
            kind: ModelKind::Linear(grayscale_random_patterns(n, image_side, seed)?),
            ordering: Some(Ordering::GrayscaleRandom { seed }),
            image_side,
            full_basis_size: n,
        })
    }

    pub fn autocorrelation(image_side: usize) -> Self {
        let l = 2 * image_side - 1;
        Self {
            kind: ModelKind::Autocorrelation,
            ordering: None,
            image_side,
            full_basis_size: l * l,
        }
    }

    pub fn matrix(&self) -> Result<&Tensor> {
        match &self.kind {
            ModelKind::Linear(h) => Ok(h),
            ModelKind::Autocorrelation => Err(Error::param("autocorrelation model has no matrix")),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, ModelKind::Linear(_))
    }

    /// Length of one measurement vector.
    pub fn measurement_len(&self) -> usize {
        match &self.kind {
            ModelKind::Linear(h) => h.shape()[0],
            ModelKind::Autocorrelation => self.full_basis_size,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.image_side * self.image_side
    }

    pub fn compression_ratio(&self) -> f64 {
        self.full_basis_size as f64 / self.measurement_len() as f64
    }

    /// Keeps the first `N / ratio` rows; `ratio` must divide `N`.
    pub fn compress(&self, ratio: usize) -> Result<Self> {
        let n = self.full_basis_size;
        if ratio == 0 || !n.is_multiple_of(ratio) {
            return Err(Error::param(format!("compression ratio {ratio} does not divide {n}")));
        }
        self.compress_rows(n / ratio)
    }

    /// Keeps the first `m` rows.
    pub fn compress_rows(&self, m: usize) -> Result<Self> {
        let h = self.matrix()?;
        if m == 0 || m > h.shape()[0] {
            return Err(Error::param(format!("cannot keep {m} of {} rows", h.shape()[0])));
        }
        Ok(Self {
            kind: ModelKind::Linear(h.slice_rows(0, m)?),
            ..self.clone()
        })
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = self.image_side;
        let ok = image.shape() == [s, s] || image.shape() == [s * s];
        if !ok {
            return Err(Error::dim(
                "forward_measure",
                format!("image {:?} for side {s}", image.shape()),
            ));
        }
        Ok(())
    }

    /// `g = H·vec(f)` for linear models; vectorized autocorrelation otherwise.
    pub fn forward_measure(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        match &self.kind {
            ModelKind::Linear(h) => {
                let g = h.matvec(image.data())?;
                Tensor::new(vec![g.len()], g)
            }
            ModelKind::Autocorrelation => {
                let s = self.image_side;
                let img = image.clone().reshape(&[s, s])?;
                let a = autocorrelate(&img)?;
                let n = a.len();
                a.reshape(&[n])
            }
        }
    }

    /// Copy of a linear model with its matrix perturbed per `spec`.
    pub fn perturb(&self, spec: &MismatchSpec) -> Result<Self> {
        let h = self.matrix()?;
        let mut r = rng::stream(spec.seed, "perturb_model");
        let mut out = h.clone();
        match spec.mode {
            MismatchMode::InvertElements { fraction } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::param(format!("inversion fraction {fraction} outside [0,1]")));
                }
                if fraction > 0.0 {
                    for v in out.data_mut() {
                        if r.gen::<f64>() < fraction {
                            *v = -*v;
                        }
                    }
                }
            }
            MismatchMode::GaussianPerturb { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::param(format!("perturbation sigma {sigma} must be finite and ≥ 0")));
                }
                if sigma > 0.0 {
                    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
                    for v in out.data_mut() {
                        *v += normal.sample(&mut r);
                    }
                }
            }
        }
        Ok(Self {
            kind: ModelKind::Linear(out),
            ..self.clone()
        })
    }
}

/// Adds white Gaussian noise with variance `mean(g²) / 10^(snr_db/10)`.
pub fn add_noise_snr(g: &Tensor, snr_db: f64, seed: u64) -> Result<Tensor> {
    let power = g.data().iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
    if power == 0.0 {
        return Err(Error::param("cannot set SNR of a zero-power signal"));
    }
    if !snr_db.is_finite() {
        return Err(Error::param(format!("SNR {snr_db} dB is not finite")));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    let mut r = rng::stream(seed, "add_noise_snr");
    let mut out = g.clone();
    for v in out.data_mut() {
        *v += normal.sample(&mut r);
    }
    Ok(out)
}

/// Full zero-padded autocorrelation of a `side × side` image, returned as a
/// `(2·side−1)²` grid with zero shift at the center `(side−1, side−1)`:
/// `A[s] = Σₓ f(x)·f(x+s)`.
pub fn autocorrelate(image: &Tensor) -> Result<Tensor> {
    let (s, s2) = match *image.shape() {
        [a, b] => (a, b),
        ref other => return Err(Error::dim("autocorrelate", format!("expected 2-D image, got {other:?}"))),
    };
    if s != s2 {
        return Err(Error::dim("autocorrelate", format!("non-square image {s}×{s2}")));
    }
    let l = 2 * s - 1;
    let fft = Fft2::new(l, l);
    let mut buf = vec![Complex64::new(0.0, 0.0); l * l];
    for y in 0..s {
        for x in 0..s {
            buf[y * l + x] = Complex64::new(image.data()[y * s + x], 0.0);
        }
    }
    fft.forward(&mut buf);
    buf.iter_mut().for_each(|z| *z = Complex64::new(z.norm_sqr(), 0.0));
    fft.inverse(&mut buf);
    let mut out = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..l {
            let u = (i + l - (s - 1)) % l;
            let v = (j + l - (s - 1)) % l;
            out[i * l + j] = buf[u * l + v].re;
        }
    }
    Tensor::new(vec![l, l], out)
}
