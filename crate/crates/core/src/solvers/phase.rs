//! Fourier phase retrieval from an autocorrelation (error reduction / HIO)
//! and translation/twin-aware registration for scoring its output.

use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Gerchberg-Saxton style error reduction.
    ErrorReduction,
    /// Fienup hybrid input-output, finished with error-reduction sweeps.
    Hio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseRetrievalConfig {
    pub iters: usize,
    pub restarts: usize,
    pub mode: RetrievalMode,
    pub hio_beta: f64,
    /// Binary mask over the `(2s−1)²` canvas; `None` selects the centered
    /// `s × s` block.
    pub support: Option<Vec<bool>>,
    pub nonnegativity: bool,
    pub seed: u64,
}

impl Default for PhaseRetrievalConfig {
    fn default() -> Self {
        Self {
            iters: 1000,
            restarts: 5,
            mode: RetrievalMode::ErrorReduction,
            hio_beta: 0.9,
            support: None,
            nonnegativity: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PhaseRetrievalOutput {
    /// Cropped `s × s` estimate from the winning restart.
    pub image: Tensor,
    pub best_restart: usize,
    /// Relative Fourier-magnitude residual of every restart.
    pub restart_residuals: Vec<f64>,
}

const HIO_FINISH_ER: usize = 50;

/// Relative tolerance for negative power-spectrum values produced by rounding.
const SPECTRUM_TOL: f64 = 1e-8;

fn canvas_side(autocorr: &Tensor) -> Result<(usize, usize)> {
    match *autocorr.shape() {
        [a, b] if a == b && a % 2 == 1 => Ok((a, a.div_ceil(2))),
        ref other => Err(Error::dim(
            "phase_retrieve",
            format!("autocorrelation must be (2s−1)×(2s−1), got {other:?}"),
        )),
    }
}

/// Fourier magnitude `|F f|` on the `(2s−1)²` grid implied by a centered
/// autocorrelation.
pub fn fourier_magnitude(autocorr: &Tensor) -> Result<Vec<f64>> {
    let (l, s) = canvas_side(autocorr)?;
    let fft = Fft2::new(l, l);
    let mut buf = vec![Complex64::new(0.0, 0.0); l * l];
    // Undo the centering so zero shift sits at index (0, 0).
    for i in 0..l {
        for j in 0..l {
            let u = (i + l - (s - 1)) % l;
            let v = (j + l - (s - 1)) % l;
            buf[u * l + v] = Complex64::new(autocorr.data()[i * l + j], 0.0);
        }
    }
    fft.forward(&mut buf);
    let peak = buf.iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
    let mut mag = Vec::with_capacity(l * l);
    for z in &buf {
        if z.re < -SPECTRUM_TOL * peak.max(1e-300) {
            return Err(Error::param(format!(
                "autocorrelation has a negative power spectrum value {:.3e}",
                z.re
            )));
        }
        mag.push(z.re.max(0.0).sqrt());
    }
    Ok(mag)
}

fn default_support(l: usize, s: usize) -> Vec<bool> {
    let off = (l - s) / 2;
    (0..l * l)
        .map(|idx| {
            let (i, j) = (idx / l, idx % l);
            (off..off + s).contains(&i) && (off..off + s).contains(&j)
        })
        .collect()
}

struct Retriever<'a> {
    fft: Fft2,
    mag: &'a [f64],
    support: &'a [bool],
    nonneg: bool,
    buf: Vec<Complex64>,
}

impl Retriever<'_> {
    /// Object-domain values after imposing the Fourier magnitude on `g`.
    fn fourier_project(&mut self, g: &[f64]) -> Vec<f64> {
        for (b, &v) in self.buf.iter_mut().zip(g) {
            *b = Complex64::new(v, 0.0);
        }
        self.fft.forward(&mut self.buf);
        for (b, &m) in self.buf.iter_mut().zip(self.mag) {
            let a = b.norm();
            *b = if a > 0.0 { *b * (m / a) } else { Complex64::new(m, 0.0) };
        }
        self.fft.inverse(&mut self.buf);
        self.buf.iter().map(|z| z.re).collect()
    }

    fn admissible(&self, idx: usize, v: f64) -> bool {
        self.support[idx] && (!self.nonneg || v >= 0.0)
    }

    fn er_step(&mut self, g: &mut [f64]) {
        let p = self.fourier_project(g);
        for (idx, (gi, pi)) in g.iter_mut().zip(p).enumerate() {
            *gi = if self.admissible(idx, pi) { pi } else { 0.0 };
        }
    }

    fn hio_step(&mut self, g: &mut [f64], beta: f64) {
        let p = self.fourier_project(g);
        for (idx, (gi, pi)) in g.iter_mut().zip(p).enumerate() {
            *gi = if self.admissible(idx, pi) { pi } else { *gi - beta * pi };
        }
    }

    /// `‖ |F g| − m ‖ / ‖m‖`.
    fn residual(&mut self, g: &[f64]) -> f64 {
        for (b, &v) in self.buf.iter_mut().zip(g) {
            *b = Complex64::new(v, 0.0);
        }
        self.fft.forward(&mut self.buf);
        let (mut num, mut den) = (0.0, 0.0);
        for (b, &m) in self.buf.iter().zip(self.mag) {
            num += (b.norm() - m).powi(2);
            den += m * m;
        }
        (num / den.max(1e-300)).sqrt()
    }
}

/// Recovers a nonnegative `s × s` object from its `(2s−1)²` autocorrelation.
/// The estimate is defined only up to translation and 180° rotation.
pub fn phase_retrieve(autocorr: &Tensor, cfg: &PhaseRetrievalConfig) -> Result<PhaseRetrievalOutput> {
    if cfg.restarts == 0 {
        return Err(Error::param("phase retrieval needs at least one restart"));
    }
    if cfg.iters == 0 {
        return Err(Error::param("phase retrieval needs iters ≥ 1"));
    }
    let (l, s) = canvas_side(autocorr)?;
    let mag = fourier_magnitude(autocorr)?;
    let support = match &cfg.support {
        Some(mask) if mask.len() == l * l => mask.clone(),
        Some(mask) => {
            return Err(Error::dim("phase_retrieve", format!("support has {} cells, canvas {}", mask.len(), l * l)))
        }
        None => default_support(l, s),
    };
    let mut r = Retriever {
        fft: Fft2::new(l, l),
        mag: &mag,
        support: &support,
        nonneg: cfg.nonnegativity,
        buf: vec![Complex64::new(0.0, 0.0); l * l],
    };
    // Scale random starts to the object's total mass, |F f|(0) = Σ f.
    let mass = mag[0];
    let cells = support.iter().filter(|&&b| b).count().max(1) as f64;

    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut residuals = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let mut rg = rng::stream(rng::child_seed(cfg.seed, "phase_retrieve", restart as u64), "init");
        let mut g: Vec<f64> = support
            .iter()
            .map(|&inside| if inside { rg.gen::<f64>() * 2.0 * mass / cells } else { 0.0 })
            .collect();
        match cfg.mode {
            RetrievalMode::ErrorReduction => {
                for _ in 0..cfg.iters {
                    r.er_step(&mut g);
                }
            }
            RetrievalMode::Hio => {
                for _ in 0..cfg.iters {
                    r.hio_step(&mut g, cfg.hio_beta);
                }
                for _ in 0..HIO_FINISH_ER {
                    r.er_step(&mut g);
                }
            }
        }
        let res = r.residual(&g);
        residuals.push(res);
        let better = match &best {
            None => true,
            Some((b, _, _)) => res < *b,
        };
        if better {
            best = Some((res, restart, g));
        }
    }
    let (_, best_restart, g) = best.expect("at least one restart");
    let off = (l - s) / 2;
    let mut img = Vec::with_capacity(s * s);
    if cfg.support.is_none() {
        for i in 0..s {
            img.extend_from_slice(&g[(off + i) * l + off..(off + i) * l + off + s]);
        }
    } else {
        // Custom support: take the s×s window with the most energy.
        let (bi, bj) = best_window(&g, l, s);
        for i in 0..s {
            for j in 0..s {
                img.push(g[((bi + i) % l) * l + (bj + j) % l]);
            }
        }
    }
    Ok(PhaseRetrievalOutput {
        image: Tensor::new(vec![s, s], img)?,
        best_restart,
        restart_residuals: residuals,
    })
}

fn best_window(g: &[f64], l: usize, s: usize) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_e = f64::NEG_INFINITY;
    for bi in 0..l {
        for bj in 0..l {
            let mut e = 0.0;
            for i in 0..s {
                for j in 0..s {
                    e += g[((bi + i) % l) * l + (bj + j) % l].powi(2);
                }
            }
            if e > best_e {
                best_e = e;
                best = (bi, bj);
            }
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Registration {
    pub aligned: Tensor,
    /// Cyclic shift `(dy, dx)` applied after the optional rotation.
    pub shift: (usize, usize),
    pub rotated: bool,
    pub correlation: f64,
    /// Best correlation reachable with the other orientation.
    pub alternate_correlation: f64,
}

fn transformed(est: &[f64], s: usize, rotated: bool, dy: usize, dx: usize) -> Vec<f64> {
    let mut out = vec![0.0; s * s];
    for y in 0..s {
        for x in 0..s {
            let (sy, sx) = if rotated { (s - 1 - y, s - 1 - x) } else { (y, x) };
            out[((sy + dy) % s) * s + (sx + dx) % s] = est[y * s + x];
        }
    }
    out
}

/// Aligns `estimate` to `reference` over every cyclic translation, with and
/// without a 180° rotation, maximizing their cross-correlation. The identity
/// transform wins ties.
pub fn register_to_reference(estimate: &Tensor, reference: &Tensor) -> Result<Registration> {
    let s = match *reference.shape() {
        [a, b] if a == b => a,
        ref other => return Err(Error::dim("register_to_reference", format!("reference {other:?}"))),
    };
    if estimate.shape() != reference.shape() {
        return Err(Error::dim(
            "register_to_reference",
            format!("{:?} vs {:?}", estimate.shape(), reference.shape()),
        ));
    }
    let est = estimate.data();
    let rf = reference.data();
    let mut best = [(f64::NEG_INFINITY, 0usize, 0usize); 2];
    for (oi, rotated) in [false, true].into_iter().enumerate() {
        for dy in 0..s {
            for dx in 0..s {
                let mut c = 0.0;
                for y in 0..s {
                    for x in 0..s {
                        let (sy, sx) = if rotated { (s - 1 - y, s - 1 - x) } else { (y, x) };
                        c += est[y * s + x] * rf[((sy + dy) % s) * s + (sx + dx) % s];
                    }
                }
                if c > best[oi].0 {
                    best[oi] = (c, dy, dx);
                }
            }
        }
    }
    let rotated = best[1].0 > best[0].0;
    let (c, dy, dx) = best[rotated as usize];
    Ok(Registration {
        aligned: Tensor::new(vec![s, s], transformed(est, s, rotated, dy, dx))?,
        shift: (dy, dx),
        rotated,
        correlation: c,
        alternate_correlation: best[!rotated as usize].0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::autocorrelate;

    fn glyph() -> Tensor {
        let mut t = Tensor::zeros(&[6, 6]);
        for &(y, x, v) in &[(1, 1, 1.0), (1, 2, 0.8), (2, 2, 0.6), (3, 2, 0.9), (4, 3, 0.3), (2, 4, 0.5)] {
            t.data_mut()[y * 6 + x] = v;
        }
        t
    }

    #[test]
    fn registration_identity_shift_rotation() {
        let r = glyph();
        let reg = register_to_reference(&r, &r).unwrap();
        assert_eq!((reg.shift, reg.rotated), ((0, 0), false));
        assert_eq!(reg.aligned, r);

        let shifted = Tensor::from_fn(&[6, 6], |i| {
            let (y, x) = (i / 6, i % 6);
            r.data()[((y + 6 - 3) % 6) * 6 + (x + 6 - 5) % 6]
        });
        let reg = register_to_reference(&shifted, &r).unwrap();
        assert_eq!(reg.aligned, r);
        assert!(!reg.rotated);

        let rot = Tensor::from_fn(&[6, 6], |i| r.data()[35 - i]);
        let reg = register_to_reference(&rot, &r).unwrap();
        assert!(reg.rotated);
        assert_eq!(reg.aligned, r);
    }

    #[test]
    fn delta_object_is_recovered_as_a_point() {
        let mut f = Tensor::zeros(&[8, 8]);
        f.data_mut()[3 * 8 + 5] = 1.0;
        let a = autocorrelate(&f).unwrap();
        let out = phase_retrieve(&a, &PhaseRetrievalConfig::default()).unwrap();
        let e: Vec<f64> = out.image.data().iter().map(|v| v * v).collect();
        let total: f64 = e.iter().sum();
        let peak = e.iter().cloned().fold(0.0, f64::max);
        assert!(peak >= 0.9 * total, "peak {peak} of {total}");
    }

    #[test]
    fn best_restart_has_lowest_residual() {
        let a = autocorrelate(&glyph()).unwrap();
        let cfg = PhaseRetrievalConfig { iters: 100, restarts: 4, seed: 9, ..Default::default() };
        let out = phase_retrieve(&a, &cfg).unwrap();
        let best = out.restart_residuals[out.best_restart];
        assert!(out.restart_residuals.iter().all(|&r| best <= r));
    }

    #[test]
    fn rejects_even_canvas_and_zero_restarts() {
        assert!(phase_retrieve(&Tensor::ones(&[4, 4]), &PhaseRetrievalConfig::default()).is_err());
        let a = autocorrelate(&glyph()).unwrap();
        let cfg = PhaseRetrievalConfig { restarts: 0, ..Default::default() };
        assert!(phase_retrieve(&a, &cfg).is_err());
    }

    #[test]
    fn negative_spectrum_is_rejected() {
        let mut a = Tensor::zeros(&[5, 5]);
        // A negative center is not an autocorrelation of any real image.
        a.data_mut()[12] = -1.0;
        assert!(matches!(fourier_magnitude(&a), Err(Error::Parameter(_))));
    }
}
