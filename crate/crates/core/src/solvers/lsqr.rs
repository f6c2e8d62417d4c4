//! LSQR for `min ‖A x − b‖² + damp²‖x‖²` (Paige & Saunders bidiagonalization).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Matrix-free access to `A` and `Aᵀ`.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64>;
}

impl LinearOperator for Tensor {
    fn rows(&self) -> usize {
        self.shape()[0]
    }

    fn cols(&self) -> usize {
        self.shape()[1]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matvec(x).expect("operator extents checked by caller")
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.matvec_t(y).expect("operator extents checked by caller")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsqrConfig {
    pub atol: f64,
    pub btol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for LsqrConfig {
    fn default() -> Self {
        Self {
            atol: 1e-8,
            btol: 1e-8,
            max_iters: 2000,
            damping: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsqrStop {
    /// `b` is zero, so `x = 0` is exact.
    ZeroRhs,
    /// `‖r‖` small relative to `btol + atol·‖A‖‖x‖/‖b‖`.
    Residual,
    /// `‖Aᵀr‖` small: least-squares optimality.
    Normal,
    MaxIters,
}

#[derive(Clone, Debug)]
pub struct LsqrOutput {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub stop: LsqrStop,
    /// Running estimate of `‖A x_k − b‖` (undamped part), one per iteration.
    pub residual_history: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scale(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

impl LsqrConfig {
    fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0 && self.btol > 0.0) {
            return Err(Error::param("LSQR tolerances must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("LSQR needs max_iters ≥ 1"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::param("LSQR damping must be finite and ≥ 0"));
        }
        Ok(())
    }
}

/// Runs LSQR from `x₀ = 0`. For consistent underdetermined systems this
/// converges to the minimum-norm solution.
pub fn lsqr<A: LinearOperator + ?Sized>(a: &A, b: &[f64], cfg: &LsqrConfig) -> Result<LsqrOutput> {
    cfg.validate()?;
    if b.len() != a.rows() {
        return Err(Error::dim("lsqr", format!("rhs length {} for {} rows", b.len(), a.rows())));
    }
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("lsqr right-hand side".into()));
    }
    let n = a.cols();
    let mut x = vec![0.0; n];
    let mut u = b.to_vec();
    let mut beta = norm(&u);
    if beta == 0.0 {
        return Ok(LsqrOutput {
            x,
            iterations: 0,
            stop: LsqrStop::ZeroRhs,
            residual_history: vec![],
        });
    }
    scale(&mut u, 1.0 / beta);
    let mut v = a.apply_transpose(&u);
    let mut alpha = norm(&v);
    if !alpha.is_finite() {
        return Err(Error::NonFinite("lsqr operator".into()));
    }
    if alpha == 0.0 {
        // b is orthogonal to range(A) (or A = 0): x = 0 is the LS solution.
        if a.apply_transpose(&vec![1.0; a.rows()]).iter().all(|&v| v == 0.0) {
            return Err(Error::Solver("lsqr operator is the zero matrix".into()));
        }
        return Ok(LsqrOutput {
            x,
            iterations: 0,
            stop: LsqrStop::Normal,
            residual_history: vec![beta],
        });
    }
    scale(&mut v, 1.0 / alpha);
    let mut w = v.clone();

    let damp = cfg.damping;
    let bnorm = beta;
    let mut rhobar = alpha;
    let mut phibar = beta;
    let mut anorm_sq = 0.0;
    let mut res2 = 0.0;
    let mut xxnorm = 0.0;
    let mut z = 0.0;
    let mut cs2 = -1.0;
    let mut sn2 = 0.0;
    let mut history = Vec::new();
    let mut stop = LsqrStop::MaxIters;
    let mut iterations = 0;

    for it in 1..=cfg.max_iters {
        iterations = it;
        // Bidiagonalization step.
        let av = a.apply(&v);
        for (ui, avi) in u.iter_mut().zip(&av) {
            *ui = avi - alpha * *ui;
        }
        beta = norm(&u);
        if beta > 0.0 {
            scale(&mut u, 1.0 / beta);
            anorm_sq += alpha * alpha + beta * beta + damp * damp;
            let atu = a.apply_transpose(&u);
            for (vi, ai) in v.iter_mut().zip(&atu) {
                *vi = ai - beta * *vi;
            }
            alpha = norm(&v);
            if alpha > 0.0 {
                scale(&mut v, 1.0 / alpha);
            }
        } else {
            anorm_sq += alpha * alpha + damp * damp;
        }

        // Eliminate the damping term.
        let rhobar1 = (rhobar * rhobar + damp * damp).sqrt();
        let cs1 = rhobar / rhobar1;
        let sn1 = damp / rhobar1;
        let psi = sn1 * phibar;
        phibar *= cs1;

        // Plane rotation to remove the subdiagonal beta.
        let rho = (rhobar1 * rhobar1 + beta * beta).sqrt();
        let cs = rhobar1 / rho;
        let sn = beta / rho;
        let theta = sn * alpha;
        rhobar = -cs * alpha;
        let phi = cs * phibar;
        phibar *= sn;

        let t1 = phi / rho;
        let t2 = -theta / rho;
        for ((xi, wi), vi) in x.iter_mut().zip(w.iter_mut()).zip(&v) {
            *xi += t1 * *wi;
            *wi = vi + t2 * *wi;
        }

        // Norm estimates for the stopping rules.
        let delta = sn2 * rho;
        let gambar = -cs2 * rho;
        let rhs = phi - delta * z;
        let zbar = rhs / gambar;
        let xnorm = (xxnorm + zbar * zbar).sqrt();
        let gamma = (gambar * gambar + theta * theta).sqrt();
        cs2 = gambar / gamma;
        sn2 = theta / gamma;
        z = rhs / gamma;
        xxnorm += z * z;

        res2 += psi * psi;
        let rnorm = (phibar * phibar + res2).sqrt();
        let anorm = anorm_sq.sqrt();
        let arnorm = alpha * (cs * phibar).abs();
        history.push(phibar.abs());
        if !rnorm.is_finite() || !xnorm.is_finite() {
            return Err(Error::Solver("lsqr produced non-finite iterate".into()));
        }

        let test1 = rnorm / bnorm;
        let test2 = if rnorm > 0.0 { arnorm / (anorm * rnorm) } else { 0.0 };
        let rtol = cfg.btol + cfg.atol * anorm * xnorm / bnorm;
        if test1 <= rtol {
            stop = LsqrStop::Residual;
            break;
        }
        if test2 <= cfg.atol {
            stop = LsqrStop::Normal;
            break;
        }
    }
    Ok(LsqrOutput {
        x,
        iterations,
        stop,
        residual_history: history,
    })
}

/// Least-squares image estimate `argmin ‖H f − g‖₂` for a dense operator.
pub fn lsqr_solve(h: &Tensor, g: &Tensor, cfg: &LsqrConfig) -> Result<Tensor> {
    if h.rank() != 2 {
        return Err(Error::dim("lsqr_solve", format!("operator shape {:?}", h.shape())));
    }
    h.ensure_finite("lsqr operator")?;
    let out = lsqr(h, g.data(), cfg)?;
    Tensor::new(vec![out.x.len()], out.x)
}
