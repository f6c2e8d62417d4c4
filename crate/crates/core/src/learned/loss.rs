//! Differentiable training losses.

use super::spec::LossKind;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::SsimParams;

/// `mean((pred − target)²)`.
pub fn loss_mse(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// Mean SSIM over all window positions of every image in `B × 1 × H × W`
/// batches, built from graph ops. The window shrinks for images smaller than
/// 11 pixels (see [`SsimParams::fitted`]).
pub fn ssim_graph(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    if shape.len() != 4 || g.shape(target) != shape.as_slice() {
        return Err(Error::dim("ssim loss", format!("{:?} vs {:?}", shape, g.shape(target))));
    }
    let p = SsimParams::fitted(shape[2].min(shape[3]));
    let k = p.kernel();
    let n = p.window;
    let mx = g.filter_valid(pred, &k, n)?;
    let my = g.filter_valid(target, &k, n)?;
    let xx = g.square(pred)?;
    let yy = g.square(target)?;
    let xy = g.mul(pred, target)?;
    let exx = g.filter_valid(xx, &k, n)?;
    let eyy = g.filter_valid(yy, &k, n)?;
    let exy = g.filter_valid(xy, &k, n)?;
    let mx2 = g.square(mx)?;
    let my2 = g.square(my)?;
    let mxy = g.mul(mx, my)?;
    let vx = g.sub(exx, mx2)?;
    let vy = g.sub(eyy, my2)?;
    let cov = g.sub(exy, mxy)?;
    // ((2·μxμy + C1)(2·σxy + C2)) / ((μx² + μy² + C1)(σx² + σy² + C2))
    let a = g.scale(mxy, 2.0)?;
    let a = g.offset(a, p.c1())?;
    let b = g.scale(cov, 2.0)?;
    let b = g.offset(b, p.c2())?;
    let num = g.mul(a, b)?;
    let c = g.add(mx2, my2)?;
    let c = g.offset(c, p.c1())?;
    let d = g.add(vx, vy)?;
    let d = g.offset(d, p.c2())?;
    let den = g.mul(c, d)?;
    let map = g.div(num, den)?;
    g.mean(map)
}

/// `sqrt(mse) + alpha · (1 − SSIM)/2`.
pub fn loss_rmse_dssim(g: &mut Graph, pred: Var, target: Var, alpha: f64) -> Result<Var> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("DSSIM weight {alpha} must be finite and ≥ 0")));
    }
    let mse = loss_mse(g, pred, target)?;
    let rmse = g.sqrt(mse)?;
    if alpha == 0.0 {
        return Ok(rmse);
    }
    let s = ssim_graph(g, pred, target)?;
    // (1 − s)/2 · alpha = alpha/2 − (alpha/2)·s
    let neg = g.scale(s, -alpha / 2.0)?;
    let dssim = g.offset(neg, alpha / 2.0)?;
    g.add(rmse, dssim)
}

pub fn loss(g: &mut Graph, kind: LossKind, pred: Var, target: Var) -> Result<Var> {
    match kind {
        LossKind::Mse => loss_mse(g, pred, target),
        LossKind::RmsePlusDssim { alpha } => loss_rmse_dssim(g, pred, target, alpha),
    }
}
