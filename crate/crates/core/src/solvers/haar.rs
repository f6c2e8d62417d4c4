//! Orthonormal multi-level 2-D Haar transform.
//!
//! Coefficients use the usual pyramid layout: after the full transform the
//! single approximation coefficient sits at index 0 and each level's detail
//! bands fill the remaining quadrants.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn side_of(image: &Tensor) -> Result<usize> {
    let side = match *image.shape() {
        [a, b] if a == b => a,
        [n] => {
            let s = (n as f64).sqrt().round() as usize;
            if s * s != n {
                return Err(Error::dim("haar", format!("{n} values are not a square image")));
            }
            s
        }
        ref other => return Err(Error::dim("haar", format!("expected square image, got {other:?}"))),
    };
    if !side.is_power_of_two() {
        return Err(Error::param(format!("Haar transform needs a power-of-two side, got {side}")));
    }
    Ok(side)
}

fn forward_1d(buf: &mut [f64], scratch: &mut [f64]) {
    let half = buf.len() / 2;
    for i in 0..half {
        scratch[i] = (buf[2 * i] + buf[2 * i + 1]) * FRAC_1_SQRT_2;
        scratch[half + i] = (buf[2 * i] - buf[2 * i + 1]) * FRAC_1_SQRT_2;
    }
    buf.copy_from_slice(&scratch[..buf.len()]);
}

fn inverse_1d(buf: &mut [f64], scratch: &mut [f64]) {
    let half = buf.len() / 2;
    for i in 0..half {
        scratch[2 * i] = (buf[i] + buf[half + i]) * FRAC_1_SQRT_2;
        scratch[2 * i + 1] = (buf[i] - buf[half + i]) * FRAC_1_SQRT_2;
    }
    buf.copy_from_slice(&scratch[..buf.len()]);
}

/// In-place transform of a row-major `side × side` buffer.
pub(crate) fn dwt_in_place(data: &mut [f64], side: usize) {
    let mut line = vec![0.0; side];
    let mut scratch = vec![0.0; side];
    let mut len = side;
    while len > 1 {
        for r in 0..len {
            forward_1d(&mut data[r * side..r * side + len], &mut scratch);
        }
        for c in 0..len {
            for r in 0..len {
                line[r] = data[r * side + c];
            }
            forward_1d(&mut line[..len], &mut scratch);
            for r in 0..len {
                data[r * side + c] = line[r];
            }
        }
        len /= 2;
    }
}

pub(crate) fn idwt_in_place(data: &mut [f64], side: usize) {
    let mut line = vec![0.0; side];
    let mut scratch = vec![0.0; side];
    let mut len = 2;
    while len <= side {
        for c in 0..len {
            for r in 0..len {
                line[r] = data[r * side + c];
            }
            inverse_1d(&mut line[..len], &mut scratch);
            for r in 0..len {
                data[r * side + c] = line[r];
            }
        }
        for r in 0..len {
            inverse_1d(&mut data[r * side..r * side + len], &mut scratch);
        }
        len *= 2;
    }
}

/// Full-depth orthonormal Haar analysis. Accepts `side × side` or a
/// vectorized `side²` image and preserves the input shape.
pub fn haar_dwt(image: &Tensor) -> Result<Tensor> {
    let side = side_of(image)?;
    let mut out = image.clone();
    dwt_in_place(out.data_mut(), side);
    Ok(out)
}

/// Inverse of [`haar_dwt`].
pub fn haar_idwt(coefficients: &Tensor) -> Result<Tensor> {
    let side = side_of(coefficients)?;
    let mut out = coefficients.clone();
    idwt_in_place(out.data_mut(), side);
    Ok(out)
}
