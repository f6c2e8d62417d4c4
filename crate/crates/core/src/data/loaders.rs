//! Readers for the IDX (handwritten digits) and STL-10 binary formats, plus
//! resampling helpers.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const STL_SIDE: usize = 96;
/// Bytes per STL-10 record: three 96×96 channel planes.
pub const STL10_RECORD: usize = 3 * STL_SIDE * STL_SIDE;

fn be_u32(buf: &[u8], at: usize) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Square grayscale images from IDX bytes, scaled to `[0, 1]`.
pub fn parse_idx_images(buf: &[u8]) -> Result<Vec<Tensor>> {
    let magic = be_u32(buf, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(buf, 4)? as usize;
    let rows = be_u32(buf, 8)? as usize;
    let cols = be_u32(buf, 12)? as usize;
    let per = rows * cols;
    let body = &buf[16..];
    if body.len() < n * per {
        return Err(Error::Format(format!("IDX body has {} bytes, header implies {}", body.len(), n * per)));
    }
    Ok((0..n)
        .map(|i| {
            let data = body[i * per..(i + 1) * per].iter().map(|&b| b as f64 / 255.0).collect();
            Tensor::new(vec![rows, cols], data).expect("bytes are finite")
        })
        .collect())
}

pub fn parse_idx_labels(buf: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(buf, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(buf, 4)? as usize;
    buf.get(8..8 + n)
        .map(<[u8]>::to_vec)
        .ok_or_else(|| Error::Format("truncated IDX labels".into()))
}

#[derive(Clone, Debug)]
pub struct IdxImages {
    pub images: Vec<Tensor>,
    pub labels: Option<Vec<u8>>,
}

/// Loads IDX images (and optional labels), resizing each to `side` when given.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>, side: Option<usize>) -> Result<IdxImages> {
    let mut images = parse_idx_images(&read(images_path)?)?;
    if let Some(s) = side {
        images = images.iter().map(|t| resize_bilinear(t, s)).collect::<Result<_>>()?;
    }
    let labels = match labels_path {
        Some(p) => {
            let l = parse_idx_labels(&read(p)?)?;
            if l.len() != images.len() {
                return Err(Error::Format(format!("{} labels for {} images", l.len(), images.len())));
            }
            Some(l)
        }
        None => None,
    };
    Ok(IdxImages { images, labels })
}

/// Grayscale images from STL-10 binary bytes. Each record stores R, G and B
/// planes in column-major order.
pub fn parse_stl10(buf: &[u8], side: Option<usize>) -> Result<Vec<Tensor>> {
    if !buf.len().is_multiple_of(STL10_RECORD) {
        return Err(Error::Format(format!(
            "STL-10 file size {} is not a multiple of {STL10_RECORD}",
            buf.len()
        )));
    }
    let plane = STL_SIDE * STL_SIDE;
    buf.chunks_exact(STL10_RECORD)
        .map(|rec| {
            let mut gray = vec![0.0; plane];
            for row in 0..STL_SIDE {
                for col in 0..STL_SIDE {
                    let k = col * STL_SIDE + row;
                    let (r, g, b) = (rec[k] as f64, rec[plane + k] as f64, rec[2 * plane + k] as f64);
                    gray[row * STL_SIDE + col] = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
                }
            }
            let t = Tensor::new(vec![STL_SIDE, STL_SIDE], gray)?;
            match side {
                Some(s) if s != STL_SIDE => resize_area_or_bilinear(&t, s),
                _ => Ok(t),
            }
        })
        .collect()
}

pub fn load_stl10(path: &Path, side: Option<usize>) -> Result<Vec<Tensor>> {
    parse_stl10(&read(path)?, side)
}

fn dims(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        ref other => Err(Error::dim("resize", format!("expected 2-D image, got {other:?}"))),
    }
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(t: &Tensor, side: usize) -> Result<Tensor> {
    let (h, w) = dims(t)?;
    if side == 0 {
        return Err(Error::param("resize target side must be positive"));
    }
    let src = t.data();
    let sample = |i: usize, len: usize| {
        let pos = ((i as f64 + 0.5) * len as f64 / side as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        let (y0, y1, fy) = sample(y, h);
        for x in 0..side {
            let (x0, x1, fx) = sample(x, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Tensor::new(vec![side, side], out)
}

/// Box-filter downsampling when the factor is an integer, bilinear otherwise.
pub fn resize_area_or_bilinear(t: &Tensor, side: usize) -> Result<Tensor> {
    let (h, w) = dims(t)?;
    if h != w || side == 0 || side > h || h % side != 0 {
        return resize_bilinear(t, side);
    }
    let f = h / side;
    let src = t.data();
    let norm = (f * f) as f64;
    let out = (0..side * side)
        .map(|i| {
            let (y, x) = (i / side, i % side);
            let mut acc = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    acc += src[(y * f + dy) * w + x * f + dx];
                }
            }
            acc / norm
        })
        .collect();
    Tensor::new(vec![side, side], out)
}
