//! Seeded procedural image generators.

use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::tensor::Tensor;

type Stroke = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, segments: usize) -> Stroke {
    (0..=segments)
        .map(|i| {
            let t = i as f64 / segments as f64 * std::f64::consts::TAU;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Polylines for the ten digit glyphs on a unit box, `y` pointing down.
fn glyph(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.27, 0.4, 16)],
        1 => vec![vec![(0.35, 0.25), (0.52, 0.1), (0.52, 0.9)]],
        2 => vec![vec![(0.25, 0.3), (0.35, 0.14), (0.55, 0.1), (0.72, 0.2), (0.72, 0.38), (0.25, 0.9), (0.78, 0.9)]],
        3 => vec![vec![(0.25, 0.13), (0.72, 0.13), (0.45, 0.44), (0.7, 0.58), (0.72, 0.78), (0.5, 0.9), (0.25, 0.84)]],
        4 => vec![vec![(0.66, 0.9), (0.66, 0.1), (0.2, 0.64), (0.82, 0.64)]],
        5 => vec![vec![
            (0.75, 0.1),
            (0.32, 0.1),
            (0.28, 0.45),
            (0.55, 0.41),
            (0.72, 0.55),
            (0.72, 0.78),
            (0.5, 0.9),
            (0.25, 0.84),
        ]],
        6 => vec![vec![
            (0.7, 0.12),
            (0.45, 0.2),
            (0.3, 0.45),
            (0.28, 0.7),
            (0.4, 0.88),
            (0.6, 0.88),
            (0.72, 0.7),
            (0.6, 0.52),
            (0.4, 0.52),
            (0.3, 0.65),
        ]],
        7 => vec![vec![(0.22, 0.1), (0.78, 0.1), (0.45, 0.9)]],
        8 => vec![ellipse(0.5, 0.3, 0.2, 0.18, 12), ellipse(0.5, 0.69, 0.24, 0.21, 12)],
        _ => vec![ellipse(0.5, 0.33, 0.22, 0.2, 12), vec![(0.72, 0.33), (0.6, 0.9)]],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Rasterizes pixel-space polylines with half-width `radius` and a one-pixel
/// antialiased edge, taking the max with existing content.
fn draw_strokes(img: &mut [f64], side: usize, strokes: &[Stroke], radius: f64, level: f64) {
    for y in 0..side {
        for x in 0..side {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let mut d = f64::INFINITY;
            for s in strokes {
                for w in s.windows(2) {
                    d = d.min(segment_distance(p, w[0], w[1]));
                }
            }
            let v = level * (radius + 0.5 - d).clamp(0.0, 1.0);
            let cell = &mut img[y * side + x];
            *cell = cell.max(v);
        }
    }
}

/// One digit-like glyph, roughly centered and scaled like handwritten digit
/// datasets (glyph box ≈ 70 % of the frame).
pub fn render_digit(digit: u8, side: usize, rng: &mut Rng) -> Tensor {
    let scale = side as f64 * rng.gen_range(0.62..0.74);
    let angle: f64 = rng.gen_range(-0.15..0.15);
    let shear = rng.gen_range(-0.15..0.15);
    let (ox, oy) = (rng.gen_range(-0.04..0.04) * side as f64, rng.gen_range(-0.04..0.04) * side as f64);
    let radius = (side as f64 * rng.gen_range(0.045..0.07)).max(0.5);
    let (c, s) = (angle.cos(), angle.sin());
    let center = side as f64 / 2.0;
    let strokes: Vec<Stroke> = glyph(digit % 10)
        .into_iter()
        .map(|st| {
            st.into_iter()
                .map(|(u, v)| {
                    let (u, v) = (u - 0.5 + shear * (v - 0.5), v - 0.5);
                    let (u, v) = (c * u - s * v, s * u + c * v);
                    (center + ox + scale * u, center + oy + scale * v)
                })
                .collect()
        })
        .collect();
    let mut img = vec![0.0; side * side];
    draw_strokes(&mut img, side, &strokes, radius, 1.0);
    Tensor::new(vec![side, side], img).expect("finite raster")
}

/// `count` digit glyphs with labels cycling through 0–9 in a seeded order.
pub fn synth_digits(count: usize, side: usize, seed: u64) -> (Vec<Tensor>, Vec<u8>) {
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let mut r = rng::stream(rng::child_seed(seed, "synth_digits", i as u64), "glyph");
        let d = r.gen_range(0..10u8);
        images.push(render_digit(d, side, &mut r));
        labels.push(d);
    }
    (images, labels)
}

fn shape_image(side: usize, r: &mut Rng) -> Tensor {
    let sf = side as f64;
    // Smooth background ramp.
    let base = r.gen_range(0.1..0.6);
    let (gx, gy) = (r.gen_range(-0.3..0.3), r.gen_range(-0.3..0.3));
    let mut img: Vec<f64> = (0..side * side)
        .map(|i| {
            let (y, x) = ((i / side) as f64 / sf - 0.5, (i % side) as f64 / sf - 0.5);
            base + gx * x + gy * y
        })
        .collect();
    for _ in 0..r.gen_range(1..=4) {
        let level = r.gen_range(0.0..1.0);
        match r.gen_range(0..3) {
            0 => {
                let (x0, y0) = (r.gen_range(0.0..sf * 0.8), r.gen_range(0.0..sf * 0.8));
                let (w, h) = (r.gen_range(sf * 0.15..sf * 0.6), r.gen_range(sf * 0.15..sf * 0.6));
                for y in 0..side {
                    for x in 0..side {
                        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                        if px >= x0 && px < x0 + w && py >= y0 && py < y0 + h {
                            img[y * side + x] = level;
                        }
                    }
                }
            }
            1 => {
                let (cx, cy) = (r.gen_range(0.0..sf), r.gen_range(0.0..sf));
                let rad = r.gen_range(sf * 0.1..sf * 0.35);
                for y in 0..side {
                    for x in 0..side {
                        let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                        let a = (rad + 0.5 - d).clamp(0.0, 1.0);
                        let cell = &mut img[y * side + x];
                        *cell = (1.0 - a) * *cell + a * level;
                    }
                }
            }
            _ => {
                let pts: Stroke = (0..r.gen_range(2..=4))
                    .map(|_| (r.gen_range(0.0..sf), r.gen_range(0.0..sf)))
                    .collect();
                let radius = (sf * r.gen_range(0.03..0.08)).max(0.5);
                draw_strokes(&mut img, side, &[pts], radius, level.max(0.5));
            }
        }
    }
    let img: Vec<f64> = img.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::new(vec![side, side], img).expect("finite raster")
}

/// Natural-image stand-in: ramps, rectangles, discs and strokes in `[0, 1]`.
pub fn synth_shapes(count: usize, side: usize, seed: u64) -> Vec<Tensor> {
    (0..count)
        .map(|i| {
            let mut r = rng::stream(rng::child_seed(seed, "synth_shapes", i as u64), "scene");
            shape_image(side, &mut r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_deterministic_and_bounded() {
        let a = synth_shapes(20, 16, 3);
        assert_eq!(a, synth_shapes(20, 16, 3));
        assert_ne!(a, synth_shapes(20, 16, 4));
        assert!(a.iter().all(|t| t.min() >= 0.0 && t.max() <= 1.0));
    }

    #[test]
    fn digits_are_centered_strokes() {
        let (imgs, labels) = synth_digits(30, 16, 1);
        assert_eq!(labels.len(), 30);
        for img in &imgs {
            assert!(img.max() > 0.9 && img.min() == 0.0);
            // Border row is blank.
            assert!(img.data()[..16].iter().all(|&v| v == 0.0));
        }
    }
}
