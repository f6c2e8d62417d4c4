//! Shared oracles for the integration tests.
#![allow(dead_code)]

use rand::Rng;
use spix::autodiff::{BatchNormConfig, Graph, RunningStats, Var};
use spix::rng;
use spix::Tensor;

pub type Build = dyn Fn(&mut Graph, &[Var]) -> spix::Result<Var>;

/// Worst relative error between backprop and central differences for the
/// scalar `Σ wᵢ·outᵢ` with fixed random weights `w`. The relative error
/// uses a floor of 1e-3 on the denominator so that near-zero gradients are
/// compared absolutely.
pub fn gradcheck(build: &Build, inputs: &[Tensor], seed: u64) -> f64 {
    let eval = |vals: &[Tensor], training_grads: bool| -> (f64, Vec<Option<Tensor>>) {
        let mut g = Graph::new(true);
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars).expect("forward");
        let n = g.value(out).len();
        let mut r = rng::stream(seed, "gradcheck_weights");
        let w = Tensor::new(g.shape(out).to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let wv = g.constant(w);
        let prod = g.mul(out, wv).unwrap();
        let loss = g.sum(prod).unwrap();
        let value = g.value(loss).data()[0];
        if !training_grads {
            return (value, Vec::new());
        }
        g.backward(loss).unwrap();
        (value, vars.iter().map(|&v| g.grad(v)).collect())
    };
    let (_, grads) = eval(inputs, true);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads[k].clone().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Uniform values in `[lo, hi)` whose magnitude is at least `gap`, so
/// kinks of piecewise-linear operators are not straddled.
pub fn random_tensor(shape: &[usize], r: &mut impl Rng, lo: f64, hi: f64, gap: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = r.gen_range(lo..hi);
            if v.abs() >= gap {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values with pairwise gaps, so max-pooling has a unique winner that does
/// not change under a finite-difference step.
pub fn distinct_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    rand::seq::SliceRandom::shuffle(vals.as_mut_slice(), r);
    Tensor::new(shape.to_vec(), vals.into_iter().map(|v| v - 0.3).collect()).unwrap()
}

/// One gradient-check case: operator name, inputs and graph builder.
pub struct Case {
    pub op: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Box<Build>,
}

fn dims(r: &mut impl Rng, lo: usize, hi: usize) -> usize {
    r.gen_range(lo..=hi)
}

/// `per_op` random cases for every differentiable operator.
pub fn operator_cases(per_op: usize, seed: u64) -> Vec<Case> {
    let mut r = rng::stream(seed, "operator_cases");
    let mut cases = Vec::new();
    for i in 0..per_op {
        let (m, k, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 4), dims(&mut r, 1, 4));
        cases.push(Case {
            op: "matmul",
            inputs: vec![random_tensor(&[m, k], &mut r, -1.0, 1.0, 0.0), random_tensor(&[k, n], &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(|g, v| g.matmul(v[0], v[1])),
        });
        cases.push(Case {
            op: "add_row",
            inputs: vec![random_tensor(&[m, n], &mut r, -1.0, 1.0, 0.0), random_tensor(&[n], &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(|g, v| g.add_row(v[0], v[1])),
        });
        let shape = [dims(&mut r, 1, 3), dims(&mut r, 1, 4)];
        for (op, b) in [
            ("add", Box::new(|g: &mut Graph, v: &[Var]| g.add(v[0], v[1])) as Box<Build>),
            ("sub", Box::new(|g: &mut Graph, v: &[Var]| g.sub(v[0], v[1]))),
            ("mul", Box::new(|g: &mut Graph, v: &[Var]| g.mul(v[0], v[1]))),
        ] {
            cases.push(Case {
                op,
                inputs: vec![random_tensor(&shape, &mut r, -1.0, 1.0, 0.0), random_tensor(&shape, &mut r, -1.0, 1.0, 0.0)],
                build: b,
            });
        }
        cases.push(Case {
            op: "div",
            inputs: vec![random_tensor(&shape, &mut r, -1.0, 1.0, 0.0), random_tensor(&shape, &mut r, 0.5, 2.0, 0.0)],
            build: Box::new(|g, v| g.div(v[0], v[1])),
        });
        let s = r.gen_range(-2.0..2.0);
        cases.push(Case {
            op: "scale",
            inputs: vec![random_tensor(&shape, &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(move |g, v| g.scale(v[0], s)),
        });
        cases.push(Case {
            op: "offset",
            inputs: vec![random_tensor(&shape, &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(move |g, v| g.offset(v[0], s)),
        });
        cases.push(Case {
            op: "sqrt",
            inputs: vec![random_tensor(&shape, &mut r, 0.2, 2.0, 0.0)],
            build: Box::new(|g, v| g.sqrt(v[0])),
        });
        cases.push(Case {
            op: "square",
            inputs: vec![random_tensor(&shape, &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(|g, v| g.square(v[0])),
        });
        cases.push(Case {
            op: "relu",
            inputs: vec![random_tensor(&shape, &mut r, -1.0, 1.0, 1e-3)],
            build: Box::new(|g, v| g.relu(v[0])),
        });
        cases.push(Case {
            op: "leaky_relu",
            inputs: vec![random_tensor(&shape, &mut r, -1.0, 1.0, 1e-3)],
            build: Box::new(|g, v| g.leaky_relu(v[0], 0.01)),
        });
        cases.push(Case {
            op: "sum",
            inputs: vec![random_tensor(&shape, &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(|g, v| g.sum(v[0])),
        });
        cases.push(Case {
            op: "mean",
            inputs: vec![random_tensor(&shape, &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(|g, v| g.mean(v[0])),
        });

        let (b, c, f) = (dims(&mut r, 1, 2), dims(&mut r, 1, 3), dims(&mut r, 1, 3));
        let (h, w) = (dims(&mut r, 1, 5), dims(&mut r, 1, 5));
        let ks = if i % 3 == 0 { 1 } else { 3 };
        cases.push(Case {
            op: "conv2d",
            inputs: vec![
                random_tensor(&[b, c, h, w], &mut r, -1.0, 1.0, 0.0),
                random_tensor(&[f, c, ks, ks], &mut r, -1.0, 1.0, 0.0),
                random_tensor(&[f], &mut r, -1.0, 1.0, 0.0),
            ],
            build: Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]))),
        });
        let (h2, w2) = (2 * dims(&mut r, 1, 3), 2 * dims(&mut r, 1, 3));
        cases.push(Case {
            op: "maxpool2",
            inputs: vec![distinct_tensor(&[b, c, h2, w2], &mut r)],
            build: Box::new(|g, v| g.maxpool2(v[0])),
        });
        cases.push(Case {
            op: "upsample_nn",
            inputs: vec![random_tensor(&[b, c, h, w], &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(|g, v| g.upsample_nn(v[0], 2)),
        });
        cases.push(Case {
            op: "concat_channels",
            inputs: vec![
                random_tensor(&[b, c, h, w], &mut r, -1.0, 1.0, 0.0),
                random_tensor(&[b, f, h, w], &mut r, -1.0, 1.0, 0.0),
            ],
            build: Box::new(|g, v| g.concat_channels(v[0], v[1])),
        });
        let p = r.gen_range(0.1..0.6);
        let drop_seed = r.gen::<u64>();
        cases.push(Case {
            op: "dropout",
            inputs: vec![random_tensor(&[b, c, h, w], &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(move |g, v| g.dropout(v[0], p, &mut rng::from_seed(drop_seed))),
        });
        let bb = dims(&mut r, 2, 4);
        for batch_stats in [true, false] {
            let stats = RunningStats {
                mean: (0..c).map(|_| r.gen_range(-0.5..0.5)).collect(),
                var: (0..c).map(|_| r.gen_range(0.5..2.0)).collect(),
            };
            cases.push(Case {
                op: if batch_stats { "batchnorm(train)" } else { "batchnorm(inference)" },
                inputs: vec![
                    random_tensor(&[bb, c, h, w], &mut r, -1.0, 1.0, 0.0),
                    random_tensor(&[c], &mut r, 0.5, 1.5, 0.0),
                    random_tensor(&[c], &mut r, -0.5, 0.5, 0.0),
                ],
                build: Box::new(move |g, v| {
                    let mut st = stats.clone();
                    g.batchnorm_mode(v[0], v[1], v[2], &mut st, BatchNormConfig::default(), batch_stats)
                }),
            });
        }
        cases.push(Case {
            op: "reshape",
            inputs: vec![random_tensor(&[b, c, h, w], &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(move |g, v| g.reshape(v[0], &[b * c, h * w])),
        });
        let mut axes = vec![0, 1, 2, 3];
        rand::seq::SliceRandom::shuffle(axes.as_mut_slice(), &mut r);
        cases.push(Case {
            op: "permute",
            inputs: vec![random_tensor(&[b, c, h, w], &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(move |g, v| g.permute(v[0], &axes)),
        });
        let size = dims(&mut r, 1, 3);
        let kernel: Vec<f64> = (0..size * size).map(|_| r.gen_range(0.0..1.0)).collect();
        cases.push(Case {
            op: "filter_valid",
            inputs: vec![random_tensor(&[b, c, size + h, size + w], &mut r, -1.0, 1.0, 0.0)],
            build: Box::new(move |g, v| g.filter_valid(v[0], &kernel, size)),
        });
    }
    cases
}

/// Naive triple-loop product.
pub fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// Direct zero-padded "same" cross-correlation.
pub fn conv_oracle(x: &Tensor, k: &Tensor) -> Tensor {
    let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (f, ks) = (k.shape()[0], k.shape()[2]);
    let half = (ks / 2) as isize;
    let mut out = vec![0.0; b * f * h * w];
    for bi in 0..b {
        for fi in 0..f {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let sy = y as isize + ky as isize - half;
                                let sx = xx as isize + kx as isize - half;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * c + ci) * h + sy as usize) * w + sx as usize]
                                    * k.data()[((fi * c + ci) * ks + ky) * ks + kx];
                            }
                        }
                    }
                    out[((bi * f + fi) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, f, h, w], out).unwrap()
}

/// Autocorrelation by direct summation over all shifts, centered.
pub fn autocorr_oracle(img: &Tensor) -> Tensor {
    let s = img.shape()[0];
    let l = 2 * s - 1;
    let mut out = vec![0.0; l * l];
    for dy in -(s as isize - 1)..s as isize {
        for dx in -(s as isize - 1)..s as isize {
            let mut acc = 0.0;
            for y in 0..s as isize {
                for x in 0..s as isize {
                    let (y2, x2) = (y + dy, x + dx);
                    if y2 >= 0 && x2 >= 0 && y2 < s as isize && x2 < s as isize {
                        acc += img.data()[(y * s as isize + x) as usize] * img.data()[(y2 * s as isize + x2) as usize];
                    }
                }
            }
            out[((dy + s as isize - 1) as usize) * l + (dx + s as isize - 1) as usize] = acc;
        }
    }
    Tensor::new(vec![l, l], out).unwrap()
}

/// SSIM from the textbook per-window formula: Gaussian-weighted means,
/// variances and covariance at every valid window position, averaged.
pub fn ssim_oracle(a: &Tensor, b: &Tensor, window: usize, sigma: f64) -> f64 {
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let half = (window as f64 - 1.0) / 2.0;
    let mut kernel = vec![0.0; window * window];
    for i in 0..window {
        for j in 0..window {
            let (dy, dx) = (i as f64 - half, j as f64 - half);
            kernel[i * window + j] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y in 0..=h - window {
        for x in 0..=w - window {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..window {
                for j in 0..window {
                    let k = kernel[i * window + j];
                    ma += k * a.data()[(y + i) * w + x + j];
                    mb += k * b.data()[(y + i) * w + x + j];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..window {
                for j in 0..window {
                    let k = kernel[i * window + j];
                    let da = a.data()[(y + i) * w + x + j] - ma;
                    let db = b.data()[(y + i) * w + x + j] - mb;
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}
