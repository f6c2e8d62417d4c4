mod common;

use proptest::prelude::*;
use rand::Rng;
use spix::measurement::{
    add_noise_snr, autocorrelate, grayscale_random_patterns, hadamard_full, random_permutation_order,
    russian_doll_order, MeasurementModel, MismatchMode, MismatchSpec, Ordering,
};
use spix::{rng, Tensor};

use common::{autocorr_oracle, random_tensor};

fn gram(h: &Tensor) -> Tensor {
    h.matmul(&h.transpose().unwrap()).unwrap()
}

#[test]
fn full_bases_are_exactly_orthogonal() {
    for side in [2, 4, 8, 16, 32] {
        let n = side * side;
        for ordering in [
            Ordering::Sylvester,
            Ordering::RussianDoll,
            Ordering::RandomPermutation { seed: 9 },
        ] {
            let model = MeasurementModel::hadamard(side, ordering).unwrap();
            let h = model.matrix().unwrap();
            assert!(h.data().iter().all(|v| *v == 1.0 || *v == -1.0));
            let g = gram(h);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { n as f64 } else { 0.0 };
                    assert_eq!(g.data()[i * n + j], want, "side {side} {ordering:?} ({i},{j})");
                }
            }
        }
    }
}

fn block_constant(row: &[f64], side: usize, block: usize) -> bool {
    (0..side).all(|y| (0..side).all(|x| row[y * side + x] == row[(y / block * block) * side + x / block * block]))
}

/// Averages `image` over `block × block` tiles and paints the result back.
fn block_average(image: &[f64], side: usize, block: usize) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for by in (0..side).step_by(block) {
        for bx in (0..side).step_by(block) {
            let mut s = 0.0;
            for y in by..by + block {
                for x in bx..bx + block {
                    s += image[y * side + x];
                }
            }
            s /= (block * block) as f64;
            for y in by..by + block {
                for x in bx..bx + block {
                    out[y * side + x] = s;
                }
            }
        }
    }
    out
}

#[test]
fn russian_doll_shells_nest_and_reconstruct_block_averages() {
    let mut r = rng::from_seed(4);
    for side in [2usize, 4, 8, 16, 32] {
        let n = side * side;
        let full = hadamard_full(side).unwrap();
        let order = russian_doll_order(&full, side).unwrap();
        let mut seen = order.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        assert!(full.row(order[0]).iter().all(|v| *v == 1.0));
        let image: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let levels = side.trailing_zeros() as usize;
        for k in 0..=levels {
            let m = 1 << (2 * k);
            let block = side >> k;
            for &row in &order[..m] {
                assert!(block_constant(full.row(row), side, block), "side {side} shell {k} row {row}");
            }
            // Shell k reconstructs the block-averaged image: Hₖᵀ Hₖ f / N.
            let mut recon = vec![0.0; n];
            for &row in &order[..m] {
                let p = full.row(row);
                let g: f64 = p.iter().zip(&image).map(|(a, b)| a * b).sum();
                recon.iter_mut().zip(p).for_each(|(o, v)| *o += g * v / n as f64);
            }
            let want = block_average(&image, side, block);
            let err = recon.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "side {side} shell {k}: {err:e}");
        }
    }
}

#[test]
fn full_basis_inverts_by_transpose() {
    let mut r = rng::from_seed(8);
    let model = MeasurementModel::hadamard(8, Ordering::RussianDoll).unwrap();
    let h = model.matrix().unwrap();
    for _ in 0..5 {
        let f = random_tensor(&[8, 8], &mut r, 0.0, 1.0, 0.0);
        let g = model.forward_measure(&f).unwrap();
        let back = h.matvec_t(g.data()).unwrap();
        for (a, b) in back.iter().zip(f.data()) {
            assert!((a / 64.0 - b).abs() < 1e-10);
        }
    }
}

#[test]
fn compression_keeps_leading_rows() {
    let model = MeasurementModel::hadamard(64, Ordering::RussianDoll).unwrap();
    let c = model.compress(4).unwrap();
    assert_eq!(c.measurement_len(), 1024);
    assert_eq!(c.compression_ratio(), 4.0);
    let full = model.matrix().unwrap();
    let kept = c.matrix().unwrap();
    assert_eq!(kept.data(), &full.data()[..1024 * 4096]);
    assert_eq!(model.compress(1).unwrap(), model);
    let small = MeasurementModel::hadamard(32, Ordering::RussianDoll).unwrap();
    assert!(small.compress(20).is_err());
    assert_eq!(small.compress_rows(51).unwrap().measurement_len(), 51);
}

#[test]
fn permutations_are_seeded_bijections() {
    let a = random_permutation_order(4096, 1);
    let b = random_permutation_order(4096, 2);
    assert_eq!(a, random_permutation_order(4096, 1));
    assert_ne!(a, b);
    let mut s = a.clone();
    s.sort_unstable();
    assert_eq!(s, (0..4096).collect::<Vec<_>>());
}

#[test]
fn grayscale_patterns_are_uniform() {
    let p = grayscale_random_patterns(100, 16, 3).unwrap();
    assert_eq!(p.shape(), &[100, 256]);
    assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let n = p.len() as f64;
    let sigma = (1.0f64 / 12.0).sqrt() / n.sqrt();
    assert!((p.mean() - 0.5).abs() < 3.0 * sigma);
    assert_eq!(p, grayscale_random_patterns(100, 16, 3).unwrap());
}

#[test]
fn realized_snr_matches_target() {
    let mut r = rng::from_seed(12);
    let g = random_tensor(&[10_000], &mut r, -1.0, 3.0, 0.0);
    let power = g.data().iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
    for snr in [-5.0, 0.0, 5.0, 10.0, 15.0] {
        let noisy = add_noise_snr(&g, snr, 77).unwrap();
        let noise = noisy.data().iter().zip(g.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / g.len() as f64;
        let realized = 10.0 * (power / noise).log10();
        assert!((realized - snr).abs() <= 0.5, "target {snr}, realized {realized}");
    }
    let quiet = add_noise_snr(&g, 100.0, 1).unwrap();
    assert!((quiet.norm() - g.norm()).abs() / g.norm() < 1e-4);
    assert!(add_noise_snr(&Tensor::zeros(&[4]), 0.0, 1).is_err());
}

#[test]
fn inversion_fraction_counts() {
    let model = MeasurementModel::hadamard(64, Ordering::RussianDoll).unwrap();
    let spec = |fraction| MismatchSpec {
        mode: MismatchMode::InvertElements { fraction },
        seed: 5,
    };
    let base = model.matrix().unwrap();
    let quarter = model.perturb(&spec(0.25)).unwrap();
    let changed = quarter
        .matrix()
        .unwrap()
        .data()
        .iter()
        .zip(base.data())
        .filter(|(a, b)| a != b)
        .count() as f64;
    let expected = 0.25 * base.len() as f64;
    assert!((changed - expected).abs() <= 0.01 * expected, "{changed} vs {expected}");
    assert_eq!(model.perturb(&spec(0.0)).unwrap(), model);

    let small = MeasurementModel::hadamard(4, Ordering::Sylvester).unwrap();
    let all = small.perturb(&spec(1.0)).unwrap();
    let neg = small.matrix().unwrap().map(|v| -v);
    assert_eq!(all.matrix().unwrap(), &neg);
    let gauss = small
        .perturb(&MismatchSpec {
            mode: MismatchMode::GaussianPerturb { sigma: 0.0 },
            seed: 1,
        })
        .unwrap();
    assert_eq!(gauss, small);
}

#[test]
fn autocorrelation_matches_direct_sum() {
    let mut r = rng::from_seed(21);
    for _ in 0..20 {
        let img = random_tensor(&[8, 8], &mut r, 0.0, 1.0, 0.0);
        let fast = autocorrelate(&img).unwrap();
        let slow = autocorr_oracle(&img);
        assert_eq!(fast.shape(), &[15, 15]);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn autocorrelation_is_symmetric_with_central_peak(seed in any::<u64>(), side in 2usize..10) {
        let mut r = rng::from_seed(seed);
        let img = random_tensor(&[side, side], &mut r, 0.0, 1.0, 0.0);
        let a = autocorrelate(&img).unwrap();
        let l = 2 * side - 1;
        let d = a.data();
        let energy: f64 = img.data().iter().map(|v| v * v).sum();
        let peak = d[(side - 1) * l + side - 1];
        prop_assert!((peak - energy).abs() <= 1e-8 * energy.max(1.0));
        for i in 0..l * l {
            prop_assert!((d[i] - d[l * l - 1 - i]).abs() <= 1e-9 * energy.max(1.0));
            prop_assert!(d[i] <= peak + 1e-9 * energy.max(1.0));
        }
    }

    #[test]
    fn noise_is_a_pure_function_of_seed(seed in any::<u64>(), snr in -10.0f64..30.0) {
        let g = Tensor::from_fn(&[64], |i| 1.0 + i as f64 * 0.1);
        prop_assert_eq!(add_noise_snr(&g, snr, seed).unwrap(), add_noise_snr(&g, snr, seed).unwrap());
    }

    #[test]
    fn forward_measure_is_linear(seed in any::<u64>(), a in -2.0f64..2.0) {
        let mut r = rng::from_seed(seed);
        let model = MeasurementModel::hadamard(4, Ordering::RandomPermutation { seed }).unwrap().compress(4).unwrap();
        let x = random_tensor(&[4, 4], &mut r, 0.0, 1.0, 0.0);
        let y = random_tensor(&[4, 4], &mut r, 0.0, 1.0, 0.0);
        let combo = x.zip_map(&y, |p, q| a * p + q).unwrap();
        let gx = model.forward_measure(&x).unwrap();
        let gy = model.forward_measure(&y).unwrap();
        let gc = model.forward_measure(&combo).unwrap();
        for i in 0..gc.len() {
            prop_assert!((gc.data()[i] - (a * gx.data()[i] + gy.data()[i])).abs() < 1e-10);
        }
    }
}
