// Compressed, noisy single-pixel measurements reconstructed with LSQR and
// with TwIST under a Haar sparsity prior.

use spix::data::synth_shapes;
use spix::measurement::{add_noise_snr, MeasurementModel, Ordering};
use spix::metrics::score_pair;
use spix::solvers::{lsqr_solve, twist_solve, LsqrConfig, TwistConfig};

pub fn run_example() -> anyhow::Result<()> {
    let side = 16;
    let scene = &synth_shapes(1, side, 3)[0];
    let model = MeasurementModel::hadamard(side, Ordering::RandomPermutation { seed: 1 })?.compress(4)?;
    let h = model.matrix()?.map(|v| v / side as f64);
    let clean = scene.clone().reshape(&[side * side])?;
    let g = spix::Tensor::new(vec![h.shape()[0]], h.matvec(clean.data())?)?;
    let g = add_noise_snr(&g, 20.0, 11)?;

    let ls = lsqr_solve(&h, &g, &LsqrConfig::default())?.reshape(&[side, side])?;
    let tw = twist_solve(&h, &g, side, &TwistConfig::default())?;
    for (name, img) in [("lsqr", &ls), ("twist", &tw.image)] {
        let s = score_pair(name, scene, img)?;
        println!("{name:<6} rmse {:.4}  ssim {:.3}", s.rmse, s.ssim);
    }
    println!("twist: λ = {:.4}, {} iterations", tw.lambda, tw.iterations);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
