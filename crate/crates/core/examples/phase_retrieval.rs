// Recovers a digit from its autocorrelation and registers the estimate
// against the truth, since shifts and 180° rotations are invisible in the
// data.

use spix::data::synth_digits;
use spix::measurement::autocorrelate;
use spix::metrics::rmse;
use spix::solvers::{phase_retrieve, register_to_reference, PhaseRetrievalConfig};

pub fn run_example() -> anyhow::Result<()> {
    let side = 12;
    let (images, _) = synth_digits(3, side, 21);
    let cfg = PhaseRetrievalConfig {
        iters: 300,
        restarts: 4,
        ..PhaseRetrievalConfig::default()
    };
    for (i, truth) in images.iter().enumerate() {
        let a = autocorrelate(truth)?;
        let out = phase_retrieve(&a, &cfg)?;
        let reg = register_to_reference(&out.image, truth)?;
        println!(
            "image {i}: rmse {:.4}, shift {:?}, rotated {}, best restart {}",
            rmse(truth, &reg.aligned)?,
            reg.shift,
            reg.rotated,
            out.best_restart
        );
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
