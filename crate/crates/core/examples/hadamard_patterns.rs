// Builds Russian-Doll ordered Hadamard patterns and shows that each nested
// shell recovers a coarser version of the scene.

use spix::data::synth_digits;
use spix::measurement::{MeasurementModel, Ordering};
use spix::metrics::rmse;
use spix::Tensor;

pub fn run_example() -> anyhow::Result<()> {
    let side = 16;
    let n = side * side;
    let (images, labels) = synth_digits(1, side, 7);
    let scene = &images[0];
    let model = MeasurementModel::hadamard(side, Ordering::RussianDoll)?;
    println!("digit {} on a {side}×{side} grid, {} patterns", labels[0], model.measurement_len());

    for ratio in [64, 16, 4, 1] {
        let kept = model.compress(ratio)?;
        let h = kept.matrix()?;
        let g = kept.forward_measure(scene)?;
        // Hadamard rows are orthogonal with norm² = N, so Hᵀg / N is the
        // least-squares estimate for any prefix of rows.
        let back = h.matvec_t(g.data())?.into_iter().map(|v| v / n as f64).collect();
        let estimate = Tensor::new(vec![side, side], back)?;
        println!(
            "{ratio:>2}X  {:>3} patterns  rmse {:.4}",
            kept.measurement_len(),
            rmse(scene, &estimate)?
        );
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
