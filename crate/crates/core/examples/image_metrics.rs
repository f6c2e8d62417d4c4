// Scores a reconstruction against its ground truth and aggregates a batch
// into the per-image CSV layout.

use spix::data::synth_shapes;
use spix::measurement::add_noise_snr;
use spix::metrics::{aggregate, score_pair, write_csv};

pub fn run_example() -> anyhow::Result<()> {
    let truths = synth_shapes(4, 32, 9);
    let mut scores = Vec::new();
    for (i, t) in truths.iter().enumerate() {
        let noisy = add_noise_snr(t, 15.0, i as u64)?;
        scores.push(score_pair(i.to_string(), t, &noisy)?);
    }
    let report = aggregate("demo", "noisy", scores)?;
    println!(
        "rmse {:.4} ± {:.4}, ssim {:.3} ± {:.3}",
        report.rmse.mean, report.rmse.std, report.ssim.mean, report.ssim.std
    );
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("metrics.csv");
    write_csv(&path, &[report])?;
    print!("{}", std::fs::read_to_string(&path)?);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
