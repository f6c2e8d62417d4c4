// A miniature compression sweep: one job per ratio and seed, with metrics,
// exported images and a summary written under a temporary directory.

use spix::data::{DataSource, SplitSizes};
use spix::experiments::{run_experiment, ExperimentConfig, Method};
use spix::learned::UnetSpec;

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig {
        name: "mini".into(),
        grid: vec![2.0, 4.0],
        methods: vec![Method::Tst, Method::FclDl, Method::Lsqr],
        seeds: vec![0],
        out_dir: dir.path().to_path_buf(),
        export_images: 1,
        ..ExperimentConfig::default()
    };
    cfg.data.source = DataSource::SyntheticShapes;
    cfg.data.side = 8;
    cfg.data.splits = SplitSizes { train: 120, validation: 30, test: 30 };
    cfg.network.unet = UnetSpec { depth: 1, base_channels: 4, dropout: 0.1, residual: true };
    cfg.train.epochs = 3;
    cfg.train.batch_size = 20;

    let res = run_experiment(&cfg, 1)?;
    for p in &res.points {
        println!("{:<8} {:<7} rmse {:.4}  ssim {:.3}", p.label, p.method.name(), p.rmse.mean, p.ssim.mean);
    }
    println!("config hash {}", &res.config_hash[..12]);
    anyhow::ensure!(res.failures().next().is_none(), "a job failed");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
