// Two-step training on a small synthetic set: the dense front end learns
// an approximate inverse, then a U-Net refines its output.

use spix::data::{build_dataset, synth_shapes, BuildOptions, DataSource, Split, SplitSizes};
use spix::learned::{evaluate, split_data, train_tst, LossKind, NetworkSpec, TrainConfig, UnetSpec};
use spix::measurement::{MeasurementModel, Ordering};
use spix::optim::OptimizerConfig;

pub fn run_example() -> anyhow::Result<()> {
    let side = 8;
    let model = MeasurementModel::hadamard(side, Ordering::RussianDoll)?.compress(2)?;
    let images = synth_shapes(300, side, 5);
    let sizes = SplitSizes { train: 200, validation: 50, test: 50 };
    let ds = build_dataset(&images, &model, &BuildOptions::new(sizes, 5, DataSource::SyntheticShapes))?;

    let unet = UnetSpec { depth: 1, base_channels: 4, dropout: 0.1, residual: true };
    let spec = NetworkSpec::fcl_unet(model.measurement_len(), side, unet);
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 20,
        front_end_optimizer: Some(OptimizerConfig::adam(1e-2)),
        ..TrainConfig::default()
    };
    let out = train_tst(&ds, &spec, &cfg)?;

    let test = split_data(&ds, &spec, Split::Test)?;
    let front = evaluate(&out.front_end.spec, &out.front_end.params, &test, LossKind::Mse)?;
    let full = evaluate(&out.model.spec, &out.model.params, &test, cfg.loss)?;
    println!("front end alone: test rmse {:.4}", front.rmse);
    println!("with U-Net:      test rmse {:.4}, ssim {:.3}", full.rmse, full.ssim);
    println!("{} trainable values", out.model.parameter_count());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tst.tstw");
    out.model.save(&path)?;
    let restored = spix::learned::TrainedModel::load(&path)?;
    let g = ds.measurement(ds.splits.get(Split::Test)[0]);
    println!("restored prediction shape {:?}", restored.predict(&g)?.shape());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
