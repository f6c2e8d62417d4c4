//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 for usage errors (bad flags, unreadable or invalid config),
//! 2 when the requested work fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::data::{build_dataset, sidecar_path, write_pgm, BuildOptions, ImageDataset, Split, TSTD_MAGIC};
use crate::experiments::{base_model, load_images, network_for, run_experiment, DataConfig, ExperimentConfig, Method, NetworkConfig};
use crate::learned::{
    split_data, train_dcan_decoder, train_front_end, train_ost, train_tst, train_unet_baseline, TrainConfig,
    TrainedModel,
};
use crate::measurement::{MeasurementModel, MismatchMode, MismatchSpec, Ordering};
use crate::metrics::{aggregate, score_pair, write_csv};
use crate::params::{ParameterSet, TSTW_MAGIC};
use crate::solvers::LsqrConfig;
use crate::tensor::Tensor;

#[derive(Parser, Debug)]
#[command(name = "spix", version, about = "Single-pixel imaging simulation, reconstruction and experiments")]
struct Cli {
    /// Seed for data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a measurement pattern matrix and PGM previews.
    GenPatterns(PatternArgs),
    /// Simulate acquisition of an image set into a TSTD dataset.
    GenData(DataArgs),
    /// Train a reconstruction network on a dataset.
    Train(TrainArgs),
    /// Reconstruct images from measurement vectors with a trained model.
    Reconstruct(ReconstructArgs),
    /// Score a trained model on a dataset split.
    Eval(EvalArgs),
    /// Run an experiment sweep from a config file.
    Sweep,
    /// Describe a TSTW, TSTD or JSON file.
    Inspect { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Family {
    Sylvester,
    RussianDoll,
    Random,
    Grayscale,
    Autocorrelation,
}

#[derive(Args, Debug)]
struct PatternArgs {
    #[arg(long, default_value_t = 32)]
    side: usize,
    #[arg(long, value_enum, default_value_t = Family::RussianDoll)]
    family: Family,
    /// Seed of random orderings and grayscale patterns.
    #[arg(long, default_value_t = 0)]
    pattern_seed: u64,
    /// Keep the first `N / ratio` patterns.
    #[arg(long)]
    ratio: Option<usize>,
    /// Keep the first `m` patterns.
    #[arg(long, conflicts_with = "ratio")]
    measurements: Option<usize>,
    /// Number of patterns exported as PGM.
    #[arg(long, default_value_t = 16)]
    preview: usize,
}

/// Dataset generation settings, as read from `--config` or flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct DataGenConfig {
    data: DataConfig,
    family: Family,
    pattern_seed: u64,
    ratio: Option<usize>,
    measurements: Option<usize>,
    noise_snr_db: Option<f64>,
    invert_fraction: Option<f64>,
    lsqr: bool,
    seed: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            family: Family::RussianDoll,
            pattern_seed: 0,
            ratio: Some(4),
            measurements: None,
            noise_snr_db: None,
            invert_fraction: None,
            lsqr: false,
            seed: 0,
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long, value_enum)]
    source: Option<SourceArg>,
    /// IDX or STL-10 image file.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    validation: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long, value_enum)]
    family: Option<Family>,
    #[arg(long)]
    pattern_seed: Option<u64>,
    #[arg(long)]
    ratio: Option<usize>,
    #[arg(long)]
    measurements: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
    #[arg(long)]
    invert_fraction: Option<f64>,
    /// Attach LSQR initial guesses.
    #[arg(long)]
    lsqr: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SourceArg {
    Shapes,
    Digits,
    Mnist,
    Stl10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct TrainJob {
    method: Method,
    network: NetworkConfig,
    train: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        Self {
            method: Method::Tst,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TSTD dataset.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Tst,
    Ost,
    Dcan,
    UnetBaseline,
    FclDl,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    /// TSTD dataset or raw little-endian f32 vectors.
    #[arg(long)]
    measurements: PathBuf,
    /// Reconstructions exported as PGM.
    #[arg(long, default_value_t = 4)]
    preview: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    if let Some(t) = cli.threads {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::GenPatterns(ref a) => gen_patterns(&cli, a, &out),
        Command::GenData(ref a) => gen_data(&cli, a, &out),
        Command::Train(ref a) => train(&cli, a, &out),
        Command::Reconstruct(ref a) => reconstruct(a, &out),
        Command::Eval(ref a) => eval(a, &out),
        Command::Sweep => sweep(&cli),
        Command::Inspect { ref path } => inspect(path),
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> std::result::Result<T, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_resolved<T: Serialize>(out: &Path, command: &str, cfg: &T) -> anyhow::Result<()> {
    ensure_dir(out)?;
    let path = out.join(format!("resolved_{command}.json"));
    fs::write(&path, serde_json::to_vec_pretty(cfg)?).with_context(|| format!("writing {}", path.display()))
}

fn pattern_model(family: Family, side: usize, seed: u64) -> crate::Result<MeasurementModel> {
    match family {
        Family::Sylvester => MeasurementModel::hadamard(side, Ordering::Sylvester),
        Family::RussianDoll => MeasurementModel::hadamard(side, Ordering::RussianDoll),
        Family::Random => MeasurementModel::hadamard(side, Ordering::RandomPermutation { seed }),
        Family::Grayscale => base_model(Ordering::GrayscaleRandom { seed }, side),
        Family::Autocorrelation => Ok(MeasurementModel::autocorrelation(side)),
    }
}

fn compressed(model: MeasurementModel, ratio: Option<usize>, m: Option<usize>) -> crate::Result<MeasurementModel> {
    match (ratio, m) {
        (_, Some(m)) => model.compress_rows(m),
        (Some(r), None) => model.compress(r),
        (None, None) => Ok(model),
    }
}

fn gen_patterns(cli: &Cli, a: &PatternArgs, out: &Path) -> CmdResult {
    if a.family == Family::Autocorrelation {
        return Err(Failure::Usage("the autocorrelation operator has no patterns".into()));
    }
    let seed = cli.seed.unwrap_or(a.pattern_seed);
    let model = compressed(pattern_model(a.family, a.side, seed)?, a.ratio, a.measurements)?;
    #[derive(Serialize)]
    struct Resolved {
        side: usize,
        family: Family,
        pattern_seed: u64,
        measurements: usize,
        full_basis_size: usize,
    }
    let resolved = Resolved {
        side: a.side,
        family: a.family,
        pattern_seed: seed,
        measurements: model.measurement_len(),
        full_basis_size: model.full_basis_size,
    };
    write_resolved(out, "gen-patterns", &resolved)?;
    let h = model.matrix()?;
    let mut set = ParameterSet::new();
    set.insert("patterns", h.clone());
    set.save(&out.join("patterns.tstw"))?;
    let preview = out.join("patterns");
    if a.preview > 0 {
        ensure_dir(&preview)?;
    }
    let (lo, hi) = (h.min(), h.max());
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    for k in 0..a.preview.min(h.shape()[0]) {
        let row = Tensor::new(vec![a.side, a.side], h.row(k).iter().map(|v| (v - lo) / span).collect())?;
        write_pgm(&preview.join(format!("pattern_{k:04}.pgm")), &row)?;
    }
    println!("wrote {} patterns of {} pixels to {}", h.shape()[0], h.shape()[1], out.display());
    Ok(())
}

fn gen_data(cli: &Cli, a: &DataArgs, out: &Path) -> CmdResult {
    let mut c: DataGenConfig = match &cli.config {
        Some(p) => read_config(p)?,
        None => DataGenConfig::default(),
    };
    if let Some(s) = a.source {
        c.data.source = match s {
            SourceArg::Shapes => crate::data::DataSource::SyntheticShapes,
            SourceArg::Digits => crate::data::DataSource::SyntheticDigits,
            SourceArg::Mnist => crate::data::DataSource::IdxMnist,
            SourceArg::Stl10 => crate::data::DataSource::Stl10Binary,
        };
    }
    if a.images.is_some() {
        c.data.images = a.images.clone();
    }
    if a.labels.is_some() {
        c.data.labels = a.labels.clone();
    }
    macro_rules! set {
        ($($dst:expr => $src:expr),*) => { $(if let Some(v) = $src { $dst = v; })* };
    }
    set!(c.data.side => a.side, c.data.splits.train => a.train, c.data.splits.validation => a.validation,
         c.data.splits.test => a.test, c.family => a.family, c.pattern_seed => a.pattern_seed, c.seed => cli.seed);
    if a.ratio.is_some() || a.measurements.is_some() {
        c.ratio = a.ratio;
        c.measurements = a.measurements;
    }
    c.noise_snr_db = a.snr.or(c.noise_snr_db);
    c.invert_fraction = a.invert_fraction.or(c.invert_fraction);
    c.lsqr |= a.lsqr;
    write_resolved(out, "gen-data", &c)?;

    let (images, labels) = load_images(&c.data, c.data.side, c.seed)?;
    let model = pattern_model(c.family, c.data.side, c.pattern_seed)?;
    let model = if model.is_linear() {
        compressed(model, c.ratio, c.measurements)?
    } else {
        model
    };
    let mut opts = BuildOptions::new(c.data.splits, c.seed, c.data.source);
    opts.labels = labels;
    opts.noise_snr_db = c.noise_snr_db;
    opts.mismatch = c.invert_fraction.map(|fraction| MismatchSpec {
        mode: MismatchMode::InvertElements { fraction },
        seed: crate::rng::child_seed(c.seed, "mismatch", 0),
    });
    if c.lsqr {
        if !model.is_linear() {
            return Err(Failure::Usage("LSQR guesses need a linear pattern family".into()));
        }
        opts.lsqr = Some(LsqrConfig::default());
    }
    let ds = build_dataset(&images, &model, &opts)?;
    let path = out.join("dataset.tstd");
    ds.save(&path)?;
    println!(
        "wrote {} images ({}×{}, {} measurements each) to {}",
        ds.len(),
        ds.side,
        ds.side,
        ds.measurement_len(),
        path.display()
    );
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs, out: &Path) -> CmdResult {
    let mut job: TrainJob = match &cli.config {
        Some(p) => read_config(p)?,
        None => TrainJob::default(),
    };
    if let Some(m) = a.method {
        job.method = match m {
            MethodArg::Tst => Method::Tst,
            MethodArg::Ost => Method::Ost,
            MethodArg::Dcan => Method::Dcan,
            MethodArg::UnetBaseline => Method::UnetBaseline,
            MethodArg::FclDl => Method::FclDl,
        };
    }
    if !job.method.is_learned() {
        return Err(Failure::Usage(format!("method `{}` is not trainable", job.method.name())));
    }
    if let Some(e) = a.epochs {
        job.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        job.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        job.train.optimizer.learning_rate = lr;
    }
    if let Some(d) = a.depth {
        job.network.unet.depth = d;
    }
    if let Some(c) = a.channels {
        job.network.unet.base_channels = c;
        job.network.dcan.channels = c;
    }
    if let Some(s) = cli.seed {
        job.train.seed = s;
    }
    job.train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    write_resolved(out, "train", &job)?;

    let ds = ImageDataset::load(&a.data)?;
    let autocorr = ds.meta.model.starts_with("autocorrelation");
    let spec = network_for(job.method, &job.network, autocorr, ds.measurement_len(), ds.side);
    let model = match job.method {
        Method::Tst => train_tst(&ds, &spec, &job.train)?.model,
        Method::FclDl => train_front_end(&ds, &spec, &job.train)?,
        Method::Ost => train_ost(&ds, &spec, &job.train)?,
        Method::Dcan => train_dcan_decoder(&ds, &spec, &job.train)?,
        Method::UnetBaseline => train_unet_baseline(&ds, &spec, &job.train)?,
        _ => unreachable!("checked above"),
    };
    let path = out.join("model.tstw");
    model.save(&path)?;
    write_history(&out.join("history.csv"), &model)?;
    println!("trained {} ({} parameters) -> {}", job.method.name(), model.parameter_count(), path.display());
    Ok(())
}

fn write_history(path: &Path, model: &TrainedModel) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "epoch", "train_loss", "val_loss", "val_rmse", "val_ssim", "val_intermediate_rmse"])?;
    for h in &model.history {
        let v = h.validation;
        let f = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            h.step.clone(),
            h.epoch.to_string(),
            h.train_loss.to_string(),
            f(v.map(|v| v.loss)),
            f(v.map(|v| v.rmse)),
            f(v.map(|v| v.ssim)),
            f(v.map(|v| v.intermediate_rmse)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Measurement rows from a TSTD file or a raw f32 stream of `m`-vectors.
fn read_measurements(path: &Path, m: usize) -> anyhow::Result<Tensor> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(TSTD_MAGIC) {
        let ds = ImageDataset::load(path)?;
        return Ok(ds.measurements);
    }
    if bytes.len() % 4 != 0 || (bytes.len() / 4) % m != 0 {
        bail!("{}: {} bytes is not a whole number of {m}-value f32 vectors", path.display(), bytes.len());
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Tensor::new(vec![vals.len() / m, m], vals)?)
}

fn reconstruct(a: &ReconstructArgs, out: &Path) -> CmdResult {
    let model = TrainedModel::load(&a.model)?;
    if !model.spec.has_front_end() {
        return Err(Failure::Usage("model takes LSQR images, not measurements".into()));
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        model: &'a Path,
        measurements: &'a Path,
        preview: usize,
    }
    write_resolved(out, "reconstruct", &Resolved { model: &a.model, measurements: &a.measurements, preview: a.preview })?;
    let g = read_measurements(&a.measurements, model.spec.input_length)?;
    if g.shape()[1] != model.spec.input_length {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "measurements of length {}, model expects {}",
            g.shape()[1],
            model.spec.input_length
        )));
    }
    let recon = model.predict_batch(&g)?;
    let side = model.spec.output_side;
    let mut bytes = Vec::with_capacity(recon.len() * 4);
    for v in recon.data() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let path = out.join("reconstructions.bin");
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    for i in 0..a.preview.min(recon.shape()[0]) {
        let img = Tensor::new(vec![side, side], recon.row(i).to_vec())?;
        write_pgm(&out.join(format!("reconstruction_{i:04}.pgm")), &img)?;
    }
    println!("reconstructed {} images of {side}×{side} to {}", recon.shape()[0], path.display());
    Ok(())
}

fn eval(a: &EvalArgs, out: &Path) -> CmdResult {
    let model = TrainedModel::load(&a.model)?;
    let ds = ImageDataset::load(&a.data)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Validation => Split::Validation,
        SplitArg::Test => Split::Test,
    };
    #[derive(Serialize)]
    struct Resolved<'a> {
        model: &'a Path,
        data: &'a Path,
        split: Split,
    }
    write_resolved(out, "eval", &Resolved { model: &a.model, data: &a.data, split })?;
    let d = split_data(&ds, &model.spec, split)?;
    let pred = model.predict_batch(&d.inputs)?;
    let side = ds.side;
    let idx = ds.splits.get(split);
    let scores = idx
        .iter()
        .enumerate()
        .map(|(k, i)| {
            let t = Tensor::new(vec![side, side], d.targets.row(k).to_vec())?;
            let p = Tensor::new(vec![side, side], pred.row(k).to_vec())?;
            score_pair(i.to_string(), &t, &p)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let report = aggregate("eval", &model.provenance.trainer, scores)?;
    write_csv(&out.join("metrics.csv"), std::slice::from_ref(&report))?;
    println!("{} images: rmse {:.5} ± {:.5}, ssim {:.5} ± {:.5}", idx.len(), report.rmse.mean, report.rmse.std, report.ssim.mean, report.ssim.std);
    Ok(())
}

fn sweep(cli: &Cli) -> CmdResult {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("sweep needs --config <json>".into()))?;
    let mut cfg: ExperimentConfig = read_config(path)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate().map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))?;
    let result = run_experiment(&cfg, cli.threads.unwrap_or(0))?;
    for p in &result.points {
        println!(
            "{:<16} {:<14} rmse {:.5} ± {:.5}  ssim {:.5}  ({} seeds)",
            p.label,
            p.method.name(),
            p.rmse.mean,
            p.rmse.std,
            p.ssim.mean,
            p.seeds
        );
    }
    for j in result.failures() {
        eprintln!("{} seed {} failed: {}", j.label, j.seed, j.error.as_deref().unwrap_or(""));
    }
    println!("results in {}", result.root.display());
    Ok(())
}

fn inspect(path: &Path) -> CmdResult {
    use std::fmt::Write as _;
    let mut s = String::new();
    macro_rules! outln {
        ($s:ident, $($arg:tt)*) => { let _ = writeln!($s, $($arg)*); };
    }
    let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    if bytes.starts_with(TSTW_MAGIC) {
        let set = ParameterSet::read_tstw(bytes.as_slice())?;
        outln!(s, "TSTW weights: {} tensors, {} values", set.len(), set.scalar_count());
        for (name, t) in set.iter() {
            outln!(s, "  {name:<32} {:?}", t.shape());
        }
        if sidecar_path(path).exists() {
            if let Ok(m) = TrainedModel::load(path) {
                outln!(s, "trainer: {}", m.provenance.trainer);
                outln!(s, "spec: {}", serde_json::to_string(&m.spec).unwrap_or_default());
                outln!(s, "selected: {:?}", m.provenance.selected);
            }
        }
    } else if bytes.starts_with(TSTD_MAGIC) {
        let ds = ImageDataset::load(path)?;
        outln!(s, "TSTD dataset: {} images of {}×{}, {} measurements each", ds.len(), ds.side, ds.side, ds.measurement_len());
        outln!(s, 
            "splits: train {}, validation {}, test {}; lsqr channel: {}",
            ds.splits.train.len(),
            ds.splits.validation.len(),
            ds.splits.test.len(),
            ds.lsqr.is_some()
        );
        outln!(s, "operator: {}", ds.meta.model);
        outln!(s, "sha256: {}", ds.content_hash());
    } else {
        let v: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|_| Failure::Usage(format!("{}: not a TSTW, TSTD or JSON file", path.display())))?;
        outln!(s, "{}", serde_json::to_string_pretty(&v).unwrap_or_default());
    }
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = std::io::Write::write_all(&mut std::io::stdout(), s.as_bytes());
    Ok(())
}
