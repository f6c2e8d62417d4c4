#[allow(dead_code)]
mod fit_line {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/fit_line.rs"));
}

#[test]
fn fit_line_example_runs() {
    fit_line::run_example().expect("fit_line example should run");
}

#[allow(dead_code)]
mod hadamard_patterns {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/hadamard_patterns.rs"));
}

#[test]
fn hadamard_patterns_example_runs() {
    hadamard_patterns::run_example().expect("hadamard_patterns example should run");
}

#[allow(dead_code)]
mod classical_recon {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/classical_recon.rs"));
}

#[test]
fn classical_recon_example_runs() {
    classical_recon::run_example().expect("classical_recon example should run");
}

#[allow(dead_code)]
mod phase_retrieval {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/phase_retrieval.rs"));
}

#[test]
fn phase_retrieval_example_runs() {
    phase_retrieval::run_example().expect("phase_retrieval example should run");
}

#[allow(dead_code)]
mod two_step_training {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/two_step_training.rs"));
}

#[test]
fn two_step_training_example_runs() {
    two_step_training::run_example().expect("two_step_training example should run");
}

#[allow(dead_code)]
mod compression_sweep {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/compression_sweep.rs"));
}

#[test]
fn compression_sweep_example_runs() {
    compression_sweep::run_example().expect("compression_sweep example should run");
}

#[allow(dead_code)]
mod image_metrics {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/image_metrics.rs"));
}

#[test]
fn image_metrics_example_runs() {
    image_metrics::run_example().expect("image_metrics example should run");
}
