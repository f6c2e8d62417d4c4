//! Single-pixel computational imaging.
//!
//! The crate simulates compressed single-pixel acquisition with Hadamard and
//! random illumination patterns, reconstructs images with classical solvers
//! (LSQR, TwIST, error-reduction phase retrieval) and with learned networks
//! trained in two steps: a fully-connected layer learns the inverse operator
//! first, then a frozen copy of it feeds a U-Net that learns the regularizer.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiments;
pub mod fft;
pub mod learned;
pub mod measurement;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod rng;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
