//! Model-based reconstruction: least squares, wavelet-sparse TwIST and
//! phase retrieval from autocorrelations.

mod haar;
mod lsqr;
mod phase;
mod twist;

pub use haar::{haar_dwt, haar_idwt};
pub use lsqr::{lsqr, lsqr_solve, LinearOperator, LsqrConfig, LsqrOutput, LsqrStop};
pub use phase::{
    fourier_magnitude, phase_retrieve, register_to_reference, PhaseRetrievalConfig, PhaseRetrievalOutput,
    Registration, RetrievalMode,
};
pub use twist::{soft_threshold, twist_solve, Regularizer, TwistConfig, TwistOutput};
