//! Spectral density estimation through the dual problems of THREE-like
//! spectrum approximation with Alpha, Beta and Tau divergences.
//!
//! The pipeline is: record → [`estimation::sample_covariances`] →
//! [`estimation::correlogram`] → [`estimation::sigma_hat`] →
//! [`dual::DualProblem::solve`]. The [`interpret`] module checks that the
//! dual objective is a weighted divergence from the correlogram and evaluates
//! the prediction-error criterion of the `ν = 1` solutions.

pub mod divergence;
pub mod dual;
pub mod error;
pub mod estimation;
pub mod filterbank;
pub mod freqgrid;
pub mod interpret;
pub mod simulate;

pub use divergence::DivergenceSpec;
pub use dual::{
    DualProblem, DualVariable, Family, Feasibility, IterationRecord, Method, ProblemSpec,
    Solution, SolverOptions,
};
pub use error::{Error, Result};
pub use estimation::{CovarianceEstimate, CovarianceSequence, Correlogram, TimeSeries, Window};
pub use filterbank::{PriorModel, ShapingFilter, StateSpaceFilter};
pub use freqgrid::{CMatrix, FrequencyGrid, MatrixFunction, RMatrix, SpectralDensity};
pub use interpret::{ArModel, InterpretationReport, PemCheck, ScalarFactor};
