//! Data-driven output-feedback stabilization of unknown discrete-time linear
//! plants by stabilizing policy iteration.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`excitation::collect`] drives the plant with a multisine and logs
//!    input, output and the filter-bank reconstruction state.
//! 2. [`excitation::build_regression`] turns the log into quadratic data
//!    matrices.
//! 3. [`learner::run_spi`] learns a gain `K` for the feedback `u = -K r`.
//! 4. [`oracle`] checks the result against the true model.
//!
//! [`experiment`] wires these together behind a TOML configuration and
//! writes the CSV/JSON artifacts.

pub mod error;
pub mod excitation;
pub mod experiment;
pub mod learner;
pub mod linalg;
pub mod oracle;
pub mod plant;
pub mod reconstruction;
pub mod tensor_ops;

pub use error::{Result, SpiError};
pub use excitation::{
    build_regression, collect, rank_condition, ExcitationSpec, ExperimentLog, RankReport,
    RegressionData,
};
pub use learner::{run_spi, IterationRecord, SpiConfig, SpiOutcome};
pub use nalgebra::{Complex, DMatrix, DVector};
pub use oracle::{construct_mbar, dlyap, verify_iteration, ParameterizationMatrix};
pub use plant::{IoPlant, LtiSystem, SimulatedPlant};
pub use reconstruction::FilterBank;
pub use tensor_ops::{kron, mat_from_vecs, vec, vecs, vecv, SymMatrix};
