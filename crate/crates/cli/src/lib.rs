//! Monte Carlo experiment harness around [`ris_bc`].
//!
//! An [`ExperimentSpec`] is read from TOML, expanded into independent
//! (sweep point, realization) jobs, executed on a thread pool and written as
//! a detail CSV plus a summary CSV of means and standard errors.

pub mod experiment;
pub mod output;
pub mod selftest;
pub mod spec;

pub use experiment::run_experiment;
pub use output::{emit_results, summarize, Record, SummaryRow};
pub use spec::{ExperimentKind, ExperimentSpec, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("no records to write")]
    EmptyResults,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Solver(#[from] ris_bc::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Spec(_) => 2,
            _ => 1,
        }
    }
}
