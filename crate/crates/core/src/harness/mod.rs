//! Experiment configuration, the `(n, seed)` sweep and the approximate
//! oracle benchmark.

pub mod checks;
pub mod config;
pub mod experiment;
pub mod oracle;

pub use config::{ChainSettings, ExperimentConfig, OutputConfig, SamplerKind, TeacherConfig};
pub use experiment::{run_experiment, summarize, write_outputs, ExperimentResult, ResultRow, Summary, SummaryGroup};
pub use oracle::{approximate_oracle, OracleBenchmark, OracleBudget};
