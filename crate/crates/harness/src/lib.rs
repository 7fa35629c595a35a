//! Experiment engine for the spectral curvature learners: problem generation,
//! metrics, shared gradient streams, trace emission and the training demo.

pub mod demo;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod spec;
pub mod trace;

pub use error::{HarnessError, Result};
pub use experiments::{run_experiment, RunOutput};
pub use metrics::{generate_random_spd, rel_frobenius, wasserstein2_spd};
pub use spec::{ExperimentKind, ExperimentSpec, Method, Precision};
pub use trace::{emit_traces, parse_traces, RunMetadata, TraceFormat, TraceRecord};
