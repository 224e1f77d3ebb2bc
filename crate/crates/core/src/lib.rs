//! Counterfactually fair split conformal prediction.
//!
//! Split conformal prediction whose conformity score is symmetrized over
//! interventions on a protected attribute, with synthetic structural causal
//! models, fairness baselines, evaluation metrics and an experiment harness.

pub mod baselines;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod math;
pub mod metrics;
pub mod models;
pub mod scm;
pub mod scores;

pub use conformal::{calibrate, cf_cp, posthoc_union, split_cp, Calibration, PredictionSet, RowSets};
pub use dataset::{Dataset, Task};
pub use error::{Error, Result};
pub use harness::{run_experiment, ExperimentConfig, ResultRow};
pub use scores::{Aggregator, ScoreKind};
