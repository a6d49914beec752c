//! Decision-analytic quantification of model risk for classifiers deployed in
//! inspection workflows.
//!
//! The pipeline runs from a test-set confusion matrix to a Dirichlet reliability
//! posterior ([`reliability`]), combines it with activity and failure costs
//! ([`costmodel`]) into per-scenario strategy risks ([`decision`]), and prices
//! further verification through the value of perfect information ([`voi`]).
//! [`explain`] holds a small differentiable image classifier used to exercise
//! counterfactual and saliency explanations, and [`cli`] is the command-line
//! front end.

pub mod cli;
pub mod costmodel;
pub mod decision;
pub mod error;
pub mod explain;
pub mod io;
pub mod manifest;
pub mod reliability;
pub mod rng;
pub mod stats;
pub mod voi;

pub use costmodel::{CostConfig, FailureCostMixture};
pub use decision::{ScenarioMix, Strategy, StrategyRiskTable};
pub use error::{Error, Result};
pub use reliability::{ConfusionMatrix, ReliabilityPosterior, ReliabilitySample};
pub use voi::VopiResult;

/// Tool version embedded in every emitted report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
