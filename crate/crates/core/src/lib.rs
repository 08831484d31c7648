//! Counterfactual means and causal contrasts under covariate shift.
//!
//! Randomized experiments identify effects in the sample at hand; carrying
//! them to a broader or different population requires adjusting for how the
//! study sample was selected. This crate estimates counterfactual means and
//! contrasts for multi-valued treatments under two estimands, the overall
//! sample (generalization) and an external target sample (transportation),
//! via outcome modeling, inverse selection weighting, and the augmented
//! doubly-robust combination of the two, with cross-fitted ridge-GLM
//! nuisances, bootstrap or influence-function inference, entropy-balancing
//! calibration when the target is only known through summary moments,
//! balance/overlap/heterogeneity diagnostics, and a Monte Carlo harness for
//! validating estimator behavior.
//!
//! Modules:
//! * [`data`]: observed-data container, ingestion, structural validation;
//! * [`nuisance`]: cross-fitted ridge GLMs for the outcome model and the
//!   treatment/selection propensities;
//! * [`estimators`]: OM / ISW / AISW under both estimands, with influence
//!   matrices, contrasts, and AISW standard errors;
//! * [`bootstrap`]: nonparametric and Bayesian bootstrap;
//! * [`calibration`]: entropy-balancing weights toward target moments;
//! * [`diagnostics`]: SMD balance, overlap, a simplified omnibus
//!   heterogeneity test, and the TATE-SATE bias decomposition;
//! * [`simulation`]: data-generating processes and the replication harness;
//! * [`analysis`]: the composed end-to-end pipeline.

pub mod analysis;
pub mod bootstrap;
pub mod calibration;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod nuisance;
pub mod simulation;

pub use analysis::{run_estimate, AnalysisOutput, BootstrapPlan, EstimateConfig};
pub use data::{load_dataset, validate_selection_pattern, ColumnSchema, Dataset, SampleView, Selector};
pub use error::{Error, ErrorCategory, Result};
pub use estimators::{
    contrast, estimate_aisw, estimate_isw, estimate_om, EstimandKind, EstimateResult,
    EstimatorKind, InfluenceMatrix,
};
pub use nuisance::{
    fit_nuisances, make_folds, FoldAssignment, NuisanceConfig, NuisanceFits, TrimBounds,
};
