//! Estimation of individualized treatment rules from longitudinal data whose
//! outcomes are observed at irregular, covariate-dependent visit times.
//!
//! The estimator is doubly weighted least squares: a weighted regression of
//! the observed outcomes on a treatment-free model plus `A` times a linear
//! blip, with each observation weighted by a stabilized inverse probability
//! of treatment weight and an inverse intensity of visit weight from an
//! Andersen–Gill rate model. The sign of the fitted blip is the rule.

pub mod bootstrap;
pub mod data;
pub mod dwols;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod propensity;
pub mod sim;
pub mod terms;
pub mod utility;
pub mod visits;

pub use bootstrap::{bootstrap_ci, two_stage_resample, BootstrapResult, Interval};
pub use data::{
    analysis_rows, check_positivity, load_csv, read_csv, read_csv_rows, write_csv, write_csv_to, AnalysisRows,
    CovariateSource, CsvSchema, LongitudinalDataset, PersonTimeRow, PositivityReport, PositivityThresholds, Schema,
    TREATMENT,
};
pub use dwols::{fit_dwols, BlipFit, LinearRule, ModelSpec, WeightSummary};
pub use error::{Error, Result};
pub use numerics::{newton_maximize, solve_wls, NewtonOptions, NewtonResult, WlsSolution};
pub use pipeline::{Pipeline, PipelineFit, Variant, Weighting};
pub use propensity::{fit_logistic, ipt_weights, PropensityFit, Truncation};
pub use sim::{run_scenario, simulate_cohort, true_blip, Execution, ScenarioConfig, SimMetrics};
pub use terms::{Term, Transform};
pub use utility::{bmi_utility, score_bmi_rows};
pub use visits::{fit_andersen_gill, iiv_weights, VisitModelFit};
