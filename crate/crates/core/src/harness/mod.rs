//! Scenarios, repeated trials, failure classification, and reports.
//!
//! A [`Scenario`] bundles agent documents, a G-code program, the operations
//! the product needs, and a backend. [`run_trials`] runs it many times with
//! independent seeds, classifies each failed trace with
//! [`classify_failure`], and folds the outcomes into an
//! [`ExperimentReport`].

mod classify;
mod report;
mod scenario;
mod trials;

pub use classify::{classify_failure, Classification, ClassifyContext, ErrorClass};
pub use report::{format_rate, render_report, ExperimentReport, ReportFormat, ReportMetadata, TrialOutcome};
pub use scenario::{BackendSpec, CalibrationTarget, Scenario, ScenarioError};
pub use trials::{
    calibrate, call_slots, class_share, predict, run_trial, run_trials, split_seed, BackendPlan, ExperimentRun,
    HarnessError, PredictedOutcome, TrialOptions, RETRY_POLICY,
};
