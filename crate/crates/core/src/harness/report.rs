use std::fmt::Write as _;
use std::path::PathBuf;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::ErrorClass;
use crate::llm::FaultProfile;

/// Result of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_index: usize,
    pub seed: u64,
    pub success: bool,
    pub failed_operation: Option<String>,
    pub error_class: Option<ErrorClass>,
    pub reason: Option<String>,
    pub backend_calls: usize,
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub backend: String,
    pub master_seed: u64,
    /// False when the backend is a remote model.
    pub deterministic: bool,
    pub retry_policy: String,
    pub max_steps: Option<usize>,
    pub depth_limit: usize,
    pub model: String,
    pub fault_profile: Option<FaultProfile>,
}

/// Aggregate over all trials, in the shape of the success-rate and
/// error-analysis tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub n_trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub success_rate: f64,
    pub overall_error_rate: f64,
    /// Failed trials attributed to each operation, as a fraction of all trials.
    pub per_operation_failure_rate: IndexMap<String, f64>,
    pub per_operation_failures: IndexMap<String, usize>,
    pub error_counts: IndexMap<ErrorClass, usize>,
    /// Share of failed trials per class; all zero when nothing failed.
    pub error_breakdown: IndexMap<ErrorClass, f64>,
    pub metadata: ReportMetadata,
}

impl ExperimentReport {
    /// Folds trial outcomes, in the order given.
    pub fn aggregate(
        scenario: &str,
        expected_operations: &[String],
        trials: &[TrialOutcome],
        metadata: ReportMetadata,
    ) -> Self {
        let n = trials.len();
        let mut per_op: IndexMap<String, usize> = expected_operations.iter().map(|op| (op.clone(), 0)).collect();
        let mut counts: IndexMap<ErrorClass, usize> = ErrorClass::ALL.iter().map(|c| (*c, 0)).collect();
        let mut failures = 0;
        for t in trials.iter().filter(|t| !t.success) {
            failures += 1;
            if let Some(c) = t.error_class {
                counts[&c] += 1;
            }
            if let Some(op) = &t.failed_operation {
                *per_op.entry(op.clone()).or_insert(0) += 1;
            }
        }
        let rate = |k: usize, of: usize| if of == 0 { 0.0 } else { k as f64 / of as f64 };
        Self {
            scenario: scenario.to_string(),
            n_trials: n,
            successes: n - failures,
            failures,
            success_rate: rate(n - failures, n),
            overall_error_rate: rate(failures, n),
            per_operation_failure_rate: per_op.iter().map(|(op, k)| (op.clone(), rate(*k, n))).collect(),
            per_operation_failures: per_op,
            error_breakdown: counts.iter().map(|(c, k)| (*c, rate(*k, failures))).collect(),
            error_counts: counts,
            metadata,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Json,
}

/// Compact two-decimal rates: `1`, `0`, `.86`.
pub fn format_rate(x: f64) -> String {
    let s = format!("{x:.2}");
    match s.as_str() {
        "1.00" => "1".into(),
        "0.00" | "-0.00" => "0".into(),
        _ => s.strip_prefix('0').map(str::to_string).unwrap_or(s),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    chars
        .next()
        .map(|c| c.to_uppercase().chain(chars).collect())
        .unwrap_or_default()
}

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("reports serialize") + "\n",
        ReportFormat::Text => render_text(report),
    }
}

fn render_text(r: &ExperimentReport) -> String {
    let mut rows: Vec<(String, f64)> = vec![
        ("Success Rate".into(), r.success_rate),
        ("Overall Error Rate".into(), r.overall_error_rate),
    ];
    for (i, (op, rate)) in r.per_operation_failure_rate.iter().enumerate() {
        rows.push((format!("P{}. {} Failure Rate", i + 1, capitalize(op)), *rate));
    }
    let breakdown: Vec<(String, f64)> = r
        .error_breakdown
        .iter()
        .map(|(c, v)| (c.title().to_string(), *v))
        .collect();
    let width = rows.iter().chain(&breakdown).map(|(l, _)| l.len()).max().unwrap_or(0) + 4;

    let mut out = String::new();
    let m = &r.metadata;
    let _ = writeln!(
        out,
        "{} ({} trials, backend {}, seed {})",
        r.scenario, r.n_trials, m.backend, m.master_seed
    );
    let _ = writeln!(out, "\nSuccess rates");
    for (label, v) in &rows {
        let _ = writeln!(out, "- {label:<width$}{}", format_rate(*v));
    }
    let _ = writeln!(out, "\nError analysis (share of failed trials)");
    for (label, v) in &breakdown {
        let _ = writeln!(out, "- {label:<width$}{}", format_rate(*v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_rate_style() {
        assert_eq!(format_rate(1.0), "1");
        assert_eq!(format_rate(0.0), "0");
        assert_eq!(format_rate(0.86), ".86");
        assert_eq!(format_rate(0.06), ".06");
        assert_eq!(format_rate(0.999), "1");
    }
}
