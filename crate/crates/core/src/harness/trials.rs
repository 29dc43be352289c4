use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;
use thiserror::Error;

use super::classify::{classify_failure, Classification, ClassifyContext};
use super::report::{ExperimentReport, ReportMetadata, TrialOutcome};
use super::scenario::{BackendSpec, CalibrationTarget, Scenario, ScenarioError};
use super::ErrorClass;
use crate::agents::Trace;
use crate::llm::{
    ChatBackend, ChatResponse, FaultProfile, FaultedBackend, PlannerBackend, RemoteBackend, RemoteConfig,
    ScriptedBackend,
};

/// Description written into every report.
pub const RETRY_POLICY: &str =
    "one clarifying retry when a function call was expected; resource-agent questions are routed back to the sender";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("at least one trial is required")]
    NoTrials,
    #[error("fault calibration failed: {0}")]
    Calibration(String),
    #[error("backend setup failed: {0}")]
    Backend(String),
    #[error("cannot write {}: {message}", .path.display())]
    Io { path: PathBuf, message: String },
}

/// Derives an independent 64-bit seed for stream `stream` of `seed`.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Debug, Clone, Default)]
pub struct TrialOptions {
    /// Worker threads; 0 uses rayon's default.
    pub workers: usize,
    /// Directory for `trial-NNNN.jsonl` traces; nothing is written when unset.
    pub trace_dir: Option<PathBuf>,
    /// Replaces the scenario's backend.
    pub backend_override: Option<BackendSpec>,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub trials: Vec<TrialOutcome>,
}

/// A backend spec with files read and faults calibrated, ready to
/// instantiate once per trial.
#[derive(Debug, Clone)]
pub enum BackendPlan {
    Planner,
    Faulted(FaultProfile),
    Scripted(Vec<ChatResponse>),
    Remote { config: RemoteConfig },
}

impl BackendPlan {
    pub fn prepare(spec: &BackendSpec, scenario: &Scenario) -> Result<Self, HarnessError> {
        spec.validate().map_err(ScenarioError::Invalid)?;
        Ok(match spec {
            BackendSpec::Planner => Self::Planner,
            BackendSpec::Faulted { profile: Some(p), .. } => Self::Faulted(*p),
            BackendSpec::Faulted {
                calibrate: Some(target),
                ..
            } => Self::Faulted(calibrate_for(scenario, target)?),
            BackendSpec::Faulted { .. } => unreachable!("validated above"),
            BackendSpec::Scripted { path } => {
                let path = scenario.base_dir.join(path);
                let script = ScriptedBackend::from_file(&path).map_err(|e| HarnessError::Backend(e.to_string()))?;
                Self::Scripted(script_responses(script))
            }
            BackendSpec::Remote { base_url, .. } => {
                let config = RemoteConfig::from_env(base_url.as_deref())
                    .ok_or_else(|| HarnessError::Backend("remote backend needs a base_url or LLM_BASE_URL".into()))?;
                Self::Remote { config }
            }
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Planner => "planner",
            Self::Faulted(_) => "faulted",
            Self::Scripted(_) => "scripted",
            Self::Remote { .. } => "remote",
        }
    }

    fn instantiate(&self, scenario: &Scenario, trial_seed: u64) -> Result<Box<dyn ChatBackend>, HarnessError> {
        Ok(match self {
            Self::Planner => Box::new(PlannerBackend),
            Self::Faulted(p) => {
                let profile = p.with_seed(split_seed(p.seed ^ trial_seed, 1));
                Box::new(FaultedBackend::new(PlannerBackend, profile, scenario.gcode.clone()))
            }
            Self::Scripted(responses) => Box::new(ScriptedBackend::new(responses.clone())),
            Self::Remote { config } => {
                Box::new(RemoteBackend::new(config.clone()).map_err(|e| HarnessError::Backend(e.to_string()))?)
            }
        })
    }
}

fn script_responses(mut script: ScriptedBackend) -> Vec<ChatResponse> {
    let mut out = Vec::with_capacity(script.remaining());
    let msgs = [crate::llm::ChatMessage::user("replay")];
    let request = crate::llm::ChatRequest {
        messages: &msgs,
        functions: &[],
        model: "",
        world: None,
    };
    while let Ok(r) = script.complete(&request) {
        out.push(r);
    }
    out
}

/// Runs one workflow and classifies it.
pub fn run_trial(
    scenario: &Scenario,
    plan: &BackendPlan,
    trial_index: usize,
    trial_seed: u64,
) -> Result<(TrialOutcome, Trace), HarnessError> {
    let backend = plan.instantiate(scenario, trial_seed)?;
    let (mut rt, pa) = scenario.build_runtime(backend, split_seed(trial_seed, 2));
    let workflow = rt.run_workflow(pa, &scenario.user_instructions(), &scenario.expected_operations);
    let trace = rt.trace().clone();
    let machines = scenario.machines();
    let ctx = ClassifyContext {
        program: &scenario.program,
        machines: &machines,
        expected_operations: &scenario.expected_operations,
    };
    let outcome = match classify_failure(trace.records(), &ctx) {
        Classification::NotAFailure => TrialOutcome {
            trial_index,
            seed: trial_seed,
            success: true,
            failed_operation: None,
            error_class: None,
            reason: None,
            backend_calls: workflow.backend_calls,
            trace_path: None,
        },
        Classification::Failure {
            class,
            failed_operation,
            reason,
            ..
        } => TrialOutcome {
            trial_index,
            seed: trial_seed,
            success: false,
            failed_operation: Some(failed_operation),
            error_class: Some(class),
            reason: Some(reason),
            backend_calls: workflow.backend_calls,
            trace_path: None,
        },
    };
    Ok((outcome, trace))
}

/// Runs `n` independent trials; trial `i` is seeded with
/// `split_seed(master_seed, i)`. Results are folded in trial order, so the
/// report does not depend on the worker count.
pub fn run_trials(
    scenario: &Scenario,
    n: usize,
    master_seed: u64,
    options: &TrialOptions,
) -> Result<ExperimentRun, HarnessError> {
    if n == 0 {
        return Err(HarnessError::NoTrials);
    }
    scenario.validate()?;
    let spec = options.backend_override.as_ref().unwrap_or(&scenario.backend);
    let plan = BackendPlan::prepare(spec, scenario)?;
    if let Some(dir) = &options.trace_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.clone(),
            message: e.to_string(),
        })?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| HarnessError::Backend(e.to_string()))?;
    let trials: Vec<TrialOutcome> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let (mut outcome, trace) = run_trial(scenario, &plan, i, split_seed(master_seed, i as u64))?;
                if let Some(dir) = &options.trace_dir {
                    let path = dir.join(format!("trial-{i:04}.jsonl"));
                    std::fs::write(&path, trace.to_jsonl()).map_err(|e| HarnessError::Io {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                    outcome.trace_path = Some(path);
                }
                Ok(outcome)
            })
            .collect::<Result<_, HarnessError>>()
    })?;

    let model = match spec {
        BackendSpec::Remote { model: Some(m), .. } => m.clone(),
        _ => scenario.model.clone(),
    };
    let metadata = ReportMetadata {
        backend: plan.label().into(),
        master_seed,
        deterministic: !matches!(plan, BackendPlan::Remote { .. }),
        retry_policy: match &plan {
            BackendPlan::Remote { config } => format!(
                "{RETRY_POLICY}; remote: temperature not sent, {} transport retries with {} ms doubling backoff on connection errors and 5xx",
                config.max_retries,
                config.backoff.as_millis()
            ),
            _ => RETRY_POLICY.into(),
        },
        max_steps: scenario.max_steps,
        depth_limit: scenario.depth_limit,
        model,
        fault_profile: match &plan {
            BackendPlan::Faulted(p) => Some(*p),
            _ => None,
        },
    };
    let report = ExperimentReport::aggregate(&scenario.name, &scenario.expected_operations, &trials, metadata);
    Ok(ExperimentRun { report, trials })
}

/// Backend calls of a fault-free planner run, in order; `true` marks calls
/// whose arguments carry G-code and can therefore be misallocated.
pub fn call_slots(scenario: &Scenario) -> Result<Vec<bool>, HarnessError> {
    let (outcome, trace) = run_trial(scenario, &BackendPlan::Planner, 0, 0)?;
    if !outcome.success {
        return Err(HarnessError::Calibration(format!(
            "the planner does not complete the scenario: {}",
            outcome.reason.unwrap_or_default()
        )));
    }
    Ok(trace
        .responses()
        .iter()
        .map(|r| {
            r.function_call()
                .and_then(|c| serde_json::from_str::<Value>(&c.arguments).ok())
                .is_some_and(|a| a.get("gcode").is_some_and(Value::is_string))
        })
        .collect())
}

/// Exact first-failure probabilities of a faulted planner run.
///
/// At each call a fault is drawn. A wrong function name or, on calls with
/// G-code, a wrong section fails the trial with that class. A missing call is
/// retried once with a fresh draw, so with `q = f + g + n` a call passes with
/// probability `(1 + n)(1 - q)`, fails its class with `f(1 + n)` or
/// `g(1 + n)`, and ends in inexecution with `n^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedOutcome {
    pub error_rate: f64,
    /// Probability of each class, in [`ErrorClass::ALL`] order.
    pub class_probability: [f64; 3],
}

impl PredictedOutcome {
    pub fn mix(&self) -> [f64; 3] {
        self.class_probability.map(|p| {
            if self.error_rate > 0.0 {
                p / self.error_rate
            } else {
                0.0
            }
        })
    }
}

pub fn predict(slots: &[bool], profile: &FaultProfile) -> PredictedOutcome {
    let (f, n) = (profile.p_wrong_function, profile.p_no_execution);
    let mut alive = 1.0;
    let mut class = [0.0; 3];
    for &eligible in slots {
        let g = if eligible { profile.p_wrong_gcode } else { 0.0 };
        let q = f + g + n;
        class[0] += alive * f * (1.0 + n);
        class[1] += alive * g * (1.0 + n);
        class[2] += alive * n * n;
        alive *= (1.0 + n) * (1.0 - q);
    }
    PredictedOutcome {
        error_rate: 1.0 - alive,
        class_probability: class,
    }
}

/// Solves for per-call fault probabilities that give `target.error_rate`
/// failed trials split by `target.mix`.
pub fn calibrate(slots: &[bool], target: &CalibrationTarget) -> Result<FaultProfile, HarnessError> {
    let want: [f64; 3] = target.mix.map(|m| m * target.error_rate);
    let calls = slots.len() as f64;
    let eligible = slots.iter().filter(|e| **e).count() as f64;
    if calls == 0.0 {
        return Err(HarnessError::Calibration("the scenario makes no backend calls".into()));
    }
    if want[1] > 0.0 && eligible == 0.0 {
        return Err(HarnessError::Calibration(
            "no call carries G-code, so allocation faults cannot occur".into(),
        ));
    }
    let mut p = FaultProfile {
        p_wrong_function: want[0] / calls,
        p_wrong_gcode: if eligible > 0.0 { want[1] / eligible } else { 0.0 },
        p_no_execution: (want[2] / calls).sqrt(),
        seed: target.seed,
    };
    for _ in 0..10_000 {
        let got = predict(slots, &p).class_probability;
        let ratio = |i: usize| if got[i] > 0.0 { want[i] / got[i] } else { 1.0 };
        let next = FaultProfile {
            p_wrong_function: p.p_wrong_function * ratio(0),
            p_wrong_gcode: p.p_wrong_gcode * ratio(1),
            p_no_execution: p.p_no_execution * ratio(2).sqrt(),
            seed: p.seed,
        };
        let delta = (next.p_wrong_function - p.p_wrong_function).abs()
            + (next.p_wrong_gcode - p.p_wrong_gcode).abs()
            + (next.p_no_execution - p.p_no_execution).abs();
        p = next;
        if delta < 1e-15 {
            break;
        }
    }
    p.validate().map_err(HarnessError::Calibration)?;
    let got = predict(slots, &p).class_probability;
    if got.iter().zip(want).any(|(g, w)| (g - w).abs() > 1e-9) {
        return Err(HarnessError::Calibration(format!(
            "no fault profile reaches {want:?} (closest {got:?})"
        )));
    }
    Ok(p)
}

fn calibrate_for(scenario: &Scenario, target: &CalibrationTarget) -> Result<FaultProfile, HarnessError> {
    calibrate(&call_slots(scenario)?, target)
}

/// Fraction of failed trials in `class`.
pub fn class_share(trials: &[TrialOutcome], class: ErrorClass) -> f64 {
    let failed = trials.iter().filter(|t| !t.success).count();
    if failed == 0 {
        return 0.0;
    }
    trials.iter().filter(|t| t.error_class == Some(class)).count() as f64 / failed as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seed_streams_differ() {
        assert_eq!(split_seed(42, 0), split_seed(42, 0));
        assert_ne!(split_seed(42, 0), split_seed(42, 1));
        assert_ne!(split_seed(42, 0), split_seed(43, 0));
    }

    #[test]
    fn prediction_edge_cases() {
        let slots = [false, true, false];
        let none = predict(&slots, &FaultProfile::none(0));
        assert_eq!(none.error_rate, 0.0);
        let mut p = FaultProfile::none(0);
        p.p_wrong_function = 1.0;
        let all = predict(&slots, &p);
        assert!((all.error_rate - 1.0).abs() < 1e-12);
        assert!((all.class_probability[0] - 1.0).abs() < 1e-12);
        let mut p = FaultProfile::none(0);
        p.p_no_execution = 0.5;
        // each call: ok .75, inexecution .25
        let got = predict(&[false], &p);
        assert!((got.error_rate - 0.25).abs() < 1e-12);
    }

    #[test]
    fn calibration_hits_targets() {
        let slots = [false, true, false, true, false, true, false, true, false];
        let target = CalibrationTarget {
            error_rate: 0.14,
            mix: [0.43, 0.14, 0.43],
            seed: 7,
        };
        let p = calibrate(&slots, &target).unwrap();
        let got = predict(&slots, &p);
        assert!((got.error_rate - 0.14).abs() < 1e-9);
        for (m, want) in got.mix().iter().zip(target.mix) {
            assert!((m - want).abs() < 1e-9);
        }
        assert_eq!(p.seed, 7);
    }

    #[test]
    fn calibration_rejects_impossible_targets() {
        let target = CalibrationTarget {
            error_rate: 0.1,
            mix: [0.0, 1.0, 0.0],
            seed: 0,
        };
        assert!(calibrate(&[false, false], &target).is_err());
        assert!(calibrate(&[], &target).is_err());
    }
}
