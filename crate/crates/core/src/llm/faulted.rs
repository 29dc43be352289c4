use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

/// Function name substituted by a wrong-function fault. Never registered.
pub const WRONG_FUNCTION_NAME: &str = "execute_proccess_v2";

/// Content returned in place of a function call by a no-execution fault.
pub const NO_EXECUTION_REPLY: &str = "task noted";

/// Per-call fault probabilities. The three faults are mutually exclusive:
/// one uniform draw per call selects at most one of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultProfile {
    pub p_wrong_function: f64,
    pub p_wrong_gcode: f64,
    pub p_no_execution: f64,
    pub seed: u64,
}

impl FaultProfile {
    pub fn none(seed: u64) -> Self {
        Self {
            p_wrong_function: 0.0,
            p_wrong_gcode: 0.0,
            p_no_execution: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ps = [self.p_wrong_function, self.p_wrong_gcode, self.p_no_execution];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(format!("fault probabilities must lie in [0, 1]: {ps:?}"));
        }
        if ps.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(format!("fault probabilities sum above 1: {ps:?}"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    WrongFunction,
    WrongGCode,
    NoExecution,
}

/// Wraps a backend and corrupts a seeded fraction of its responses.
///
/// The inner backend is always consulted first so that stateful backends
/// (scripts) stay aligned with the call sequence.
pub struct FaultedBackend<B> {
    inner: B,
    profile: FaultProfile,
    program_text: String,
    rng: ChaCha8Rng,
    calls: u64,
    injected: Vec<(u64, FaultKind)>,
}

impl<B: ChatBackend> FaultedBackend<B> {
    /// `program_text` replaces the `gcode` argument on wrong-G-code faults.
    pub fn new(inner: B, profile: FaultProfile, program_text: impl Into<String>) -> Self {
        Self {
            inner,
            profile,
            program_text: program_text.into(),
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            calls: 0,
            injected: Vec::new(),
        }
    }

    /// `(call index, fault)` for every call that was actually altered.
    pub fn injected(&self) -> &[(u64, FaultKind)] {
        &self.injected
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn into_inner(self) -> B {
        self.inner
    }

    fn draw(&mut self) -> Option<FaultKind> {
        let u: f64 = self.rng.random();
        let p = &self.profile;
        if u < p.p_wrong_function {
            Some(FaultKind::WrongFunction)
        } else if u < p.p_wrong_function + p.p_wrong_gcode {
            Some(FaultKind::WrongGCode)
        } else if u < p.p_wrong_function + p.p_wrong_gcode + p.p_no_execution {
            Some(FaultKind::NoExecution)
        } else {
            None
        }
    }

    fn apply(&self, fault: FaultKind, response: &mut ChatResponse) -> bool {
        match fault {
            FaultKind::WrongFunction => match response.message.function_call.as_mut() {
                Some(call) => {
                    call.name = WRONG_FUNCTION_NAME.to_string();
                    true
                }
                None => false,
            },
            FaultKind::WrongGCode => {
                let Some(call) = response.message.function_call.as_mut() else {
                    return false;
                };
                let Ok(Value::Object(mut args)) = serde_json::from_str::<Value>(&call.arguments) else {
                    return false;
                };
                if !args.get("gcode").is_some_and(Value::is_string) {
                    return false;
                }
                args.insert("gcode".into(), Value::String(self.program_text.clone()));
                call.arguments = Value::Object(args).to_string();
                true
            }
            FaultKind::NoExecution => {
                *response = ChatResponse::stop(NO_EXECUTION_REPLY);
                true
            }
        }
    }
}

impl<B: ChatBackend> ChatBackend for FaultedBackend<B> {
    fn complete(&mut self, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
        let index = self.calls;
        self.calls += 1;
        let fault = self.draw();
        let mut response = self.inner.complete(request)?;
        if let Some(fault) = fault {
            if request.functions.is_empty() && fault != FaultKind::NoExecution {
                return Ok(response);
            }
            if self.apply(fault, &mut response) {
                self.injected.push((index, fault));
            }
        }
        Ok(response)
    }

    fn label(&self) -> String {
        format!("faulted({})", self.inner.label())
    }
}
