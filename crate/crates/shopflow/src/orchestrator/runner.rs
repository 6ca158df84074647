//! What a task execution sees, and the scripted probe used for fault
//! injection.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    /// Sleep in small steps; `false` if cancelled before the time was up.
    pub fn sleep(&self, ms: u64) -> bool {
        let end = Instant::now() + Duration::from_millis(ms);
        loop {
            if self.is_cancelled() {
                return false;
            }
            let now = Instant::now();
            if now >= end {
                return true;
            }
            std::thread::sleep((end - now).min(Duration::from_millis(10)));
        }
    }
}

pub struct TaskContext {
    pub run_id: String,
    pub task: String,
    pub attempt: u32,
    pub idempotency_key: String,
    /// Task params from the spec, overlaid with the run params' entry for
    /// this task name.
    pub params: Value,
    pub run_params: Value,
    /// Outputs of every task of the run that has succeeded so far.
    pub upstream: BTreeMap<String, Value>,
    pub cancel: CancelToken,
}

impl TaskContext {
    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(Value::as_str)
    }

    pub fn param_u64(&self, key: &str) -> Option<u64> {
        self.params.get(key).and_then(Value::as_u64)
    }

    /// First upstream output carrying `key`, in task-name order.
    pub fn upstream_field(&self, key: &str) -> Option<&Value> {
        self.upstream.values().find_map(|o| o.get(key))
    }
}

/// Executes one action. An `Err` is the attempt's error text.
pub trait TaskRunner: Send + Sync {
    fn run(&self, ctx: &TaskContext) -> Result<Value, String>;
}

impl<F> TaskRunner for F
where
    F: Fn(&TaskContext) -> Result<Value, String> + Send + Sync,
{
    fn run(&self, ctx: &TaskContext) -> Result<Value, String> {
        self(ctx)
    }
}

/// Scripted task. Params:
/// - `sleep_ms`: work time, interruptible by cancel
/// - `fail_times`: fail attempts `1..=fail_times`
/// - `fail_while_exists`: fail while this path exists
/// - `fail_always`: never succeed
/// - `output`: returned on success
pub struct ProbeRunner;

impl TaskRunner for ProbeRunner {
    fn run(&self, ctx: &TaskContext) -> Result<Value, String> {
        if let Some(ms) = ctx.param_u64("sleep_ms") {
            if !ctx.cancel.sleep(ms) {
                return Err("cancelled".into());
            }
        }
        if ctx.params.get("fail_always").and_then(Value::as_bool).unwrap_or(false) {
            return Err("probe: scripted permanent failure".into());
        }
        if let Some(n) = ctx.param_u64("fail_times") {
            if u64::from(ctx.attempt) <= n {
                return Err(format!("probe: scripted failure {} of {n}", ctx.attempt));
            }
        }
        if let Some(p) = ctx.param_str("fail_while_exists") {
            if Path::new(p).exists() {
                return Err(format!("probe: {p} exists"));
            }
        }
        Ok(ctx.params.get("output").cloned().unwrap_or_else(|| json!({ "attempt": ctx.attempt })))
    }
}
