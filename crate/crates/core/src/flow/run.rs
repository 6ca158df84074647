//! Run state as a fold over journal events.
//!
//! [`FlowRun::apply`] refuses any event that would break the state machine,
//! so a journal that folds cleanly is a valid history by construction.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::spec::FlowSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Running,
    Retrying,
    Succeeded,
    Failed,
    Skipped,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Succeeded | TaskStatus::Failed | TaskStatus::Skipped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Succeeded | RunStatus::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Pending => "pending",
            RunStatus::Running => "running",
            RunStatus::Succeeded => "succeeded",
            RunStatus::Failed => "failed",
        }
    }
}

impl core::str::FromStr for RunStatus {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        [RunStatus::Pending, RunStatus::Running, RunStatus::Succeeded, RunStatus::Failed]
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or(())
    }
}

pub const CANCELLED: &str = "cancelled";

/// Everything that can happen to a flow or run. Journal lines carry one each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    FlowRegistered {
        flow_id: String,
        version: u32,
        spec: FlowSpec,
    },
    RunCreated {
        run_id: String,
        flow_id: String,
        spec_version: u32,
        spec: FlowSpec,
        params: Value,
        retry_of: Option<String>,
    },
    TaskStarted {
        run_id: String,
        task: String,
        attempt: u32,
        idempotency_key: String,
    },
    TaskSucceeded {
        run_id: String,
        task: String,
        attempt: u32,
        output: Value,
    },
    /// `retry_at` set means the task goes to `retrying`, otherwise `failed`.
    TaskFailed {
        run_id: String,
        task: String,
        attempt: u32,
        error: String,
        retry_at: Option<u64>,
    },
    TaskSkipped {
        run_id: String,
        task: String,
        reason: String,
    },
    CancelRequested {
        run_id: String,
    },
    RunFinished {
        run_id: String,
        status: RunStatus,
        reason: Option<String>,
    },
    NotificationAttempt {
        run_id: String,
        idempotency_key: String,
        attempt: u32,
        delivered: bool,
        detail: String,
    },
}

impl Event {
    pub fn run_id(&self) -> Option<&str> {
        match self {
            Event::FlowRegistered { .. } => None,
            Event::RunCreated { run_id, .. }
            | Event::TaskStarted { run_id, .. }
            | Event::TaskSucceeded { run_id, .. }
            | Event::TaskFailed { run_id, .. }
            | Event::TaskSkipped { run_id, .. }
            | Event::CancelRequested { run_id }
            | Event::RunFinished { run_id, .. }
            | Event::NotificationAttempt { run_id, .. } => Some(run_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped {
    pub seq: u64,
    pub at_ms: u64,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub started_at: u64,
    pub ended_at: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub name: String,
    pub status: TaskStatus,
    pub attempts: u32,
    pub started_at: Option<u64>,
    pub ended_at: Option<u64>,
    pub error: Option<String>,
    pub retry_at: Option<u64>,
    pub output: Value,
    pub history: Vec<AttemptRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationState {
    pub idempotency_key: String,
    pub attempts: u32,
    pub delivered: bool,
    pub last_detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRun {
    pub run_id: String,
    pub flow_id: String,
    pub spec_version: u32,
    pub spec: FlowSpec,
    pub params: Value,
    pub retry_of: Option<String>,
    pub status: RunStatus,
    pub reason: Option<String>,
    pub created_at: u64,
    pub started_at: Option<u64>,
    pub ended_at: Option<u64>,
    pub cancel_requested: bool,
    pub tasks: Vec<TaskState>,
    pub notification: Option<NotificationState>,
    /// Sequence number of the last event folded into this run.
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal transition in run {run_id}: {detail}")]
pub struct TransitionError {
    pub run_id: String,
    pub detail: String,
}

/// Key guarding a single execution of one task attempt.
pub fn attempt_key(run_id: &str, task: &str, attempt: u32) -> String {
    format!("{run_id}:{task}:{attempt}")
}

impl FlowRun {
    /// Build a run from its `RunCreated` event.
    pub fn create(stamped: &Stamped) -> Option<FlowRun> {
        let Event::RunCreated {
            run_id,
            flow_id,
            spec_version,
            spec,
            params,
            retry_of,
        } = &stamped.event
        else {
            return None;
        };
        Some(FlowRun {
            run_id: run_id.clone(),
            flow_id: flow_id.clone(),
            spec_version: *spec_version,
            spec: spec.clone(),
            params: params.clone(),
            retry_of: retry_of.clone(),
            status: RunStatus::Pending,
            reason: None,
            created_at: stamped.at_ms,
            started_at: None,
            ended_at: None,
            cancel_requested: false,
            tasks: spec
                .tasks
                .iter()
                .map(|t| TaskState {
                    name: t.name.clone(),
                    status: TaskStatus::Pending,
                    attempts: 0,
                    started_at: None,
                    ended_at: None,
                    error: None,
                    retry_at: None,
                    output: Value::Null,
                    history: Vec::new(),
                })
                .collect(),
            notification: None,
            last_seq: stamped.seq,
        })
    }

    fn illegal(&self, detail: String) -> TransitionError {
        TransitionError {
            run_id: self.run_id.clone(),
            detail,
        }
    }

    fn task_index(&self, name: &str) -> Result<usize, TransitionError> {
        self.spec.index_of(name).ok_or_else(|| self.illegal(format!("unknown task `{name}`")))
    }

    pub fn task(&self, name: &str) -> Option<&TaskState> {
        self.tasks.iter().find(|t| t.name == name)
    }

    fn deps_succeeded(&self, i: usize) -> bool {
        self.spec.tasks[i].depends_on.iter().all(|d| {
            self.spec
                .index_of(d)
                .is_some_and(|j| self.tasks[j].status == TaskStatus::Succeeded)
        })
    }

    pub fn apply(&mut self, stamped: &Stamped) -> Result<(), TransitionError> {
        let at = stamped.at_ms;
        let terminal = self.status.is_terminal();
        match &stamped.event {
            Event::FlowRegistered { .. } | Event::RunCreated { .. } => {
                return Err(self.illegal("run already exists".into()));
            }
            Event::TaskStarted { task, attempt, .. } => {
                let i = self.task_index(task)?;
                if terminal {
                    return Err(self.illegal(format!("{task} started after run finished")));
                }
                let max = self.spec.tasks[i].retry.max_attempts;
                let t = &self.tasks[i];
                if !matches!(t.status, TaskStatus::Pending | TaskStatus::Retrying) {
                    return Err(self.illegal(format!("{task} started from {:?}", t.status)));
                }
                if *attempt != t.attempts + 1 || *attempt > max {
                    return Err(self.illegal(format!("{task} attempt {attempt} out of sequence")));
                }
                if !self.deps_succeeded(i) {
                    return Err(self.illegal(format!("{task} started before its dependencies succeeded")));
                }
                let t = &mut self.tasks[i];
                t.status = TaskStatus::Running;
                t.attempts = *attempt;
                t.started_at.get_or_insert(at);
                t.retry_at = None;
                t.history.push(AttemptRecord {
                    attempt: *attempt,
                    started_at: at,
                    ended_at: None,
                    error: None,
                });
                if self.status == RunStatus::Pending {
                    self.status = RunStatus::Running;
                    self.started_at = Some(at);
                }
            }
            Event::TaskSucceeded {
                task, attempt, output, ..
            } => {
                let i = self.task_index(task)?;
                if self.tasks[i].status != TaskStatus::Running || self.tasks[i].attempts != *attempt {
                    return Err(self.illegal(format!("{task} succeeded while not running attempt {attempt}")));
                }
                let t = &mut self.tasks[i];
                t.status = TaskStatus::Succeeded;
                t.ended_at = Some(at);
                t.output = output.clone();
                t.error = None;
                if let Some(h) = t.history.last_mut() {
                    h.ended_at = Some(at);
                }
            }
            Event::TaskFailed {
                task,
                attempt,
                error,
                retry_at,
                ..
            } => {
                let i = self.task_index(task)?;
                let max = self.spec.tasks[i].retry.max_attempts;
                if self.tasks[i].status != TaskStatus::Running || self.tasks[i].attempts != *attempt {
                    return Err(self.illegal(format!("{task} failed while not running attempt {attempt}")));
                }
                if retry_at.is_some() && *attempt >= max {
                    return Err(self.illegal(format!("{task} scheduled a retry beyond max_attempts")));
                }
                let t = &mut self.tasks[i];
                t.status = if retry_at.is_some() {
                    TaskStatus::Retrying
                } else {
                    TaskStatus::Failed
                };
                t.retry_at = *retry_at;
                t.error = Some(error.clone());
                t.ended_at = Some(at);
                if let Some(h) = t.history.last_mut() {
                    h.ended_at = Some(at);
                    h.error = Some(error.clone());
                }
            }
            Event::TaskSkipped { task, reason, .. } => {
                let i = self.task_index(task)?;
                let status = self.tasks[i].status;
                if !matches!(status, TaskStatus::Pending | TaskStatus::Retrying) {
                    return Err(self.illegal(format!("{task} skipped from {status:?}")));
                }
                let t = &mut self.tasks[i];
                t.status = TaskStatus::Skipped;
                t.retry_at = None;
                t.error = Some(reason.clone());
            }
            Event::CancelRequested { .. } => {
                if terminal {
                    return Err(self.illegal("cancel of a finished run".into()));
                }
                self.cancel_requested = true;
            }
            Event::RunFinished { status, reason, .. } => {
                if terminal {
                    return Err(self.illegal("run finished twice".into()));
                }
                if !self.tasks.iter().all(|t| t.status.is_terminal()) {
                    return Err(self.illegal("run finished with unfinished tasks".into()));
                }
                let all_ok = self.tasks.iter().all(|t| t.status == TaskStatus::Succeeded);
                let any_failed = self.tasks.iter().any(|t| t.status == TaskStatus::Failed);
                let consistent = match status {
                    RunStatus::Succeeded => all_ok,
                    RunStatus::Failed => !all_ok && (any_failed || self.cancel_requested),
                    _ => false,
                };
                if !consistent {
                    return Err(self.illegal(format!("run status {status:?} inconsistent with tasks")));
                }
                self.status = *status;
                self.reason = reason.clone();
                self.ended_at = Some(at);
            }
            Event::NotificationAttempt {
                idempotency_key,
                attempt,
                delivered,
                detail,
                ..
            } => {
                if !terminal {
                    return Err(self.illegal("notification before run finished".into()));
                }
                let n = self.notification.get_or_insert(NotificationState {
                    idempotency_key: idempotency_key.clone(),
                    attempts: 0,
                    delivered: false,
                    last_detail: String::new(),
                });
                n.attempts = n.attempts.max(*attempt);
                n.delivered |= *delivered;
                n.last_detail = detail.clone();
            }
        }
        self.last_seq = stamped.seq;
        Ok(())
    }

    /// Tasks that may start now: pending with every dependency succeeded, or
    /// retrying with the backoff elapsed. Nothing is ready once cancel was
    /// requested or the run is terminal.
    pub fn ready_tasks(&self, now_ms: u64) -> Vec<usize> {
        if self.cancel_requested || self.status.is_terminal() {
            return Vec::new();
        }
        (0..self.tasks.len())
            .filter(|&i| match self.tasks[i].status {
                TaskStatus::Pending => self.deps_succeeded(i),
                TaskStatus::Retrying => self.tasks[i].retry_at.is_some_and(|r| r <= now_ms),
                _ => false,
            })
            .collect()
    }

    /// Earliest pending retry time, if any task is waiting on backoff.
    pub fn next_retry_at(&self) -> Option<u64> {
        self.tasks
            .iter()
            .filter(|t| t.status == TaskStatus::Retrying)
            .filter_map(|t| t.retry_at)
            .min()
    }

    pub fn has_running(&self) -> bool {
        self.tasks.iter().any(|t| t.status == TaskStatus::Running)
    }

    /// Non-terminal tasks that can no longer run: some dependency failed or
    /// was skipped; with cancel requested, every waiting task.
    pub fn skippable(&self) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if !matches!(t.status, TaskStatus::Pending | TaskStatus::Retrying) {
                continue;
            }
            if self.cancel_requested {
                out.push((i, CANCELLED.to_string()));
                continue;
            }
            let blocked = self.spec.tasks[i].depends_on.iter().find(|d| {
                self.task(d)
                    .is_some_and(|s| matches!(s.status, TaskStatus::Failed | TaskStatus::Skipped))
            });
            if let Some(d) = blocked {
                out.push((i, format!("upstream `{d}` did not succeed")));
            }
        }
        out
    }

    /// Status the run should finish with, once every task is terminal.
    pub fn completion(&self) -> Option<(RunStatus, Option<String>)> {
        if self.status.is_terminal() || !self.tasks.iter().all(|t| t.status.is_terminal()) {
            return None;
        }
        if self.tasks.iter().all(|t| t.status == TaskStatus::Succeeded) {
            return Some((RunStatus::Succeeded, None));
        }
        if self.cancel_requested {
            return Some((RunStatus::Failed, Some(CANCELLED.to_string())));
        }
        let failed = self.tasks.iter().find(|t| t.status == TaskStatus::Failed).map(|t| t.name.clone());
        Some((RunStatus::Failed, failed.map(|f| format!("task `{f}` failed"))))
    }
}
