//! Flow scheduler with a persistent run journal, retries and webhook
//! notification.
//!
//! One scheduler thread owns every state transition. Tasks execute on a
//! bounded worker pool and report back over a channel. Every transition is
//! journalled before it becomes visible, and state after a restart is the
//! fold of the journal; attempts that were running at the time of a crash
//! are failed into `retrying` (or `failed` when out of attempts).

pub mod http;
pub mod journal;
pub mod runner;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use shopflow_core::flow::{attempt_key, Action, Event, FlowRun, FlowSpec, RunStatus, Stamped, TaskStatus};

use crate::fsutil::now_ms;
use journal::Journal;
pub use runner::{CancelToken, ProbeRunner, TaskContext, TaskRunner};

pub const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub state_dir: PathBuf,
    pub workers: usize,
    /// Longest the scheduler sleeps between passes.
    pub tick_ms: u64,
    pub webhook_url: Option<String>,
    pub notify_max_attempts: u32,
    pub notify_backoff_ms: u64,
    pub sync: bool,
}

impl OrchestratorConfig {
    pub fn new(state_dir: impl Into<PathBuf>) -> Self {
        OrchestratorConfig {
            state_dir: state_dir.into(),
            workers: 4,
            tick_ms: 50,
            webhook_url: None,
            notify_max_attempts: 5,
            notify_backoff_ms: 500,
            sync: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OrchError {
    #[error("UNKNOWN_FLOW: {0}")]
    UnknownFlow(String),
    #[error("UNKNOWN_RUN: {0}")]
    UnknownRun(String),
    #[error("INVALID_SPEC: {0}")]
    InvalidSpec(String),
    #[error("RUN_NOT_TERMINAL: {0}")]
    RunNotTerminal(String),
    #[error("RUN_NOT_FAILED: {0}")]
    RunNotFailed(String),
    #[error("RUN_NOT_ACTIVE: {0}")]
    RunNotActive(String),
    #[error("JOURNAL: {0}")]
    Journal(String),
}

impl OrchError {
    pub fn code(&self) -> &'static str {
        match self {
            OrchError::UnknownFlow(_) => "UNKNOWN_FLOW",
            OrchError::UnknownRun(_) => "UNKNOWN_RUN",
            OrchError::InvalidSpec(_) => "INVALID_SPEC",
            OrchError::RunNotTerminal(_) => "RUN_NOT_TERMINAL",
            OrchError::RunNotFailed(_) => "RUN_NOT_FAILED",
            OrchError::RunNotActive(_) => "RUN_NOT_ACTIVE",
            OrchError::Journal(_) => "JOURNAL",
        }
    }
}

pub type Runners = HashMap<Action, Arc<dyn TaskRunner>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registered {
    pub flow_id: String,
    pub version: u32,
    /// False when the spec equals the latest version already stored.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowInfo {
    pub flow_id: String,
    pub version: u32,
    pub spec: FlowSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub flow_id: String,
    pub spec_version: u32,
    pub status: RunStatus,
    pub reason: Option<String>,
    pub created_at: u64,
    pub started_at: Option<u64>,
    pub ended_at: Option<u64>,
    pub attempts: u32,
    pub retry_of: Option<String>,
    pub last_seq: u64,
}

impl RunSummary {
    fn of(r: &FlowRun) -> Self {
        RunSummary {
            run_id: r.run_id.clone(),
            flow_id: r.flow_id.clone(),
            spec_version: r.spec_version,
            status: r.status,
            reason: r.reason.clone(),
            created_at: r.created_at,
            started_at: r.started_at,
            ended_at: r.ended_at,
            attempts: r.tasks.iter().map(|t| t.attempts).sum(),
            retry_of: r.retry_of.clone(),
            last_seq: r.last_seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPage {
    pub runs: Vec<RunSummary>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub pages: usize,
}

/// Webhook body for a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub run_id: String,
    pub flow: String,
    pub status: RunStatus,
    pub reason: Option<String>,
    pub started: Option<u64>,
    pub ended: Option<u64>,
    pub idempotency_key: String,
}

struct State {
    journal: Journal,
    flows: BTreeMap<String, Vec<FlowSpec>>,
    runs: HashMap<String, FlowRun>,
    /// Run ids in creation order.
    order: Vec<String>,
    next_run: u64,
    inflight: HashMap<(String, String), CancelToken>,
}

impl State {
    /// Fold a journalled event. Events that do not apply are ignored, which
    /// is also what happened when they were first recorded.
    fn fold(&mut self, st: &Stamped) -> bool {
        match &st.event {
            Event::FlowRegistered { flow_id, version, spec } => {
                let versions = self.flows.entry(flow_id.clone()).or_default();
                if *version as usize != versions.len() + 1 {
                    return false;
                }
                versions.push(spec.clone());
                true
            }
            Event::RunCreated { run_id, .. } => {
                if self.runs.contains_key(run_id) {
                    return false;
                }
                let run = FlowRun::create(st).expect("RunCreated builds a run");
                if let Some(n) = run_id.strip_prefix("run-").and_then(|n| n.parse::<u64>().ok()) {
                    self.next_run = self.next_run.max(n + 1);
                }
                self.order.push(run_id.clone());
                self.runs.insert(run_id.clone(), run);
                true
            }
            ev => {
                let Some(run) = ev.run_id().and_then(|id| self.runs.get_mut(id)) else {
                    return false;
                };
                run.apply(st).is_ok()
            }
        }
    }

    /// Check, journal, then apply.
    fn record(&mut self, event: Event) -> Result<Stamped, OrchError> {
        let st = self.journal.stamp(now_ms(), event);
        if let Some(id) = st.event.run_id() {
            if !matches!(st.event, Event::RunCreated { .. }) {
                let run = self.runs.get(id).ok_or_else(|| OrchError::UnknownRun(id.to_string()))?;
                let mut probe = run.clone();
                probe.apply(&st).map_err(|e| OrchError::Journal(e.to_string()))?;
            }
        }
        self.journal.commit(&st).map_err(|e| OrchError::Journal(e.to_string()))?;
        let applied = self.fold(&st);
        debug_assert!(applied, "checked event must fold");
        Ok(st)
    }

    fn run(&self, id: &str) -> Result<&FlowRun, OrchError> {
        self.runs.get(id).ok_or_else(|| OrchError::UnknownRun(id.to_string()))
    }

    fn create_run(&mut self, flow_id: &str, spec_version: u32, spec: FlowSpec, params: Value, retry_of: Option<String>) -> Result<String, OrchError> {
        let run_id = format!("run-{:06}", self.next_run);
        self.record(Event::RunCreated {
            run_id: run_id.clone(),
            flow_id: flow_id.to_string(),
            spec_version,
            spec,
            params,
            retry_of,
        })?;
        Ok(run_id)
    }
}

enum Msg {
    Poke,
    Done(Completion),
    Stop,
}

struct Job {
    run_id: String,
    task: String,
    attempt: u32,
    action: Action,
    ctx: TaskContext,
}

struct Completion {
    run_id: String,
    task: String,
    attempt: u32,
    result: Result<Value, String>,
}

struct Shared {
    cfg: OrchestratorConfig,
    runners: Runners,
    state: Mutex<State>,
    stop: AtomicBool,
    sched_tx: Sender<Msg>,
    notify_tx: Sender<()>,
}

pub struct Orchestrator {
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    job_tx: Option<Sender<Job>>,
}

/// Shallow overlay of `run_params[task]` onto the task's own params.
fn effective_params(task_params: &Value, run_params: &Value, task: &str) -> Value {
    let Some(over) = run_params.get(task).and_then(Value::as_object) else {
        return task_params.clone();
    };
    let mut base = task_params.as_object().cloned().unwrap_or_default();
    for (k, v) in over {
        base.insert(k.clone(), v.clone());
    }
    Value::Object(base)
}

impl Orchestrator {
    /// Open the journal under `cfg.state_dir`, recover, and start the
    /// scheduler, workers and notifier.
    pub fn start(cfg: OrchestratorConfig, runners: Runners) -> Result<Self, OrchError> {
        let (journal, events) = Journal::open(&cfg.state_dir.join(JOURNAL_FILE), cfg.sync).map_err(|e| OrchError::Journal(e.to_string()))?;
        let mut state = State {
            journal,
            flows: BTreeMap::new(),
            runs: HashMap::new(),
            order: Vec::new(),
            next_run: 1,
            inflight: HashMap::new(),
        };
        for ev in &events {
            state.fold(ev);
        }
        recover_interrupted(&mut state)?;

        let (sched_tx, sched_rx) = crossbeam_channel::unbounded();
        let (notify_tx, notify_rx) = crossbeam_channel::unbounded();
        let (job_tx, job_rx) = crossbeam_channel::unbounded::<Job>();
        let shared = Arc::new(Shared {
            cfg,
            runners,
            state: Mutex::new(state),
            stop: AtomicBool::new(false),
            sched_tx,
            notify_tx,
        });
        let mut threads = Vec::new();
        for i in 0..shared.cfg.workers.max(1) {
            let (s, rx) = (shared.clone(), job_rx.clone());
            threads.push(std::thread::Builder::new().name(format!("worker-{i}")).spawn(move || worker_loop(s, rx)).expect("spawn worker"));
        }
        {
            let (s, jobs) = (shared.clone(), job_tx.clone());
            threads.push(std::thread::Builder::new().name("scheduler".into()).spawn(move || scheduler_loop(s, sched_rx, jobs)).expect("spawn scheduler"));
        }
        {
            let s = shared.clone();
            threads.push(std::thread::Builder::new().name("notifier".into()).spawn(move || notifier_loop(s, notify_rx)).expect("spawn notifier"));
        }
        let _ = shared.notify_tx.send(());
        Ok(Orchestrator {
            shared,
            threads,
            job_tx: Some(job_tx),
        })
    }

    fn poke(&self) {
        let _ = self.shared.sched_tx.send(Msg::Poke);
    }

    pub fn tick_ms(&self) -> u64 {
        self.shared.cfg.tick_ms
    }

    /// Store a new version of a flow. Registering the latest spec again is a
    /// no-op.
    pub fn register(&self, spec: FlowSpec) -> Result<Registered, OrchError> {
        spec.validate().map_err(|e| OrchError::InvalidSpec(e.0))?;
        if let Some(t) = spec.tasks.iter().find(|t| !self.shared.runners.contains_key(&t.action)) {
            return Err(OrchError::InvalidSpec(format!("task `{}`: action `{}` is not available", t.name, t.action.as_str())));
        }
        let mut st = self.shared.state.lock().unwrap();
        let versions = st.flows.get(&spec.name).map_or(&[][..], Vec::as_slice);
        if versions.last() == Some(&spec) {
            return Ok(Registered {
                flow_id: spec.name.clone(),
                version: versions.len() as u32,
                created: false,
            });
        }
        let version = versions.len() as u32 + 1;
        let flow_id = spec.name.clone();
        st.record(Event::FlowRegistered {
            flow_id: flow_id.clone(),
            version,
            spec,
        })?;
        Ok(Registered {
            flow_id,
            version,
            created: true,
        })
    }

    pub fn flows(&self) -> Vec<FlowInfo> {
        let st = self.shared.state.lock().unwrap();
        st.flows
            .iter()
            .filter_map(|(id, v)| {
                v.last().map(|spec| FlowInfo {
                    flow_id: id.clone(),
                    version: v.len() as u32,
                    spec: spec.clone(),
                })
            })
            .collect()
    }

    /// Start a run of the latest version of `flow_id`.
    pub fn run_flow(&self, flow_id: &str, params: Value) -> Result<String, OrchError> {
        let id = {
            let mut st = self.shared.state.lock().unwrap();
            let versions = st.flows.get(flow_id).ok_or_else(|| OrchError::UnknownFlow(flow_id.to_string()))?;
            let spec = versions.last().expect("registered flows have a version").clone();
            let version = versions.len() as u32;
            st.create_run(flow_id, version, spec, params, None)?
        };
        self.poke();
        Ok(id)
    }

    pub fn get_run(&self, run_id: &str) -> Result<FlowRun, OrchError> {
        self.shared.state.lock().unwrap().run(run_id).cloned()
    }

    /// Runs newest first, optionally filtered by status. Pages are 1-based.
    pub fn list_runs(&self, status: Option<RunStatus>, page: usize, page_size: usize) -> RunPage {
        let page = page.max(1);
        let page_size = page_size.clamp(1, 1000);
        let st = self.shared.state.lock().unwrap();
        let mut rows: Vec<(usize, &FlowRun)> = st
            .order
            .iter()
            .enumerate()
            .map(|(i, id)| (i, &st.runs[id]))
            .filter(|(_, r)| status.is_none_or(|s| r.status == s))
            .collect();
        rows.sort_by(|a, b| b.1.created_at.cmp(&a.1.created_at).then(b.0.cmp(&a.0)));
        let total = rows.len();
        RunPage {
            runs: rows.iter().skip((page - 1) * page_size).take(page_size).map(|(_, r)| RunSummary::of(r)).collect(),
            page,
            page_size,
            total,
            pages: total.div_ceil(page_size),
        }
    }

    /// New run from the failed run's spec snapshot and params. The whole
    /// flow executes again.
    pub fn retry_run(&self, run_id: &str) -> Result<String, OrchError> {
        let id = {
            let mut st = self.shared.state.lock().unwrap();
            let run = st.run(run_id)?;
            if !run.status.is_terminal() {
                return Err(OrchError::RunNotTerminal(run_id.to_string()));
            }
            if run.status != RunStatus::Failed {
                return Err(OrchError::RunNotFailed(run_id.to_string()));
            }
            let (flow, version, spec, params) = (run.flow_id.clone(), run.spec_version, run.spec.clone(), run.params.clone());
            st.create_run(&flow, version, spec, params, Some(run_id.to_string()))?
        };
        self.poke();
        Ok(id)
    }

    /// Ask a run to stop: waiting tasks are skipped, running ones are told
    /// to stop at their next checkpoint.
    pub fn cancel_run(&self, run_id: &str) -> Result<(), OrchError> {
        {
            let mut st = self.shared.state.lock().unwrap();
            let run = st.run(run_id)?;
            if run.status.is_terminal() || run.cancel_requested {
                return Err(OrchError::RunNotActive(run_id.to_string()));
            }
            st.record(Event::CancelRequested { run_id: run_id.to_string() })?;
            for ((r, _), token) in &st.inflight {
                if r == run_id {
                    token.cancel();
                }
            }
        }
        self.poke();
        Ok(())
    }

    /// Poll until the run is terminal or `timeout` passes; returns the last
    /// snapshot either way.
    pub fn wait_for(&self, run_id: &str, timeout: Duration) -> Result<FlowRun, OrchError> {
        let end = Instant::now() + timeout;
        loop {
            let r = self.get_run(run_id)?;
            if r.status.is_terminal() || Instant::now() >= end {
                return Ok(r);
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// Poll until the run's notification is delivered or given up on; with
    /// no webhook configured, until the run is terminal.
    pub fn wait_notified(&self, run_id: &str, timeout: Duration) -> Result<FlowRun, OrchError> {
        if self.shared.cfg.webhook_url.is_none() {
            return self.wait_for(run_id, timeout);
        }
        let end = Instant::now() + timeout;
        loop {
            let r = self.get_run(run_id)?;
            let settled = r
                .notification
                .as_ref()
                .is_some_and(|n| n.delivered || n.attempts >= self.shared.cfg.notify_max_attempts);
            if settled || Instant::now() >= end {
                return Ok(r);
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// Stop all threads without recording anything, leaving the journal as
    /// a crash would. Running tasks are asked to stop.
    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for token in self.shared.state.lock().unwrap().inflight.values() {
            token.cancel();
        }
        let _ = self.shared.sched_tx.send(Msg::Stop);
        let _ = self.shared.notify_tx.send(());
        self.job_tx.take();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Orchestrator {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn recover_interrupted(st: &mut State) -> Result<(), OrchError> {
    let mut interrupted = Vec::new();
    for id in &st.order {
        let run = &st.runs[id];
        if run.status.is_terminal() {
            continue;
        }
        for (i, t) in run.tasks.iter().enumerate() {
            if t.status == TaskStatus::Running {
                let max = run.spec.tasks[i].retry.max_attempts;
                let retry = !run.cancel_requested && t.attempts < max;
                interrupted.push((id.clone(), t.name.clone(), t.attempts, retry));
            }
        }
    }
    let now = now_ms();
    for (run_id, task, attempt, retry) in interrupted {
        st.record(Event::TaskFailed {
            run_id,
            task,
            attempt,
            error: "interrupted: orchestrator restarted".into(),
            retry_at: retry.then_some(now),
        })?;
    }
    Ok(())
}

fn worker_loop(shared: Arc<Shared>, jobs: Receiver<Job>) {
    while let Ok(job) = jobs.recv() {
        let runner = shared.runners.get(&job.action).cloned();
        let result = match runner {
            None => Err(format!("no runner for action `{}`", job.action.as_str())),
            Some(r) => std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| r.run(&job.ctx))).unwrap_or_else(|p| {
                let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                Err(format!("task panicked: {}", msg.unwrap_or_default()))
            }),
        };
        let _ = shared.sched_tx.send(Msg::Done(Completion {
            run_id: job.run_id,
            task: job.task,
            attempt: job.attempt,
            result,
        }));
    }
}

fn scheduler_loop(shared: Arc<Shared>, rx: Receiver<Msg>, jobs: Sender<Job>) {
    let tick = Duration::from_millis(shared.cfg.tick_ms.max(1));
    loop {
        let wait = {
            let st = shared.state.lock().unwrap();
            let now = now_ms();
            let next = st.runs.values().filter(|r| !r.status.is_terminal()).filter_map(FlowRun::next_retry_at).min();
            match next {
                Some(t) => tick.min(Duration::from_millis(t.saturating_sub(now))),
                None => tick,
            }
        };
        let mut msgs = Vec::new();
        match rx.recv_timeout(wait) {
            Ok(m) => msgs.push(m),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
        msgs.extend(rx.try_iter());
        for m in msgs {
            match m {
                Msg::Stop => return,
                Msg::Poke => {}
                Msg::Done(c) => complete(&shared, c),
            }
        }
        if shared.stop.load(Ordering::SeqCst) {
            return;
        }
        schedule(&shared, &jobs);
    }
}

fn log_err(context: &str, r: Result<Stamped, OrchError>) {
    if let Err(e) = r {
        eprintln!("orchestrator: {context}: {e}");
    }
}

fn complete(shared: &Shared, c: Completion) {
    let mut st = shared.state.lock().unwrap();
    st.inflight.remove(&(c.run_id.clone(), c.task.clone()));
    let Ok(run) = st.run(&c.run_id) else { return };
    let event = match c.result {
        Ok(output) => Event::TaskSucceeded {
            run_id: c.run_id,
            task: c.task,
            attempt: c.attempt,
            output,
        },
        Err(error) => {
            let policy = &run.spec.task(&c.task).expect("task in spec").retry;
            let retry_at = (!run.cancel_requested && c.attempt < policy.max_attempts).then(|| now_ms() + policy.delay_ms(c.attempt));
            Event::TaskFailed {
                run_id: c.run_id,
                task: c.task,
                attempt: c.attempt,
                error,
                retry_at,
            }
        }
    };
    log_err("completion", st.record(event));
}

fn schedule(shared: &Shared, jobs: &Sender<Job>) {
    let mut st = shared.state.lock().unwrap();
    let now = now_ms();
    let active: Vec<String> = st.order.iter().filter(|id| !st.runs[*id].status.is_terminal()).cloned().collect();
    for id in active {
        loop {
            let skips = st.runs[&id].skippable();
            if skips.is_empty() {
                break;
            }
            for (i, reason) in skips {
                let task = st.runs[&id].tasks[i].name.clone();
                if let Err(e) = st.record(Event::TaskSkipped {
                    run_id: id.clone(),
                    task,
                    reason,
                }) {
                    eprintln!("orchestrator: skip: {e}");
                    return;
                }
            }
        }
        if let Some((status, reason)) = st.runs[&id].completion() {
            log_err(
                "finish",
                st.record(Event::RunFinished {
                    run_id: id.clone(),
                    status,
                    reason,
                }),
            );
            let _ = shared.notify_tx.send(());
            continue;
        }
        for i in st.runs[&id].ready_tasks(now) {
            if st.inflight.len() >= shared.cfg.workers.max(1) {
                return;
            }
            let run = &st.runs[&id];
            let spec = &run.spec.tasks[i];
            let attempt = run.tasks[i].attempts + 1;
            let key = attempt_key(&id, &spec.name, attempt);
            let upstream: BTreeMap<String, Value> = run
                .tasks
                .iter()
                .filter(|t| t.status == TaskStatus::Succeeded)
                .map(|t| (t.name.clone(), t.output.clone()))
                .collect();
            let cancel = CancelToken::new();
            let job = Job {
                run_id: id.clone(),
                task: spec.name.clone(),
                attempt,
                action: spec.action,
                ctx: TaskContext {
                    run_id: id.clone(),
                    task: spec.name.clone(),
                    attempt,
                    idempotency_key: key.clone(),
                    params: effective_params(&spec.params, &run.params, &spec.name),
                    run_params: run.params.clone(),
                    upstream,
                    cancel: cancel.clone(),
                },
            };
            let started = st.record(Event::TaskStarted {
                run_id: id.clone(),
                task: job.task.clone(),
                attempt,
                idempotency_key: key,
            });
            if let Err(e) = started {
                eprintln!("orchestrator: start: {e}");
                continue;
            }
            st.inflight.insert((id.clone(), job.task.clone()), cancel);
            if jobs.send(job).is_err() {
                return;
            }
        }
    }
}

fn notification_for(r: &FlowRun) -> Notification {
    Notification {
        run_id: r.run_id.clone(),
        flow: r.flow_id.clone(),
        status: r.status,
        reason: r.reason.clone(),
        started: r.started_at,
        ended: r.ended_at,
        idempotency_key: r.run_id.clone(),
    }
}

fn deliver(agent: &ureq::Agent, url: &str, body: &Notification) -> Result<String, String> {
    match agent.post(url).header("Idempotency-Key", &body.idempotency_key).send_json(body) {
        Ok(resp) => Ok(format!("HTTP {}", resp.status().as_u16())),
        Err(e) => Err(e.to_string()),
    }
}

fn notifier_loop(shared: Arc<Shared>, rx: Receiver<()>) {
    let Some(url) = shared.cfg.webhook_url.clone() else {
        return;
    };
    let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(5))).build().into();
    let max = shared.cfg.notify_max_attempts.max(1);
    let mut next_at: HashMap<String, u64> = HashMap::new();
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            return;
        }
        let now = now_ms();
        let due: Vec<(Notification, u32)> = {
            let st = shared.state.lock().unwrap();
            st.order
                .iter()
                .map(|id| &st.runs[id])
                .filter(|r| r.status.is_terminal())
                .filter_map(|r| {
                    let (attempts, delivered) = r.notification.as_ref().map_or((0, false), |n| (n.attempts, n.delivered));
                    (!delivered && attempts < max && next_at.get(&r.run_id).is_none_or(|t| *t <= now)).then(|| (notification_for(r), attempts + 1))
                })
                .collect()
        };
        for (body, attempt) in due {
            if shared.stop.load(Ordering::SeqCst) {
                return;
            }
            let outcome = deliver(&agent, &url, &body);
            let delivered = outcome.is_ok();
            if !delivered {
                let backoff = shared.cfg.notify_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                next_at.insert(body.run_id.clone(), now_ms() + backoff);
            }
            let mut st = shared.state.lock().unwrap();
            log_err(
                "notification",
                st.record(Event::NotificationAttempt {
                    run_id: body.run_id.clone(),
                    idempotency_key: body.idempotency_key.clone(),
                    attempt,
                    delivered,
                    detail: outcome.unwrap_or_else(|e| e),
                }),
            );
        }
        let wait = next_at.values().map(|t| t.saturating_sub(now_ms())).min().unwrap_or(1_000).clamp(10, 1_000);
        match rx.recv_timeout(Duration::from_millis(wait)) {
            Ok(()) | Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

/// Registry with the probe runner, for tests and smoke flows.
pub fn probe_runners() -> Runners {
    let mut r: Runners = HashMap::new();
    r.insert(Action::ShellProbe, Arc::new(ProbeRunner));
    r
}
