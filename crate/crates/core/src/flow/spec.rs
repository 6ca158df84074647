use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    TransformNode,
    QualitySuite,
    RecsysStep,
    ServingDeploy,
    /// Scripted probe for fault-injection tests.
    ShellProbe,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::TransformNode => "transform_node",
            Action::QualitySuite => "quality_suite",
            Action::RecsysStep => "recsys_step",
            Action::ServingDeploy => "serving_deploy",
            Action::ShellProbe => "shell_probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 2_000,
            backoff_factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        RetryPolicy {
            max_attempts: 1,
            ..Default::default()
        }
    }

    /// Wait after failed attempt number `attempt` (1-based):
    /// `base · factor^(attempt − 1)`, rounded to whole milliseconds.
    pub fn delay_ms(&self, attempt: u32) -> u64 {
        let mut d = self.backoff_base_ms as f64;
        for _ in 1..attempt.max(1) {
            d *= self.backoff_factor;
        }
        if d >= u64::MAX as f64 {
            u64::MAX
        } else {
            (d + 0.5) as u64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub action: Action,
    #[serde(default)]
    pub params: Value,
    #[serde(default)]
    pub depends_on: Vec<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub name: String,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("INVALID_SPEC: {0}")]
pub struct InvalidSpec(pub String);

impl FlowSpec {
    pub fn task(&self, name: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn validate(&self) -> Result<(), InvalidSpec> {
        if self.name.is_empty() {
            return Err(InvalidSpec("flow name is empty".into()));
        }
        if self.tasks.is_empty() {
            return Err(InvalidSpec("flow has no tasks".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.tasks {
            if !names.insert(t.name.as_str()) {
                return Err(InvalidSpec(format!("duplicate task `{}`", t.name)));
            }
            let p = &t.retry;
            if p.max_attempts < 1 || !p.backoff_factor.is_finite() || p.backoff_factor < 1.0 {
                return Err(InvalidSpec(format!("task `{}`: retry policy needs max_attempts >= 1 and factor >= 1", t.name)));
            }
        }
        for t in &self.tasks {
            for d in &t.depends_on {
                if !names.contains(d.as_str()) {
                    return Err(InvalidSpec(format!("task `{}` depends on unknown `{d}`", t.name)));
                }
            }
        }
        self.topo_order().map(|_| ())
    }

    /// Kahn order over task indices; ties follow declaration order.
    pub fn topo_order(&self) -> Result<Vec<usize>, InvalidSpec> {
        let n = self.tasks.len();
        let deps: Vec<Vec<usize>> = self
            .tasks
            .iter()
            .map(|t| t.depends_on.iter().filter_map(|d| self.index_of(d)).collect())
            .collect();
        let mut done = alloc::vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let next = (0..n).find(|&i| !done[i] && deps[i].iter().all(|&d| done[d]));
            match next {
                Some(i) => {
                    done[i] = true;
                    order.push(i);
                }
                None => {
                    let stuck: Vec<&str> = (0..n).filter(|&i| !done[i]).map(|i| self.tasks[i].name.as_str()).collect();
                    return Err(InvalidSpec(format!("cycle among tasks [{}]", stuck.join(", "))));
                }
            }
        }
        Ok(order)
    }
}
