//! Flow specifications, retry policy and the run state machine.

mod run;
mod spec;

pub use run::{
    attempt_key, AttemptRecord, Event, FlowRun, NotificationState, RunStatus, Stamped, TaskState, TaskStatus, TransitionError,
    CANCELLED,
};
pub use spec::{Action, FlowSpec, InvalidSpec, RetryPolicy, TaskSpec};
