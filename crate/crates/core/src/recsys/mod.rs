//! In-session next-item recommendation: dataset split, transition model,
//! offline evaluation, alpha search and the behavioural checklist.

mod checklist;
mod dataset;
mod eval;
mod model;
mod search;

pub use checklist::{behavioral_checklist, Check, Checklist};
pub use dataset::{build_dataset, Split};
pub use eval::{evaluate, evaluate_ranker, EvalReport, Metrics, DEFAULT_KS};
pub use model::TransitionModel;
pub use search::{hyper_search, SearchPoint, SearchResult, SEARCH_K};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecsysError {
    #[error("EMPTY_TRAIN: no sequences before the split")]
    EmptyTrain,
    #[error("EMPTY_TEST: no test sequences of length >= 2")]
    EmptyTest,
    #[error("EMPTY_DATASET: no sequence of length >= 2")]
    EmptyDataset,
    #[error("EMPTY_MODEL: model has an empty vocabulary")]
    EmptyModel,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("alpha must be finite and non-negative")]
    InvalidAlpha,
    #[error("alpha grid is empty")]
    EmptyGrid,
    #[error("malformed model: {0}")]
    Malformed(&'static str),
}
