use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalReport, RecsysError, TransitionModel, DEFAULT_KS};

/// Cutoff whose recall selects the winning alpha.
pub const SEARCH_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub alpha: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_alpha: f64,
    /// One entry per grid point, in grid order.
    pub points: Vec<SearchPoint>,
}

/// Exhaustive grid search. The winner maximizes validation recall@10; equal
/// recall goes to the smaller alpha.
pub fn hyper_search<S: AsRef<[String]>>(train: &[S], validation: &[S], grid: &[f64]) -> Result<SearchResult, RecsysError> {
    if grid.is_empty() {
        return Err(RecsysError::EmptyGrid);
    }
    let mut points = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let model = TransitionModel::train(train, alpha)?;
        let report = evaluate(&model, validation, &DEFAULT_KS)?;
        points.push(SearchPoint { alpha, report });
    }
    let mut best = &points[0];
    for p in &points[1..] {
        let (r, br) = (p.report.recall_at_k[&SEARCH_K], best.report.recall_at_k[&SEARCH_K]);
        if r > br || (r == br && p.alpha < best.alpha) {
            best = p;
        }
    }
    Ok(SearchResult {
        best_alpha: best.alpha,
        points,
    })
}
