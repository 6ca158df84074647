use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TransitionModel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checklist {
    pub checks: Vec<Check>,
}

impl Checklist {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn check(name: &str, failures: Vec<String>) -> Check {
    Check {
        name: name.to_string(),
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            "ok".to_string()
        } else {
            failures.join("; ")
        },
        warning: None,
    }
}

/// A sku guaranteed not to be in the vocabulary.
fn unseen_context(model: &TransitionModel) -> String {
    let mut probe = String::from("\u{1}unseen");
    while model.index_of(&probe).is_some() {
        probe.push('_');
    }
    probe
}

/// Fixed behavioural checks run before packaging and again at load time.
pub fn behavioral_checklist(model: &TransitionModel) -> Checklist {
    const NAMES: [&str; 4] = ["no_self_recommendation", "determinism", "coverage", "fallback_sanity"];
    let vocab = model.vocab();
    let n = vocab.len();
    if n == 0 {
        return Checklist {
            checks: NAMES.iter().map(|c| check(c, alloc::vec!["empty model".to_string()])).collect(),
        };
    }

    let mut self_rec = Vec::new();
    let mut nondet = Vec::new();
    let mut short = Vec::new();
    let want = 1.min(n - 1);
    for ctx in vocab {
        let a = model.recommend(ctx, n).unwrap_or_default();
        let b = model.recommend(ctx, n).unwrap_or_default();
        if a.contains(&ctx.as_str()) {
            self_rec.push(format!("{ctx} recommends itself"));
        }
        if a != b {
            nondet.push(format!("{ctx} ranks differ between calls"));
        }
        if a.len() < want {
            short.push(format!("{ctx} returned {} items", a.len()));
        }
    }

    let unseen = unseen_context(model);
    let fallback = model.recommend(&unseen, n).unwrap_or_default();
    let popular = model.popular(&unseen, n);
    let mut fb = Vec::new();
    if fallback != popular {
        fb.push("unseen context does not follow popularity order".to_string());
    }

    let mut coverage = check(NAMES[2], short);
    if n == 1 {
        coverage.warning = Some("single-item vocabulary: coverage holds vacuously".to_string());
    }
    Checklist {
        checks: alloc::vec![check(NAMES[0], self_rec), check(NAMES[1], nondet), coverage, check(NAMES[3], fb)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn s(items: &[&str]) -> Vec<String> {
        items.iter().map(|i| i.to_string()).collect()
    }

    #[test]
    fn trained_model_passes() {
        let m = TransitionModel::train(&[s(&["A", "B"]), s(&["A", "B"]), s(&["A", "C"])], 0.0).unwrap();
        let c = behavioral_checklist(&m);
        assert_eq!(c.checks.len(), 4);
        assert!(c.all_passed(), "{c:?}");
    }

    #[test]
    fn self_loops_still_excluded() {
        let m = TransitionModel::from_parts(s(&["A", "B", "C"]), 0.0, vec![3, 1, 1], vec![(0, 0, 9), (0, 1, 1)]).unwrap();
        assert!(behavioral_checklist(&m).all_passed());
    }

    #[test]
    fn single_item_vocab_warns() {
        let m = TransitionModel::from_parts(s(&["A"]), 0.0, vec![2], vec![(0, 0, 1)]).unwrap();
        let c = behavioral_checklist(&m);
        assert!(c.all_passed());
        assert!(c.checks[2].warning.is_some());
    }

    #[test]
    fn empty_model_fails() {
        let m = TransitionModel::from_parts(vec![], 0.0, vec![], vec![]).unwrap();
        assert!(!behavioral_checklist(&m).all_passed());
    }
}
