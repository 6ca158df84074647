//! The train step: temporal split, alpha search, fit, evaluation and
//! checklist.

use shopflow_core::recsys::{behavioral_checklist, build_dataset, evaluate, hyper_search, Checklist, RecsysError, TransitionModel, DEFAULT_KS};
use shopflow_core::transform::SessionSequence;

use crate::artifacts::{EvalSummary, SplitSummary};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha_grid: Vec<f64>,
    /// Fixed split point; otherwise the `split_quantile` of session starts.
    pub split_ts: Option<i64>,
    pub split_quantile: f64,
    /// Newest share of train held out to pick alpha.
    pub validation_fraction: f64,
    pub ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha_grid: vec![0.0, 0.01, 0.1, 1.0],
            split_ts: None,
            split_quantile: 0.8,
            validation_fraction: 0.1,
            ks: DEFAULT_KS.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TransitionModel,
    pub eval: EvalSummary,
    pub checklist: Checklist,
}

/// Start time at quantile `q` of the sequences' start times.
pub fn quantile_start(sessions: &[SessionSequence], q: f64) -> Option<i64> {
    let mut starts: Vec<i64> = sessions.iter().map(|s| s.start_ts).collect();
    if starts.is_empty() {
        return None;
    }
    starts.sort_unstable();
    let idx = ((q.clamp(0.0, 1.0) * starts.len() as f64) as usize).min(starts.len() - 1);
    Some(starts[idx])
}

fn items(seqs: &[SessionSequence]) -> Vec<&[String]> {
    seqs.iter().map(|s| s.items.as_slice()).collect()
}

pub fn train(sessions: &[SessionSequence], cfg: &TrainConfig) -> Result<TrainOutcome, RecsysError> {
    let split_ts = match cfg.split_ts {
        Some(t) => t,
        None => quantile_start(sessions, cfg.split_quantile).ok_or(RecsysError::EmptyDataset)?,
    };
    let split = build_dataset(sessions, split_ts)?;
    let train_items = items(&split.train);
    let test_items = items(&split.test);

    let mut warnings = Vec::new();
    let inner = quantile_start(&split.train, 1.0 - cfg.validation_fraction).and_then(|t| build_dataset(&split.train, t).ok().map(|s| (t, s)));
    let inner = inner.filter(|(_, s)| s.train.iter().any(|q| q.items.len() >= 2));
    let (validation_split_ts, search) = match &inner {
        Some((t, s)) => (Some(*t), hyper_search(&items(&s.train), &items(&s.test), &cfg.alpha_grid)?),
        None => {
            warnings.push("too little train data for a validation split; alpha chosen on train".to_string());
            (None, hyper_search(&train_items, &train_items, &cfg.alpha_grid)?)
        }
    };
    let model = TransitionModel::train(&train_items, search.best_alpha)?;
    let report = evaluate(&model, &test_items, &cfg.ks)?;
    let checklist = behavioral_checklist(&model);
    warnings.extend(checklist.checks.iter().filter_map(|c| c.warning.clone()));
    Ok(TrainOutcome {
        eval: EvalSummary {
            report,
            best_alpha: search.best_alpha,
            search: search.points,
            split: SplitSummary {
                split_ts,
                train: split.train.len(),
                test: split.test.len(),
                straddlers: split.straddlers,
                excluded: split.excluded,
                validation_split_ts,
            },
            warnings,
        },
        model,
        checklist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifacts::{ArtifactError, ArtifactStore, Lineage};
    use std::fs;

    fn seq(id: &str, items: &[&str], start: i64) -> SessionSequence {
        SessionSequence {
            session_id: id.into(),
            split_index: 0,
            items: items.iter().map(|s| s.to_string()).collect(),
            timestamps: (0..items.len() as i64).map(|i| start + i).collect(),
            start_ts: start,
            end_ts: start + items.len() as i64 - 1,
        }
    }

    fn sessions() -> Vec<SessionSequence> {
        (0..40)
            .map(|i| {
                let items: &[&str] = match i % 3 {
                    0 => &["A", "B", "C"],
                    1 => &["A", "B"],
                    _ => &["B", "C", "A"],
                };
                seq(&format!("s{i}"), items, i * 100)
            })
            .collect()
    }

    #[test]
    fn train_package_reload_round_trip() {
        let out = train(&sessions(), &TrainConfig::default()).unwrap();
        assert!(out.checklist.all_passed());
        assert!(out.eval.split.validation_split_ts.is_some());
        assert_eq!(out.eval.best_alpha, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(dir.path());
        let p = store.package(&out.model, &out.eval, &out.checklist, &Lineage::default()).unwrap();
        assert!(!p.reused);
        let again = train(&sessions(), &TrainConfig::default()).unwrap();
        let p2 = store.package(&again.model, &again.eval, &again.checklist, &Lineage::default()).unwrap();
        assert_eq!(p.version, p2.version);
        assert!(p2.reused);

        let loaded = store.load(&p.version).unwrap();
        for ctx in out.model.vocab() {
            assert_eq!(loaded.model.recommend(ctx, 10).unwrap(), out.model.recommend(ctx, 10).unwrap());
        }
        assert_eq!(store.versions().unwrap(), vec![p.version.clone()]);
        assert!(matches!(store.load("ffff"), Err(ArtifactError::UnknownVersion(_))));
        assert!(matches!(store.load("../x"), Err(ArtifactError::UnknownVersion(_))));

        let path = p.path.join("eval.json");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(store.load(&p.version), Err(ArtifactError::CorruptArtifact { .. })));
    }

    #[test]
    fn failing_checklist_blocks_packaging() {
        let out = train(&sessions(), &TrainConfig::default()).unwrap();
        let mut bad = out.checklist.clone();
        bad.checks[0].passed = false;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ArtifactStore::new(dir.path()).package(&out.model, &out.eval, &bad, &Lineage::default()),
            Err(ArtifactError::PackageBlocked(_))
        ));
    }

    #[test]
    fn split_errors_propagate() {
        let early = vec![seq("a", &["A", "B"], 0)];
        let cfg = TrainConfig {
            split_ts: Some(1_000),
            ..Default::default()
        };
        assert_eq!(train(&early, &cfg).unwrap_err(), RecsysError::EmptyTest);
        assert_eq!(train(&[], &TrainConfig::default()).unwrap_err(), RecsysError::EmptyDataset);
    }
}
