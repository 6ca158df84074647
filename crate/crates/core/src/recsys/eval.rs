use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{RecsysError, TransitionModel};

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub recall_at_k: BTreeMap<usize, f64>,
    pub mrr_at_k: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at_k: BTreeMap<usize, f64>,
    pub mrr_at_k: BTreeMap<usize, f64>,
    pub n_test_cases: usize,
    /// Same protocol, popularity ranking.
    pub baseline: Metrics,
}

/// Score any ranker under the next-item protocol: every consecutive pair
/// `(i, j)` of every test sequence is one case; the ranker is asked for
/// `max(ks)` items given `i`, and `j`'s 1-based rank decides hit and
/// reciprocal rank.
pub fn evaluate_ranker<S, F>(test: &[S], ks: &[usize], mut rank: F) -> Result<(Metrics, usize), RecsysError>
where
    S: AsRef<[String]>,
    F: FnMut(&str, usize) -> Result<Vec<String>, RecsysError>,
{
    if ks.is_empty() || ks.contains(&0) {
        return Err(RecsysError::InvalidK);
    }
    let max_k = *ks.iter().max().unwrap();
    let mut hits = alloc::vec![0usize; ks.len()];
    let mut rr = alloc::vec![0f64; ks.len()];
    let mut cases = 0usize;
    for seq in test {
        for pair in seq.as_ref().windows(2) {
            cases += 1;
            let list = rank(&pair[0], max_k)?;
            if let Some(pos) = list.iter().position(|s| *s == pair[1]) {
                let r = pos + 1;
                for (slot, &k) in ks.iter().enumerate() {
                    if r <= k {
                        hits[slot] += 1;
                        rr[slot] += 1.0 / r as f64;
                    }
                }
            }
        }
    }
    if cases == 0 {
        return Err(RecsysError::EmptyTest);
    }
    let mut m = Metrics::default();
    for (slot, &k) in ks.iter().enumerate() {
        m.recall_at_k.insert(k, hits[slot] as f64 / cases as f64);
        m.mrr_at_k.insert(k, rr[slot] / cases as f64);
    }
    Ok((m, cases))
}

pub fn evaluate<S: AsRef<[String]>>(model: &TransitionModel, test: &[S], ks: &[usize]) -> Result<EvalReport, RecsysError> {
    let owned = |v: Vec<&str>| v.into_iter().map(String::from).collect::<Vec<_>>();
    let (m, n) = evaluate_ranker(test, ks, |ctx, k| model.recommend(ctx, k).map(owned))?;
    let (baseline, _) = evaluate_ranker(test, ks, |ctx, k| Ok(owned(model.popular(ctx, k))))?;
    Ok(EvalReport {
        recall_at_k: m.recall_at_k,
        mrr_at_k: m.mrr_at_k,
        n_test_cases: n,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn s(items: &[&str]) -> Vec<String> {
        items.iter().map(|i| i.to_string()).collect()
    }

    #[test]
    fn perfect_top1() {
        let m = TransitionModel::train(&[s(&["A", "B"])], 0.0).unwrap();
        let r = evaluate(&m, &[s(&["A", "B"])], &[1]).unwrap();
        assert_eq!(r.recall_at_k[&1], 1.0);
        assert_eq!(r.mrr_at_k[&1], 1.0);
        assert_eq!(r.n_test_cases, 1);
    }

    #[test]
    fn second_place_hit() {
        let m = TransitionModel::train(&[s(&["A", "B"]), s(&["A", "B"]), s(&["A", "C"])], 0.0).unwrap();
        let r = evaluate(&m, &[s(&["A", "C"])], &[1, 2]).unwrap();
        assert_eq!(r.recall_at_k[&1], 0.0);
        assert_eq!(r.recall_at_k[&2], 1.0);
        assert_eq!(r.mrr_at_k[&2], 0.5);
    }

    #[test]
    fn no_cases_is_empty_test() {
        let m = TransitionModel::train(&[s(&["A", "B"])], 0.0).unwrap();
        assert_eq!(evaluate(&m, &[s(&["A"])], &DEFAULT_KS), Err(RecsysError::EmptyTest));
        assert_eq!(evaluate(&m, &[s(&["A", "B"])], &[]), Err(RecsysError::InvalidK));
    }
}
