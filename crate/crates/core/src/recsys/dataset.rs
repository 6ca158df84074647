use alloc::vec::Vec;

use super::RecsysError;
use crate::transform::SessionSequence;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<SessionSequence>,
    pub test: Vec<SessionSequence>,
    /// Sequences that started before and ended at or after the split; they
    /// are included in `train`.
    pub straddlers: usize,
    /// Length-1 sequences after the split, dropped from test.
    pub excluded: usize,
}

/// Temporal split at `split_ts`: sequences ending before it train, sequences
/// starting at or after it test, straddlers train.
pub fn build_dataset(sessions: &[SessionSequence], split_ts: i64) -> Result<Split, RecsysError> {
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
        straddlers: 0,
        excluded: 0,
    };
    for s in sessions {
        if s.start_ts >= split_ts {
            if s.items.len() >= 2 {
                split.test.push(s.clone());
            } else {
                split.excluded += 1;
            }
        } else {
            if s.end_ts >= split_ts {
                split.straddlers += 1;
            }
            split.train.push(s.clone());
        }
    }
    if split.train.is_empty() {
        return Err(RecsysError::EmptyTrain);
    }
    if split.test.is_empty() {
        return Err(RecsysError::EmptyTest);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;

    fn seq(id: usize, items: &[&str], start: i64, end: i64) -> SessionSequence {
        SessionSequence {
            session_id: format!("s{id}"),
            split_index: 0,
            items: items.iter().map(|s| s.to_string()).collect(),
            timestamps: vec![],
            start_ts: start,
            end_ts: end,
        }
    }

    #[test]
    fn all_before_split_is_empty_test() {
        let s = vec![seq(0, &["A", "B"], 1, 2)];
        assert_eq!(build_dataset(&s, 10), Err(RecsysError::EmptyTest));
        assert_eq!(build_dataset(&s, 0), Err(RecsysError::EmptyTrain));
    }

    #[test]
    fn singletons_after_split_are_excluded() {
        let s = vec![seq(0, &["A", "B"], 1, 2), seq(1, &["A"], 20, 20), seq(2, &["B", "C"], 21, 22)];
        let split = build_dataset(&s, 10).unwrap();
        assert_eq!(split.test.len(), 1);
        assert_eq!(split.excluded, 1);
    }

    #[test]
    fn straddlers_train_and_counts_partition() {
        // 100 sessions with staggered spans; split at the median end.
        let sessions: Vec<SessionSequence> = (0..100)
            .map(|i| {
                let items: Vec<&str> = if i % 7 == 0 { vec!["A"] } else { vec!["A", "B", "C"] };
                seq(i, &items, (i as i64) * 10, (i as i64) * 10 + 35)
            })
            .collect();
        let mut ends: Vec<i64> = sessions.iter().map(|s| s.end_ts).collect();
        ends.sort();
        let split_ts = ends[50];
        let split = build_dataset(&sessions, split_ts).unwrap();

        let brute_train = sessions.iter().filter(|s| s.start_ts < split_ts).count();
        let brute_straddle = sessions.iter().filter(|s| s.start_ts < split_ts && s.end_ts >= split_ts).count();
        let brute_test = sessions.iter().filter(|s| s.start_ts >= split_ts && s.items.len() >= 2).count();
        assert_eq!(split.train.len(), brute_train);
        assert_eq!(split.straddlers, brute_straddle);
        assert!(split.straddlers > 0);
        assert_eq!(split.test.len(), brute_test);
        assert_eq!(split.train.len() + split.test.len() + split.excluded, 100);
    }
}
