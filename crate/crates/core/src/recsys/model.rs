use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::RecsysError;
use crate::hash::content_id;

/// First-order next-item model over consecutive session items.
///
/// `P(j|i) = (c(i→j) + alpha) / (Σ_k c(i→k) + alpha·|vocab|)`. A row with no
/// outgoing counts and `alpha = 0` is undefined and served by the popularity
/// fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    vocab: Vec<String>,
    alpha: f64,
    popularity: Vec<u64>,
    /// Outgoing counts per source, sorted by target index.
    rows: Vec<Vec<(u32, u64)>>,
    row_totals: Vec<u64>,
    /// Vocabulary indices by popularity desc, then sku asc.
    pop_order: Vec<u32>,
    /// Inverse of `pop_order`.
    pop_rank: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    alpha: f64,
    vocab: Vec<String>,
    popularity: Vec<u64>,
    counts: Vec<(u32, u32, u64)>,
}

const FORMAT: &str = "shopflow.transition-model.v1";

fn check_alpha(alpha: f64) -> Result<(), RecsysError> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(RecsysError::InvalidAlpha)
    }
}

impl TransitionModel {
    /// Count every consecutive pair and every item occurrence.
    pub fn train<S: AsRef<[String]>>(sequences: &[S], alpha: f64) -> Result<Self, RecsysError> {
        check_alpha(alpha)?;
        if !sequences.iter().any(|s| s.as_ref().len() >= 2) {
            return Err(RecsysError::EmptyDataset);
        }
        let mut popularity: BTreeMap<&str, u64> = BTreeMap::new();
        for s in sequences {
            for item in s.as_ref() {
                *popularity.entry(item.as_str()).or_default() += 1;
            }
        }
        let vocab: Vec<String> = popularity.keys().map(|s| s.to_string()).collect();
        let index = |sku: &str| vocab.binary_search_by(|v| v.as_str().cmp(sku)).unwrap() as u32;
        let mut counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for s in sequences {
            for w in s.as_ref().windows(2) {
                *counts.entry((index(&w[0]), index(&w[1]))).or_default() += 1;
            }
        }
        let pop: Vec<u64> = popularity.values().copied().collect();
        let triples = counts.into_iter().map(|((i, j), c)| (i, j, c)).collect();
        Self::from_parts(vocab.clone(), alpha, pop, triples)
    }

    /// Assemble a model from explicit parts. `vocab` must be strictly
    /// sorted; triples may repeat a pair, in which case they add up.
    pub fn from_parts(
        vocab: Vec<String>,
        alpha: f64,
        popularity: Vec<u64>,
        counts: Vec<(u32, u32, u64)>,
    ) -> Result<Self, RecsysError> {
        check_alpha(alpha)?;
        if popularity.len() != vocab.len() || vocab.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RecsysError::Malformed("vocab must be sorted, unique and match popularity"));
        }
        let n = vocab.len();
        let mut merged: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for (i, j, c) in counts {
            if i as usize >= n || j as usize >= n {
                return Err(RecsysError::Malformed("count index outside vocab"));
            }
            if c > 0 {
                *merged.entry((i, j)).or_default() += c;
            }
        }
        let mut rows = alloc::vec![Vec::new(); n];
        let mut row_totals = alloc::vec![0u64; n];
        for ((i, j), c) in merged {
            rows[i as usize].push((j, c));
            row_totals[i as usize] += c;
        }
        let mut pop_order: Vec<u32> = (0..n as u32).collect();
        pop_order.sort_by(|&a, &b| {
            popularity[b as usize]
                .cmp(&popularity[a as usize])
                .then_with(|| vocab[a as usize].cmp(&vocab[b as usize]))
        });
        let mut pop_rank = alloc::vec![0u32; n];
        for (rank, &idx) in pop_order.iter().enumerate() {
            pop_rank[idx as usize] = rank as u32;
        }
        Ok(TransitionModel {
            vocab,
            alpha,
            popularity,
            rows,
            row_totals,
            pop_order,
            pop_rank,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn index_of(&self, sku: &str) -> Option<usize> {
        self.vocab.binary_search_by(|v| v.as_str().cmp(sku)).ok()
    }

    pub fn popularity(&self, sku: &str) -> u64 {
        self.index_of(sku).map_or(0, |i| self.popularity[i])
    }

    pub fn count(&self, from: &str, to: &str) -> u64 {
        match (self.index_of(from), self.index_of(to)) {
            (Some(i), Some(j)) => self.rows[i]
                .binary_search_by_key(&(j as u32), |&(t, _)| t)
                .map_or(0, |p| self.rows[i][p].1),
            _ => 0,
        }
    }

    /// Observed outgoing transitions from `sku`.
    pub fn row_total(&self, sku: &str) -> u64 {
        self.index_of(sku).map_or(0, |i| self.row_totals[i])
    }

    /// All non-zero counts as `(from, to, count)` in index order.
    pub fn counts(&self) -> impl Iterator<Item = (&str, &str, u64)> + '_ {
        self.rows.iter().enumerate().flat_map(move |(i, row)| {
            row.iter()
                .map(move |&(j, c)| (self.vocab[i].as_str(), self.vocab[j as usize].as_str(), c))
        })
    }

    fn row_defined(&self, i: usize) -> bool {
        self.row_totals[i] > 0 || self.alpha > 0.0
    }

    /// `P(to|from)`, or `None` for an unknown sku or an undefined row.
    pub fn probability(&self, from: &str, to: &str) -> Option<f64> {
        let i = self.index_of(from)?;
        self.index_of(to)?;
        if !self.row_defined(i) {
            return None;
        }
        let denom = self.row_totals[i] as f64 + self.alpha * self.vocab.len() as f64;
        Some((self.count(from, to) as f64 + self.alpha) / denom)
    }

    /// Top-`k` next items for `context`, excluding the context itself.
    ///
    /// Order is probability desc, then popularity desc, then sku asc. Since
    /// the smoothing term is shared by a whole row, probability order equals
    /// count order for any `alpha`. Unknown contexts and undefined rows fall
    /// back to popularity order.
    pub fn recommend(&self, context: &str, k: usize) -> Result<Vec<&str>, RecsysError> {
        if k == 0 {
            return Err(RecsysError::InvalidK);
        }
        if self.vocab.is_empty() {
            return Err(RecsysError::EmptyModel);
        }
        let ctx = self.index_of(context);
        let mut out: Vec<u32> = Vec::with_capacity(k.min(self.vocab.len()));
        if let Some(i) = ctx.filter(|&i| self.row_totals[i] > 0) {
            let mut seen: Vec<(u32, u64)> = self.rows[i].iter().copied().filter(|&(j, _)| j as usize != i).collect();
            seen.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| self.pop_rank[a.0 as usize].cmp(&self.pop_rank[b.0 as usize])));
            out.extend(seen.iter().map(|&(j, _)| j).take(k));
            if out.len() < k {
                let have = |j: u32| self.rows[i].binary_search_by_key(&j, |&(t, _)| t).is_ok();
                out.extend(
                    self.pop_order
                        .iter()
                        .copied()
                        .filter(|&j| j as usize != i && !have(j))
                        .take(k - out.len()),
                );
            }
        } else {
            out.extend(
                self.pop_order
                    .iter()
                    .copied()
                    .filter(|&j| Some(j as usize) != ctx)
                    .take(k),
            );
        }
        Ok(out.into_iter().map(|j| self.vocab[j as usize].as_str()).collect())
    }

    /// The popularity baseline: most popular items, excluding the context.
    pub fn popular(&self, context: &str, k: usize) -> Vec<&str> {
        let ctx = self.index_of(context);
        self.pop_order
            .iter()
            .copied()
            .filter(|&j| Some(j as usize) != ctx)
            .take(k)
            .map(|j| self.vocab[j as usize].as_str())
            .collect()
    }

    /// Canonical JSON encoding of the model.
    pub fn encode(&self) -> Vec<u8> {
        let file = ModelFile {
            format: FORMAT.to_string(),
            alpha: self.alpha,
            vocab: self.vocab.clone(),
            popularity: self.popularity.clone(),
            counts: self
                .rows
                .iter()
                .enumerate()
                .flat_map(|(i, r)| r.iter().map(move |&(j, c)| (i as u32, j, c)))
                .collect(),
        };
        serde_json::to_vec(&file).expect("model serializes")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RecsysError> {
        let file: ModelFile = serde_json::from_slice(bytes).map_err(|_| RecsysError::Malformed("not a model document"))?;
        if file.format != FORMAT {
            return Err(RecsysError::Malformed("unsupported model format"));
        }
        Self::from_parts(file.vocab, file.alpha, file.popularity, file.counts)
    }

    /// Content-addressed id of the encoded model.
    pub fn version(&self) -> String {
        content_id(&self.encode())
    }
}
