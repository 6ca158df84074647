//! Deterministic synthetic shoppers with a known transition process.
//!
//! Randomness comes from xoshiro256++ seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`). Derived draws are pinned here so
//! any reimplementation reproduces the same stream:
//!
//! - uniform: `(next_u64 >> 11) * 2^-53`, in `[0, 1)`;
//! - categorical: first index whose running sum of weights exceeds a uniform;
//! - step gap: `min + next_u64 % (max - min + 1)` milliseconds.
//!
//! Per session, draws happen in this order: start item, then per step one
//! event-type draw and one gap draw, then the continue draw and, if
//! continuing, the next item.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::event::{ClientEvent, EventType};

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Each item sends half its mass to the next item and a fifth to the
    /// item seven ahead; the rest is uniform.
    Skewed,
    Uniform,
    /// Uniform within consecutive blocks of ten items.
    BlockDiagonal,
}

impl core::str::FromStr for Preset {
    type Err = DatagenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "skewed" => Ok(Preset::Skewed),
            "uniform" => Ok(Preset::Uniform),
            "block-diagonal" => Ok(Preset::BlockDiagonal),
            _ => Err(DatagenError::InvalidModel("unknown preset")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Start-time distance between consecutive sessions.
    pub session_spacing_ms: u64,
    pub min_step_ms: u64,
    pub max_step_ms: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            session_spacing_ms: 60_000,
            min_step_ms: 5_000,
            max_step_ms: 300_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShopperModel {
    pub catalog: Vec<String>,
    /// Row-stochastic next-item matrix over `catalog`.
    pub transition: Vec<Vec<f64>>,
    pub start_dist: Vec<f64>,
    /// Geometric session length: after every item, continue with this
    /// probability.
    pub continue_p: f64,
    /// Probabilities of detail, add, purchase for each step.
    pub event_mix: [f64; 3],
    pub seed: u64,
    #[serde(default)]
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatagenError {
    #[error("INVALID_MODEL: {0}")]
    InvalidModel(&'static str),
}

pub fn sku_name(i: usize) -> String {
    format!("sku-{i:04}")
}

fn normalize(w: &mut [f64]) {
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
}

fn preset_matrix(preset: Preset, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut row = alloc::vec![0.0; n];
            match preset {
                Preset::Uniform => row.iter_mut().for_each(|x| *x = 1.0),
                Preset::Skewed => {
                    row.iter_mut().for_each(|x| *x = 0.3 / n as f64);
                    row[(i + 1) % n] += 0.5;
                    row[(i + 7) % n] += 0.2;
                }
                Preset::BlockDiagonal => {
                    let block = i / 10;
                    for (j, x) in row.iter_mut().enumerate() {
                        if j / 10 == block {
                            *x = 1.0;
                        }
                    }
                }
            }
            normalize(&mut row);
            row
        })
        .collect()
}

impl ShopperModel {
    /// Named preset over `n` items, p = 0.75, a gently decaying
    /// `10 / (10 + i)` start distribution and a 70/20/10 event mix.
    pub fn preset(preset: Preset, n: usize, seed: u64) -> Result<Self, DatagenError> {
        if n == 0 {
            return Err(DatagenError::InvalidModel("catalog must be non-empty"));
        }
        let mut start: Vec<f64> = (0..n).map(|i| 10.0 / (10.0 + i as f64)).collect();
        normalize(&mut start);
        let model = ShopperModel {
            catalog: (0..n).map(sku_name).collect(),
            transition: preset_matrix(preset, n),
            start_dist: start,
            continue_p: 0.75,
            event_mix: [0.7, 0.2, 0.1],
            seed,
            timing: Timing::default(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let n = self.catalog.len();
        let stochastic = |row: &[f64]| {
            row.len() == n
                && row.iter().all(|&x| x.is_finite() && x >= 0.0)
                && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOLERANCE
        };
        if n == 0 {
            return Err(DatagenError::InvalidModel("catalog must be non-empty"));
        }
        if self.transition.len() != n || !self.transition.iter().all(|r| stochastic(r)) {
            return Err(DatagenError::InvalidModel("transition matrix is not row-stochastic"));
        }
        if !stochastic(&self.start_dist) {
            return Err(DatagenError::InvalidModel("start distribution does not sum to 1"));
        }
        if !(self.continue_p > 0.0 && self.continue_p < 1.0) {
            return Err(DatagenError::InvalidModel("continue probability must be in (0, 1)"));
        }
        let mix_ok = self.event_mix.iter().all(|&x| x >= 0.0) && (self.event_mix.iter().sum::<f64>() - 1.0).abs() <= ROW_TOLERANCE;
        if !mix_ok {
            return Err(DatagenError::InvalidModel("event mix does not sum to 1"));
        }
        let t = &self.timing;
        if t.min_step_ms == 0 || t.min_step_ms > t.max_step_ms || t.max_step_ms >= 30 * 60 * 1000 {
            return Err(DatagenError::InvalidModel("step gaps must lie in [1 ms, 30 min)"));
        }
        Ok(())
    }
}

struct Draws(Xoshiro256PlusPlus);

impl Draws {
    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn categorical(&mut self, weights: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = i;
            }
            acc += w;
            if u < acc {
                return i;
            }
        }
        last_positive
    }

    fn between(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.0.next_u64() % (hi - lo + 1)
    }
}

/// One generated event, with the session order it was drawn in.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub session: usize,
    pub step: usize,
    pub event: ClientEvent,
}

/// Sample `n_sessions` sessions. Output is ordered by `(ts, session, step)`;
/// within a session timestamps strictly increase.
pub fn generate(model: &ShopperModel, n_sessions: usize, clock_start: i64) -> Result<Vec<Generated>, DatagenError> {
    model.validate()?;
    let mut rng = Draws(Xoshiro256PlusPlus::seed_from_u64(model.seed));
    let kinds = [EventType::Detail, EventType::Add, EventType::Purchase];
    let mut out = Vec::new();
    for session in 0..n_sessions {
        let sid = format!("s{}-{session:06}", model.seed);
        let mut ts = clock_start + (session as u64 * model.timing.session_spacing_ms) as i64;
        let mut item = rng.categorical(&model.start_dist);
        let mut step = 0;
        loop {
            let kind = kinds[rng.categorical(&model.event_mix)];
            let gap = rng.between(model.timing.min_step_ms, model.timing.max_step_ms);
            out.push(Generated {
                session,
                step,
                event: ClientEvent::new(sid.clone(), kind, Some(model.catalog[item].clone()), ts),
            });
            if rng.uniform() >= model.continue_p {
                break;
            }
            item = rng.categorical(&model.transition[item]);
            ts += gap as i64;
            step += 1;
        }
    }
    out.sort_by_key(|g| (g.event.ts, g.session, g.step));
    Ok(out)
}
