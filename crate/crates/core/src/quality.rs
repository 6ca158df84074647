//! Declarative data-quality expectations and the training gate.
//!
//! All checks are full scans and all observed values are exact ratios or
//! counts computed over every row.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::hash::sha256_hex;
use crate::table::{is_null, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expectation {
    /// Fraction of null or missing values must not exceed `max_fraction`.
    NotNull {
        table: String,
        column: String,
        #[serde(default)]
        max_fraction: f64,
    },
    /// Fraction of non-null values that repeat an earlier value.
    Unique {
        table: String,
        column: String,
        #[serde(default)]
        max_fraction: f64,
    },
    /// Fraction of non-null values outside `values`.
    AcceptedValues {
        table: String,
        column: String,
        values: Vec<Value>,
        #[serde(default)]
        max_fraction: f64,
    },
    RowCountMin { table: String, min: u64 },
    /// `rejects / (rejects + accepted)` over the rejects table and its
    /// companion accepted table.
    MaxRejectRatio {
        table: String,
        accepted_table: String,
        max_ratio: f64,
    },
    /// `now - max(column)`, in milliseconds.
    FreshnessMaxAge {
        table: String,
        column: String,
        max_age_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub expectation: Expectation,
    pub status: Status,
    /// `None` only when there was nothing to measure (freshness of an empty
    /// table), which counts as a failure.
    pub observed: Option<f64>,
    pub evaluated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Suite {
    pub name: String,
    pub expectations: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub results: Vec<CheckResult>,
    pub overall: Status,
    pub warnings: Vec<String>,
    /// Content hash of every table the suite read.
    pub input_hashes: BTreeMap<String, String>,
    pub evaluated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Gate {
    Pass,
    Block { reasons: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QualityError {
    #[error("UNKNOWN_TABLE: {0}")]
    UnknownTable(String),
    #[error("UNKNOWN_COLUMN: {table}.{column}")]
    UnknownColumn { table: String, column: String },
    #[error("invalid parameters for {expectation}: {reason}")]
    InvalidParams { expectation: String, reason: &'static str },
}

/// A table as handed to the suite: rows plus the manifest hash for lineage.
#[derive(Debug, Clone, Copy)]
pub struct TableInput<'a> {
    pub table: &'a Table,
    pub content_hash: &'a str,
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn valid_fraction(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl Expectation {
    pub fn tables(&self) -> Vec<&str> {
        match self {
            Expectation::MaxRejectRatio {
                table, accepted_table, ..
            } => alloc::vec![table.as_str(), accepted_table.as_str()],
            Expectation::NotNull { table, .. }
            | Expectation::Unique { table, .. }
            | Expectation::AcceptedValues { table, .. }
            | Expectation::RowCountMin { table, .. }
            | Expectation::FreshnessMaxAge { table, .. } => alloc::vec![table.as_str()],
        }
    }

    pub fn column(&self) -> Option<&str> {
        match self {
            Expectation::NotNull { column, .. }
            | Expectation::Unique { column, .. }
            | Expectation::AcceptedValues { column, .. }
            | Expectation::FreshnessMaxAge { column, .. } => Some(column),
            Expectation::RowCountMin { .. } | Expectation::MaxRejectRatio { .. } => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Expectation::NotNull { .. } => "not_null",
            Expectation::Unique { .. } => "unique",
            Expectation::AcceptedValues { .. } => "accepted_values",
            Expectation::RowCountMin { .. } => "row_count_min",
            Expectation::MaxRejectRatio { .. } => "max_reject_ratio",
            Expectation::FreshnessMaxAge { .. } => "freshness_max_age",
        }
    }

    /// Short label such as `not_null(interactions.session_id)`.
    pub fn label(&self) -> String {
        let t = self.tables().join("/");
        match self.column() {
            Some(c) => format!("{}({}.{})", self.kind(), t, c),
            None => format!("{}({})", self.kind(), t),
        }
    }

    pub fn validate(&self) -> Result<(), QualityError> {
        let bad = |reason| QualityError::InvalidParams {
            expectation: self.label(),
            reason,
        };
        match self {
            Expectation::NotNull { max_fraction, .. }
            | Expectation::Unique { max_fraction, .. }
            | Expectation::AcceptedValues { max_fraction, .. } => {
                if !valid_fraction(*max_fraction) {
                    return Err(bad("max_fraction must be within [0, 1]"));
                }
            }
            Expectation::MaxRejectRatio { max_ratio, .. } => {
                if !valid_fraction(*max_ratio) {
                    return Err(bad("max_ratio must be within [0, 1]"));
                }
            }
            Expectation::RowCountMin { .. } | Expectation::FreshnessMaxAge { .. } => {}
        }
        Ok(())
    }

    /// Measure and decide. Returns `(observed, passed)`.
    fn measure(&self, tables: &BTreeMap<String, TableInput<'_>>, now_ms: u64) -> Result<(Option<f64>, bool), QualityError> {
        let lookup = |name: &str| {
            tables
                .get(name)
                .map(|t| t.table)
                .ok_or_else(|| QualityError::UnknownTable(name.to_string()))
        };
        let with_column = |name: &str, column: &str| {
            let t = lookup(name)?;
            if t.has_column(column) {
                Ok(t)
            } else {
                Err(QualityError::UnknownColumn {
                    table: name.to_string(),
                    column: column.to_string(),
                })
            }
        };

        Ok(match self {
            Expectation::NotNull {
                table,
                column,
                max_fraction,
            } => {
                let t = with_column(table, column)?;
                let nulls = t.column(column).filter(|v| is_null(*v)).count();
                let obs = fraction(nulls, t.len());
                (Some(obs), obs <= *max_fraction)
            }
            Expectation::Unique {
                table,
                column,
                max_fraction,
            } => {
                let t = with_column(table, column)?;
                let mut seen = BTreeSet::new();
                let mut non_null = 0usize;
                let mut dup = 0usize;
                for v in t.column(column).flatten().filter(|v| !v.is_null()) {
                    non_null += 1;
                    if !seen.insert(serde_json::to_vec(v).unwrap()) {
                        dup += 1;
                    }
                }
                let obs = fraction(dup, non_null);
                (Some(obs), obs <= *max_fraction)
            }
            Expectation::AcceptedValues {
                table,
                column,
                values,
                max_fraction,
            } => {
                let t = with_column(table, column)?;
                let mut non_null = 0usize;
                let mut outside = 0usize;
                for v in t.column(column).flatten().filter(|v| !v.is_null()) {
                    non_null += 1;
                    if !values.contains(v) {
                        outside += 1;
                    }
                }
                let obs = fraction(outside, non_null);
                (Some(obs), obs <= *max_fraction)
            }
            Expectation::RowCountMin { table, min } => {
                let n = lookup(table)?.len() as u64;
                (Some(n as f64), n >= *min)
            }
            Expectation::MaxRejectRatio {
                table,
                accepted_table,
                max_ratio,
            } => {
                let rejects = lookup(table)?.len();
                let accepted = lookup(accepted_table)?.len();
                let obs = fraction(rejects, rejects + accepted);
                (Some(obs), obs <= *max_ratio)
            }
            Expectation::FreshnessMaxAge {
                table,
                column,
                max_age_ms,
            } => {
                let t = with_column(table, column)?;
                let newest = t.column(column).flatten().filter_map(Value::as_i64).max();
                match newest {
                    None => (None, false),
                    Some(latest) => {
                        let age = now_ms as i64 - latest;
                        (Some(age as f64), age <= *max_age_ms as i64)
                    }
                }
            }
        })
    }
}

impl Suite {
    pub fn validate(&self) -> Result<(), QualityError> {
        self.expectations.iter().try_for_each(Expectation::validate)
    }

    /// Every table referenced by the suite, deduplicated and sorted.
    pub fn tables(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.expectations.iter().flat_map(|e| e.tables()).collect();
        set.into_iter().map(String::from).collect()
    }
}

pub fn run_suite(suite: &Suite, tables: &BTreeMap<String, TableInput<'_>>, now_ms: u64) -> Result<SuiteReport, QualityError> {
    suite.validate()?;
    let mut results = Vec::with_capacity(suite.expectations.len());
    let mut input_hashes = BTreeMap::new();
    for exp in &suite.expectations {
        let (observed, passed) = exp.measure(tables, now_ms)?;
        for t in exp.tables() {
            input_hashes.insert(t.to_string(), tables[t].content_hash.to_string());
        }
        results.push(CheckResult {
            expectation: exp.clone(),
            status: if passed { Status::Pass } else { Status::Fail },
            observed,
            evaluated_at: now_ms,
        });
    }
    let mut warnings = Vec::new();
    if results.is_empty() {
        warnings.push("empty suite: gate passes vacuously".to_string());
    }
    let overall = if results.iter().all(|r| r.status == Status::Pass) {
        Status::Pass
    } else {
        Status::Fail
    };
    Ok(SuiteReport {
        suite: suite.name.clone(),
        results,
        overall,
        warnings,
        input_hashes,
        evaluated_at: now_ms,
    })
}

fn threshold(e: &Expectation) -> String {
    match e {
        Expectation::NotNull { max_fraction, .. }
        | Expectation::Unique { max_fraction, .. }
        | Expectation::AcceptedValues { max_fraction, .. } => format!("<= {max_fraction}"),
        Expectation::RowCountMin { min, .. } => format!(">= {min}"),
        Expectation::MaxRejectRatio { max_ratio, .. } => format!("<= {max_ratio}"),
        Expectation::FreshnessMaxAge { max_age_ms, .. } => format!("<= {max_age_ms} ms"),
    }
}

impl CheckResult {
    pub fn describe(&self) -> String {
        let obs = self.observed.map_or_else(|| "none".to_string(), |o| format!("{o}"));
        format!("{}: observed {} (expected {})", self.expectation.label(), obs, threshold(&self.expectation))
    }
}

impl SuiteReport {
    /// Hash of the canonical report encoding; used as lineage.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("reports serialize"))
    }
}

pub fn gate(report: &SuiteReport) -> Gate {
    let reasons: Vec<String> = report
        .results
        .iter()
        .filter(|r| r.status == Status::Fail)
        .map(CheckResult::describe)
        .collect();
    if reasons.is_empty() && report.overall == Status::Pass {
        Gate::Pass
    } else {
        Gate::Block { reasons }
    }
}

/// Shipped suite: null session ids, enum membership, reject ratio, a row
/// floor and freshness of ingestion.
pub fn default_suite(min_rows: u64, max_age_ms: u64) -> Suite {
    use crate::event::EventType;
    Suite {
        name: "default".to_string(),
        expectations: alloc::vec![
            Expectation::NotNull {
                table: "interactions".into(),
                column: "session_id".into(),
                max_fraction: 0.0,
            },
            Expectation::AcceptedValues {
                table: "interactions".into(),
                column: "event_type".into(),
                values: EventType::ALL.iter().map(|t| Value::String(t.as_str().into())).collect(),
                max_fraction: 0.0,
            },
            Expectation::MaxRejectRatio {
                table: "rejects".into(),
                accepted_table: "interactions".into(),
                max_ratio: 0.02,
            },
            Expectation::RowCountMin {
                table: "interactions".into(),
                min: min_rows,
            },
            Expectation::FreshnessMaxAge {
                table: "interactions".into(),
                column: "ingestion_ts".into(),
                max_age_ms,
            },
        ],
    }
}
