//! Row-level operators: filter and aggregate.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use crate::table::{encode_row, is_null, Row, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    Eq { column: String, value: Value },
    Ne { column: String, value: Value },
    In { column: String, values: Vec<Value> },
    IsNull { column: String },
    NotNull { column: String },
    Gt { column: String, value: f64 },
    Lt { column: String, value: f64 },
    And { all: Vec<Predicate> },
    Or { any: Vec<Predicate> },
    Not { not: Box<Predicate> },
}

impl Predicate {
    pub fn matches(&self, row: &Row) -> bool {
        let get = |c: &String| row.get(c.as_str());
        let num = |c: &String| get(c).and_then(Value::as_f64);
        match self {
            Predicate::Eq { column, value } => get(column).unwrap_or(&Value::Null) == value,
            Predicate::Ne { column, value } => get(column).unwrap_or(&Value::Null) != value,
            Predicate::In { column, values } => values.contains(get(column).unwrap_or(&Value::Null)),
            Predicate::IsNull { column } => is_null(get(column)),
            Predicate::NotNull { column } => !is_null(get(column)),
            Predicate::Gt { column, value } => num(column).is_some_and(|x| x > *value),
            Predicate::Lt { column, value } => num(column).is_some_and(|x| x < *value),
            Predicate::And { all } => all.iter().all(|p| p.matches(row)),
            Predicate::Or { any } => any.iter().any(|p| p.matches(row)),
            Predicate::Not { not } => !not.matches(row),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum CounterFn {
    Count,
    CountDistinct { column: String },
    Sum { column: String },
    Min { column: String },
    Max { column: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub name: String,
    #[serde(flatten)]
    pub func: CounterFn,
}

pub fn filter(input: &Table, predicate: &Predicate) -> Table {
    Table::with_rows(
        input.columns.clone(),
        input.rows.iter().filter(|r| predicate.matches(r)).cloned().collect(),
    )
}

#[derive(Default)]
struct Acc {
    count: u64,
    distinct: BTreeSet<Vec<u8>>,
    int_sum: i128,
    float_sum: f64,
    saw_float: bool,
    min: Option<f64>,
    max: Option<f64>,
    min_v: Option<Value>,
    max_v: Option<Value>,
}

fn num_value(x: f64) -> Value {
    Number::from_f64(x).map_or(Value::Null, Value::Number)
}

/// Group rows by `group_by` (missing keys group as null) and evaluate every
/// counter per group. Sum/min/max consider numeric values only; a group with
/// none reports null.
pub fn aggregate(input: &Table, group_by: &[String], counters: &[Counter]) -> Table {
    let mut groups: BTreeMap<Vec<u8>, (Row, Vec<Acc>)> = BTreeMap::new();
    for row in &input.rows {
        let mut key = Row::new();
        for g in group_by {
            key.insert(g.clone(), row.get(g).cloned().unwrap_or(Value::Null));
        }
        let entry = groups
            .entry(encode_row(&key))
            .or_insert_with(|| (key, counters.iter().map(|_| Acc::default()).collect()));
        for (counter, acc) in counters.iter().zip(entry.1.iter_mut()) {
            acc.count += 1;
            let column = match &counter.func {
                CounterFn::Count => continue,
                CounterFn::CountDistinct { column } => {
                    if let Some(v) = row.get(column).filter(|v| !v.is_null()) {
                        acc.distinct.insert(serde_json::to_vec(v).unwrap());
                    }
                    continue;
                }
                CounterFn::Sum { column } | CounterFn::Min { column } | CounterFn::Max { column } => column,
            };
            let Some(v) = row.get(column.as_str()) else { continue };
            let Some(x) = v.as_f64() else { continue };
            match v.as_i64() {
                Some(i) if !acc.saw_float => acc.int_sum += i as i128,
                _ => {
                    if !acc.saw_float {
                        acc.float_sum = acc.int_sum as f64;
                        acc.saw_float = true;
                    }
                    acc.float_sum += x;
                }
            }
            if acc.min.is_none_or(|m| x < m) {
                acc.min = Some(x);
                acc.min_v = Some(v.clone());
            }
            if acc.max.is_none_or(|m| x > m) {
                acc.max = Some(x);
                acc.max_v = Some(v.clone());
            }
        }
    }

    let mut columns: Vec<String> = group_by.to_vec();
    columns.extend(counters.iter().map(|c| c.name.clone()));
    let rows = groups
        .into_values()
        .map(|(mut row, accs)| {
            for (counter, acc) in counters.iter().zip(accs) {
                let any_numeric = acc.min.is_some();
                let v = match &counter.func {
                    CounterFn::Count => Value::from(acc.count),
                    CounterFn::CountDistinct { .. } => Value::from(acc.distinct.len() as u64),
                    CounterFn::Sum { .. } if !any_numeric => Value::Null,
                    CounterFn::Sum { .. } if acc.saw_float => num_value(acc.float_sum),
                    CounterFn::Sum { .. } => i64::try_from(acc.int_sum)
                        .map(Value::from)
                        .unwrap_or_else(|_| num_value(acc.int_sum as f64)),
                    CounterFn::Min { .. } => acc.min_v.unwrap_or(Value::Null),
                    CounterFn::Max { .. } => acc.max_v.unwrap_or(Value::Null),
                };
                row.insert(counter.name.clone(), v);
            }
            row
        })
        .collect();
    Table::with_rows(columns, rows)
}
