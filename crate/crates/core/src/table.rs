//! Row tables shared by the transform and quality layers.
//!
//! A row is a JSON object with keys in sorted order, so one row has exactly
//! one encoding. A table stores its rows sorted by that encoding; equal
//! multisets of rows therefore produce byte-identical files.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::hash::sha256_hex;

pub type Row = BTreeMap<String, Value>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("row {line} is not a JSON object")]
pub struct RowDecodeError {
    pub line: usize,
}

pub fn encode_row(row: &Row) -> Vec<u8> {
    serde_json::to_vec(row).expect("rows always serialize")
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Table {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn with_rows(columns: Vec<String>, rows: Vec<Row>) -> Self {
        let mut t = Table { columns, rows };
        t.canonicalize();
        t
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_column(&self, column: &str) -> bool {
        self.columns.iter().any(|c| c == column)
    }

    /// Sort rows by their canonical encoding.
    pub fn canonicalize(&mut self) {
        let mut keyed: Vec<(Vec<u8>, Row)> = self
            .rows
            .drain(..)
            .map(|r| (encode_row(&r), r))
            .collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        self.rows = keyed.into_iter().map(|(_, r)| r).collect();
    }

    /// Newline-delimited row documents, one per line, each line terminated.
    pub fn to_ndjson(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for row in &self.rows {
            out.extend_from_slice(&encode_row(row));
            out.push(b'\n');
        }
        out
    }

    pub fn from_ndjson(columns: Vec<String>, bytes: &[u8]) -> Result<Self, RowDecodeError> {
        let mut rows = Vec::new();
        for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Row = serde_json::from_slice(line).map_err(|_| RowDecodeError { line: i })?;
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(&self.to_ndjson())
    }

    /// Values of `column` across rows; a missing key reads as `None`.
    pub fn column<'a>(&'a self, column: &'a str) -> impl Iterator<Item = Option<&'a Value>> + 'a {
        self.rows.iter().map(move |r| r.get(column))
    }

    /// Sorted multiset of encoded rows, independent of stored order.
    pub fn sorted_multiset(&self) -> Vec<Vec<u8>> {
        let mut v: Vec<Vec<u8>> = self.rows.iter().map(encode_row).collect();
        v.sort();
        v
    }
}

/// True for JSON null and for a missing key.
pub fn is_null(v: Option<&Value>) -> bool {
    matches!(v, None | Some(Value::Null))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use serde_json::json;

    fn row(v: Value) -> Row {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn canonical_order_ignores_insertion_order() {
        let a = Table::with_rows(
            vec!["x".to_string()],
            vec![row(json!({"x": 2})), row(json!({"x": 1}))],
        );
        let b = Table::with_rows(
            vec!["x".to_string()],
            vec![row(json!({"x": 1})), row(json!({"x": 2}))],
        );
        assert_eq!(a.to_ndjson(), b.to_ndjson());
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn ndjson_round_trip() {
        let t = Table::with_rows(
            vec!["a".to_string(), "b".to_string()],
            vec![row(json!({"b": null, "a": "q"}))],
        );
        let bytes = t.to_ndjson();
        assert_eq!(bytes, b"{\"a\":\"q\",\"b\":null}\n".to_vec());
        let back = Table::from_ndjson(t.columns.clone(), &bytes).unwrap();
        assert_eq!(back, t);
        assert!(Table::from_ndjson(vec![], b"[1]\n").is_err());
    }
}
