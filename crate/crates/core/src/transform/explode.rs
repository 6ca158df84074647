//! Raw payloads to typed interaction rows.
//!
//! Every input record lands in exactly one of the two outputs. Required
//! fields are `event_type` (one of the declared kinds) and `ts` (positive
//! integer). A missing or null `session_id` is kept as null so the quality
//! suite can measure it; a present but non-string one is a reject.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::event::EventType;
use crate::raw::{PartitionId, RawRecord, RecordRef};
use crate::table::{Row, Table};

pub const INTERACTION_COLUMNS: [&str; 7] = [
    "session_id",
    "event_type",
    "sku",
    "ts",
    "ingestion_ts",
    "partition_id",
    "record_id",
];

pub const REJECT_COLUMNS: [&str; 6] = [
    "partition_id",
    "record_id",
    "ingestion_ts",
    "reason",
    "field",
    "payload",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRow {
    pub session_id: Option<String>,
    pub event_type: EventType,
    pub sku: Option<String>,
    pub ts: i64,
    pub ingestion_ts: u64,
    pub source: RecordRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    MalformedPayload,
    MissingField,
    InvalidField,
    UnknownEventType,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::MalformedPayload => "MALFORMED_PAYLOAD",
            RejectReason::MissingField => "MISSING_FIELD",
            RejectReason::InvalidField => "INVALID_FIELD",
            RejectReason::UnknownEventType => "UNKNOWN_EVENT_TYPE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRow {
    pub source: RecordRef,
    pub ingestion_ts: u64,
    pub reason: RejectReason,
    pub field: Option<String>,
    /// Payload as UTF-8 (lossy); the raw log keeps the exact bytes.
    pub payload: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Exploded {
    pub interactions: Vec<InteractionRow>,
    pub rejects: Vec<RejectRow>,
}

pub fn explode<'a, I>(records: I) -> Exploded
where
    I: IntoIterator<Item = &'a RawRecord>,
{
    let mut out = Exploded::default();
    for rec in records {
        match explode_record(rec) {
            Ok(row) => out.interactions.push(row),
            Err(rej) => out.rejects.push(rej),
        }
    }
    out
}

pub fn explode_record(rec: &RawRecord) -> Result<InteractionRow, RejectRow> {
    let reject = |reason: RejectReason, field: Option<&str>| RejectRow {
        source: rec.source(),
        ingestion_ts: rec.ingestion_ts,
        reason,
        field: field.map(|f| f.to_string()),
        payload: String::from_utf8_lossy(&rec.payload).into_owned(),
    };

    let doc: Map<String, Value> = match serde_json::from_slice::<Value>(&rec.payload) {
        Ok(Value::Object(m)) => m,
        _ => return Err(reject(RejectReason::MalformedPayload, None)),
    };

    let event_type = match doc.get("event_type") {
        None | Some(Value::Null) => return Err(reject(RejectReason::MissingField, Some("event_type"))),
        Some(Value::String(s)) => match s.parse::<EventType>() {
            Ok(t) => t,
            Err(_) => return Err(reject(RejectReason::UnknownEventType, Some("event_type"))),
        },
        Some(_) => return Err(reject(RejectReason::InvalidField, Some("event_type"))),
    };

    let ts = match doc.get("ts") {
        None | Some(Value::Null) => return Err(reject(RejectReason::MissingField, Some("ts"))),
        Some(Value::Number(n)) => match n.as_i64() {
            Some(t) if t > 0 => t,
            _ => return Err(reject(RejectReason::InvalidField, Some("ts"))),
        },
        Some(_) => return Err(reject(RejectReason::InvalidField, Some("ts"))),
    };

    let session_id = match doc.get("session_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.is_empty() => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(reject(RejectReason::InvalidField, Some("session_id"))),
    };

    let sku = match doc.get("sku") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(reject(RejectReason::InvalidField, Some("sku"))),
    };

    Ok(InteractionRow {
        session_id,
        event_type,
        sku,
        ts,
        ingestion_ts: rec.ingestion_ts,
        source: rec.source(),
    })
}

fn opt_str(v: &Option<String>) -> Value {
    v.as_ref().map_or(Value::Null, |s| Value::String(s.clone()))
}

impl InteractionRow {
    pub fn to_row(&self) -> Row {
        let mut r = Row::new();
        r.insert("session_id".into(), opt_str(&self.session_id));
        r.insert("event_type".into(), Value::String(self.event_type.as_str().into()));
        r.insert("sku".into(), opt_str(&self.sku));
        r.insert("ts".into(), Value::from(self.ts));
        r.insert("ingestion_ts".into(), Value::from(self.ingestion_ts));
        r.insert("partition_id".into(), Value::from(self.source.partition_id.0));
        r.insert("record_id".into(), Value::from(self.source.record_id));
        r
    }

    /// Inverse of [`InteractionRow::to_row`]; `None` if the row does not
    /// have interaction shape.
    pub fn from_row(row: &Row) -> Option<Self> {
        let text = |k: &str| match row.get(k) {
            Some(Value::String(s)) => Some(Some(s.clone())),
            None | Some(Value::Null) => Some(None),
            Some(_) => None,
        };
        Some(InteractionRow {
            session_id: text("session_id")?,
            event_type: row.get("event_type")?.as_str()?.parse().ok()?,
            sku: text("sku")?,
            ts: row.get("ts")?.as_i64()?,
            ingestion_ts: row.get("ingestion_ts")?.as_u64()?,
            source: RecordRef {
                partition_id: PartitionId(row.get("partition_id")?.as_u64()?),
                record_id: row.get("record_id")?.as_u64()?,
            },
        })
    }
}

impl RejectRow {
    pub fn to_row(&self) -> Row {
        let mut r = Row::new();
        r.insert("partition_id".into(), Value::from(self.source.partition_id.0));
        r.insert("record_id".into(), Value::from(self.source.record_id));
        r.insert("ingestion_ts".into(), Value::from(self.ingestion_ts));
        r.insert("reason".into(), Value::String(self.reason.to_string()));
        r.insert("field".into(), opt_str(&self.field));
        r.insert("payload".into(), Value::String(self.payload.clone()));
        r
    }
}

pub fn interaction_columns() -> Vec<String> {
    INTERACTION_COLUMNS.iter().map(|c| c.to_string()).collect()
}

pub fn reject_columns() -> Vec<String> {
    REJECT_COLUMNS.iter().map(|c| c.to_string()).collect()
}

impl Exploded {
    pub fn into_tables(self) -> (Table, Table) {
        (
            Table::with_rows(
                interaction_columns(),
                self.interactions.iter().map(InteractionRow::to_row).collect(),
            ),
            Table::with_rows(
                reject_columns(),
                self.rejects.iter().map(RejectRow::to_row).collect(),
            ),
        )
    }
}
