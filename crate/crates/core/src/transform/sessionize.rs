//! Splitting per-session activity into item sequences at inactivity gaps.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::explode::InteractionRow;
use crate::table::{Row, Table};

/// Default inactivity cutoff: 30 minutes.
pub const DEFAULT_GAP_MS: i64 = 30 * 60 * 1000;

pub const SESSION_COLUMNS: [&str; 6] = ["session_id", "split_index", "items", "timestamps", "start_ts", "end_ts"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSequence {
    pub session_id: String,
    pub split_index: u32,
    pub items: Vec<String>,
    pub timestamps: Vec<i64>,
    pub start_ts: i64,
    pub end_ts: i64,
}

/// Group by session id, order by `(ts, ingestion_ts, source)`, and cut
/// wherever consecutive client timestamps differ by more than `gap_ms`.
///
/// Only rows with a session id, a sku and an item-bearing event type take
/// part. Output is ordered by `(session_id, split_index)`.
pub fn sessionize(rows: &[InteractionRow], gap_ms: i64) -> Vec<SessionSequence> {
    let mut by_session: BTreeMap<&str, Vec<&InteractionRow>> = BTreeMap::new();
    for row in rows {
        if let (Some(sid), Some(_)) = (&row.session_id, &row.sku) {
            if row.event_type.contributes_item() {
                by_session.entry(sid.as_str()).or_default().push(row);
            }
        }
    }

    let mut out = Vec::new();
    for (sid, mut events) in by_session {
        events.sort_by_key(|r| (r.ts, r.ingestion_ts, r.source));
        let mut split_index = 0u32;
        let mut current: Option<SessionSequence> = None;
        for ev in events {
            let sku = ev.sku.clone().expect("filtered above");
            match current.as_mut() {
                Some(seq) if ev.ts - seq.end_ts <= gap_ms => {
                    seq.items.push(sku);
                    seq.timestamps.push(ev.ts);
                    seq.end_ts = ev.ts;
                }
                _ => {
                    if let Some(done) = current.take() {
                        out.push(done);
                        split_index += 1;
                    }
                    current = Some(SessionSequence {
                        session_id: sid.to_string(),
                        split_index,
                        items: alloc::vec![sku],
                        timestamps: alloc::vec![ev.ts],
                        start_ts: ev.ts,
                        end_ts: ev.ts,
                    });
                }
            }
        }
        out.extend(current);
    }
    out
}

impl SessionSequence {
    pub fn to_row(&self) -> Row {
        let mut r = Row::new();
        r.insert("session_id".into(), Value::String(self.session_id.clone()));
        r.insert("split_index".into(), Value::from(self.split_index));
        r.insert(
            "items".into(),
            Value::Array(self.items.iter().cloned().map(Value::String).collect()),
        );
        r.insert(
            "timestamps".into(),
            Value::Array(self.timestamps.iter().copied().map(Value::from).collect()),
        );
        r.insert("start_ts".into(), Value::from(self.start_ts));
        r.insert("end_ts".into(), Value::from(self.end_ts));
        r
    }

    pub fn from_row(row: &Row) -> Option<Self> {
        let items = row
            .get("items")?
            .as_array()?
            .iter()
            .map(|v| v.as_str().map(|s| s.to_string()))
            .collect::<Option<Vec<_>>>()?;
        let timestamps = match row.get("timestamps") {
            Some(Value::Array(ts)) => ts.iter().map(Value::as_i64).collect::<Option<Vec<_>>>()?,
            _ => Vec::new(),
        };
        Some(SessionSequence {
            session_id: row.get("session_id")?.as_str()?.to_string(),
            split_index: u32::try_from(row.get("split_index")?.as_u64()?).ok()?,
            items,
            timestamps,
            start_ts: row.get("start_ts")?.as_i64()?,
            end_ts: row.get("end_ts")?.as_i64()?,
        })
    }
}

pub fn session_columns() -> Vec<String> {
    SESSION_COLUMNS.iter().map(|c| c.to_string()).collect()
}

pub fn sessions_table(seqs: &[SessionSequence]) -> Table {
    Table::with_rows(session_columns(), seqs.iter().map(SessionSequence::to_row).collect())
}

/// Decode a sessions table back into sequences, ordered by
/// `(session_id, split_index)`. Rows of the wrong shape are skipped.
pub fn sequences_from_table(table: &Table) -> Vec<SessionSequence> {
    let mut seqs: Vec<SessionSequence> = table.rows.iter().filter_map(SessionSequence::from_row).collect();
    seqs.sort_by(|a, b| (&a.session_id, a.split_index).cmp(&(&b.session_id, b.split_index)));
    seqs
}
