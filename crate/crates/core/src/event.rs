//! Client event documents.
//!
//! Collection is syntactic only: a body is accepted when it parses as a JSON
//! object. Field-level validation happens later, in the explode operator, so
//! the raw log keeps exactly what the browser sent.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Shopper action kinds understood by the transform layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Pageview,
    Detail,
    Add,
    Purchase,
    Remove,
}

impl EventType {
    pub const ALL: [EventType; 5] = [
        EventType::Pageview,
        EventType::Detail,
        EventType::Add,
        EventType::Purchase,
        EventType::Remove,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Pageview => "pageview",
            EventType::Detail => "detail",
            EventType::Add => "add",
            EventType::Purchase => "purchase",
            EventType::Remove => "remove",
        }
    }

    /// Whether an event of this type places its sku into a session sequence.
    pub fn contributes_item(self) -> bool {
        matches!(self, EventType::Detail | EventType::Add | EventType::Purchase)
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownEventType;

impl FromStr for EventType {
    type Err = UnknownEventType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or(UnknownEventType)
    }
}

/// A client event as emitted by the synthetic shopper (or any SDK speaking
/// this schema). `event_type` stays a plain string: the collector must not
/// reject unknown kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEvent {
    pub session_id: String,
    pub event_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sku: Option<String>,
    pub ts: i64,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl ClientEvent {
    pub fn new(session_id: impl Into<String>, event_type: EventType, sku: Option<String>, ts: i64) -> Self {
        ClientEvent {
            session_id: session_id.into(),
            event_type: String::from(event_type.as_str()),
            sku,
            ts,
            extra: BTreeMap::new(),
        }
    }

    /// Compact JSON document, field order `session_id, event_type, sku, ts`
    /// followed by extras in key order.
    pub fn to_document(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("client events always serialize")
    }
}

/// Syntactic admission check used by the collector: the body must be a JSON
/// object. Returns the parsed object so callers can inspect it if they wish.
pub fn parse_document(body: &[u8]) -> Result<Map<String, Value>, DocumentError> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(DocumentError::NotAnObject),
        Err(_) => Err(DocumentError::Unparseable),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DocumentError {
    #[error("payload is not valid JSON")]
    Unparseable,
    #[error("payload is JSON but not a key-value object")]
    NotAnObject,
}
