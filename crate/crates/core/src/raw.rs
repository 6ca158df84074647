//! Raw-record envelope and segment frame codec.
//!
//! A segment is a plain concatenation of frames:
//!
//! ```text
//! u32 LE  payload length
//! u64 LE  record id (offset within partition)
//! u64 LE  ingestion timestamp, server epoch ms
//! u8      schema version
//! [u8]    payload, verbatim client body
//! u32 LE  CRC-32 (IEEE) over every preceding byte of the frame
//! ```

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u8 = 1;
pub const HOUR_MS: u64 = 3_600_000;
pub const FRAME_HEADER_LEN: usize = 4 + 8 + 8 + 1;
pub const FRAME_TRAILER_LEN: usize = 4;

/// Hour-of-ingestion partition key: `ingestion_ts / 3_600_000`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartitionId(pub u64);

impl PartitionId {
    pub fn for_ingestion(ingestion_ts: u64) -> Self {
        PartitionId(ingestion_ts / HOUR_MS)
    }
}

impl fmt::Display for PartitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:010}", self.0)
    }
}

/// Lineage pointer back into the raw log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordRef {
    pub partition_id: PartitionId,
    pub record_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub partition_id: PartitionId,
    pub record_id: u64,
    pub ingestion_ts: u64,
    pub schema_version: u8,
    pub payload: Vec<u8>,
}

impl RawRecord {
    pub fn source(&self) -> RecordRef {
        RecordRef {
            partition_id: self.partition_id,
            record_id: self.record_id,
        }
    }
}

/// Consumed prefix per partition: the value is the next offset to read,
/// i.e. the count of records already consumed.
pub type Watermarks = BTreeMap<PartitionId, u64>;

/// Whether `next` only moves forward relative to `prev`.
pub fn watermarks_advance(prev: &Watermarks, next: &Watermarks) -> bool {
    prev.iter()
        .all(|(p, &off)| next.get(p).is_some_and(|&n| n >= off))
}

pub fn encoded_len(payload_len: usize) -> usize {
    FRAME_HEADER_LEN + payload_len + FRAME_TRAILER_LEN
}

pub fn encode_frame(record_id: u64, ingestion_ts: u64, schema_version: u8, payload: &[u8], out: &mut Vec<u8>) {
    let start = out.len();
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&record_id.to_le_bytes());
    out.extend_from_slice(&ingestion_ts.to_le_bytes());
    out.push(schema_version);
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    /// A whole, checksum-valid frame and its encoded length.
    Complete { record: DecodedFrame, len: usize },
    /// The buffer ends before the frame does.
    Torn,
    /// The frame is complete but its checksum does not match.
    Corrupt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedFrame {
    pub record_id: u64,
    pub ingestion_ts: u64,
    pub schema_version: u8,
    pub payload: Vec<u8>,
}

/// Decode the frame starting at `buf[0]`. An empty buffer is reported as
/// [`Frame::Torn`]; callers check for end-of-segment first.
pub fn decode_frame(buf: &[u8]) -> Frame {
    if buf.len() < FRAME_HEADER_LEN {
        return Frame::Torn;
    }
    let payload_len = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
    let total = encoded_len(payload_len);
    if buf.len() < total {
        return Frame::Torn;
    }
    let body_end = FRAME_HEADER_LEN + payload_len;
    let stored = u32::from_le_bytes(buf[body_end..total].try_into().unwrap());
    if crc32fast::hash(&buf[..body_end]) != stored {
        return Frame::Corrupt;
    }
    Frame::Complete {
        record: DecodedFrame {
            record_id: u64::from_le_bytes(buf[4..12].try_into().unwrap()),
            ingestion_ts: u64::from_le_bytes(buf[12..20].try_into().unwrap()),
            schema_version: buf[20],
            payload: buf[FRAME_HEADER_LEN..body_end].to_vec(),
        },
        len: total,
    }
}
