//! Transformation operators and DAG planning.
//!
//! The operator set is closed: [`OpSpec::Explode`], [`OpSpec::Sessionize`],
//! [`OpSpec::Filter`] and [`OpSpec::Aggregate`]. Execution of a non-raw node
//! is a pure function of its input table, see [`apply`].

pub mod dag;
pub mod explode;
pub mod ops;
pub mod sessionize;

pub use dag::{DagError, OpSpec, TransformDag, TransformNode, RAW};
pub use explode::{explode, Exploded, InteractionRow, RejectReason, RejectRow};
pub use sessionize::{sessionize, SessionSequence, DEFAULT_GAP_MS};

use alloc::vec::Vec;

use crate::table::Table;

/// Evaluate a table-to-table operator. Explode is excluded: it reads raw
/// records and has two outputs. Interaction rows that fail to decode are
/// ignored by sessionize.
pub fn apply(op: &OpSpec, input: &Table) -> Option<Table> {
    match op {
        OpSpec::Explode { .. } => None,
        OpSpec::Sessionize { gap_ms } => {
            let rows: Vec<InteractionRow> = input.rows.iter().filter_map(InteractionRow::from_row).collect();
            Some(sessionize::sessions_table(&sessionize(&rows, *gap_ms)))
        }
        OpSpec::Filter { predicate } => Some(ops::filter(input, predicate)),
        OpSpec::Aggregate { group_by, counters } => Some(ops::aggregate(input, group_by, counters)),
    }
}
