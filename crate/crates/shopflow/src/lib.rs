//! Services, stores and file formats around `shopflow-core`.

pub mod fsutil;
pub mod rawstore;
pub mod tables;
pub mod quality;
pub mod artifacts;
pub mod training;
pub mod server;
pub mod serving;
pub mod ingest;
pub mod orchestrator;
pub mod pipeline;
pub mod config;
pub mod stack;
pub mod pump;
