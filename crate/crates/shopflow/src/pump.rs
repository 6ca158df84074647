//! Delivery of generated events to a collection endpoint.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;
use shopflow_core::datagen::Generated;

use crate::ingest::{BatchItem, BatchResponse};

#[derive(Debug, Clone)]
pub struct PumpConfig {
    /// Base URL of the ingest service; batches go to `<endpoint>/collect/batch`.
    pub endpoint: String,
    pub batch_size: usize,
    /// Target events per second; unlimited when `None`.
    pub rate: Option<f64>,
    pub timeout: Duration,
}

impl PumpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        PumpConfig {
            endpoint: endpoint.into(),
            batch_size: 500,
            rate: None,
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeliveryReport {
    pub sent: usize,
    pub acked: usize,
    pub failed: usize,
    pub batches: usize,
    /// Failure count per error code; transport failures count as `UNREACHABLE`.
    pub errors: BTreeMap<String, usize>,
    pub elapsed_ms: u64,
}

impl DeliveryReport {
    pub fn events_per_sec(&self) -> f64 {
        if self.elapsed_ms == 0 {
            return 0.0;
        }
        self.sent as f64 * 1000.0 / self.elapsed_ms as f64
    }
}

pub fn documents(events: &[Generated]) -> Vec<Vec<u8>> {
    events.iter().map(|g| g.event.to_document()).collect()
}

/// Send `docs` in order. With a rate, batches shrink to about 20 per second
/// and each batch waits until its share of the schedule has elapsed.
pub fn pump(docs: &[Vec<u8>], cfg: &PumpConfig) -> DeliveryReport {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let url = format!("{}/collect/batch", cfg.endpoint.trim_end_matches('/'));
    let batch = match cfg.rate {
        Some(r) => cfg.batch_size.min(((r / 20.0) as usize).max(1)),
        None => cfg.batch_size,
    }
    .max(1);
    let mut report = DeliveryReport::default();
    let start = Instant::now();
    for chunk in docs.chunks(batch) {
        let mut body = Vec::with_capacity(chunk.iter().map(|d| d.len() + 1).sum());
        for d in chunk {
            body.extend_from_slice(d);
            body.push(b'\n');
        }
        report.batches += 1;
        report.sent += chunk.len();
        let mut fail = |code: &str, n: usize| {
            report.failed += n;
            *report.errors.entry(code.to_string()).or_default() += n;
        };
        match agent.post(&url).header("content-type", "application/x-ndjson").send(&body[..]) {
            Ok(mut resp) => match resp.body_mut().read_json::<BatchResponse>() {
                Ok(r) if r.results.len() == chunk.len() => {
                    for item in r.results {
                        match item {
                            BatchItem::Ack(_) => report.acked += 1,
                            BatchItem::Error { error, .. } => fail(&error, 1),
                        }
                    }
                }
                _ => fail(&format!("HTTP_{}", resp.status().as_u16()), chunk.len()),
            },
            Err(_) => fail("UNREACHABLE", chunk.len()),
        }
        if let Some(r) = cfg.rate {
            let due = Duration::from_secs_f64(report.sent as f64 / r);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    }
    report.elapsed_ms = start.elapsed().as_millis() as u64;
    report
}
