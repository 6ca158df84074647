//! Append-only, hour-partitioned raw log.
//!
//! Layout under the store root:
//!
//! ```text
//! <root>/<partition_id>/<segment_seq>.log   length-prefixed frames
//! <root>/<partition_id>/manifest.json       record_count, byte_length, checksum, segments
//! ```
//!
//! An append is acknowledged only after its frame is written (and synced,
//! when configured) and the manifest covering it has been atomically
//! replaced. Readers trust the manifest: they read exactly `byte_length`
//! bytes of each segment and verify the segment checksum, so they never see
//! a partially written record and never block the writer.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shopflow_core::raw::{decode_frame, encode_frame, encoded_len, Frame, PartitionId, RawRecord, Watermarks, SCHEMA_VERSION};

use crate::fsutil::write_atomic;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum RawStoreError {
    #[error("payload must be non-empty")]
    EmptyPayload,
    #[error("STORE_FULL: appending would exceed the {limit}-byte budget")]
    StoreFull { limit: u64 },
    #[error("CORRUPT_SEGMENT: partition {partition} segment {segment}: {detail}")]
    CorruptSegment {
        partition: PartitionId,
        segment: u32,
        detail: String,
    },
    #[error("range start {from} is after end {to}")]
    BadRange { from: PartitionId, to: PartitionId },
    #[error("manifest for partition {partition}: {source}")]
    Manifest {
        partition: PartitionId,
        source: serde_json::Error,
    },
    #[error("store was opened read-only")]
    ReadOnly,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct RawStoreConfig {
    pub root: PathBuf,
    /// A segment rolls over once it would exceed this size.
    pub max_segment_bytes: u64,
    /// Total on-disk budget across partitions; `None` is unbounded.
    pub max_total_bytes: Option<u64>,
    /// fsync segment and manifest before acknowledging.
    pub sync: bool,
}

impl RawStoreConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RawStoreConfig {
            root: root.into(),
            max_segment_bytes: 8 << 20,
            max_total_bytes: None,
            sync: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub seq: u32,
    pub first_record: u64,
    pub record_count: u64,
    pub byte_length: u64,
    /// Hex SHA-256 of the first `byte_length` bytes of the segment file.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub partition_id: PartitionId,
    pub record_count: u64,
    pub byte_length: u64,
    /// Hex SHA-256 over the concatenated segment bytes, i.e. the logical
    /// record stream. Compaction leaves it unchanged.
    pub checksum: String,
    pub last_ingestion_ts: u64,
    pub segments: Vec<SegmentMeta>,
}

impl PartitionManifest {
    fn empty(partition_id: PartitionId) -> Self {
        PartitionManifest {
            partition_id,
            record_count: 0,
            byte_length: 0,
            checksum: hex::encode(Sha256::new().finalize()),
            last_ingestion_ts: 0,
            segments: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CompactionStats {
    pub partitions_compacted: usize,
    pub segments_before: usize,
    pub segments_after: usize,
    pub records: u64,
}

/// Inclusive partition range; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PartitionRange {
    pub from: Option<PartitionId>,
    pub to: Option<PartitionId>,
}

impl PartitionRange {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn contains(&self, p: PartitionId) -> bool {
        self.from.is_none_or(|f| p >= f) && self.to.is_none_or(|t| p <= t)
    }
}

fn segment_path(dir: &Path, seq: u32) -> PathBuf {
    dir.join(format!("{seq:08}.log"))
}

struct PartitionWriter {
    dir: PathBuf,
    manifest: PartitionManifest,
    /// Running digest of the whole partition stream.
    stream_hash: Sha256,
    /// Running digest of the active (last) segment.
    segment_hash: Sha256,
    active: Option<File>,
}

fn read_manifest(dir: &Path, partition: PartitionId) -> Result<Option<PartitionManifest>, RawStoreError> {
    match fs::read(dir.join(MANIFEST)) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|source| RawStoreError::Manifest { partition, source }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

impl PartitionWriter {
    /// Open a partition, repairing the tail left by an interrupted append:
    /// complete frames past the manifest are adopted, a torn tail is cut.
    fn open(dir: PathBuf, partition: PartitionId, sync: bool) -> Result<Self, RawStoreError> {
        fs::create_dir_all(&dir)?;
        let mut manifest = read_manifest(&dir, partition)?.unwrap_or_else(|| PartitionManifest::empty(partition));
        let mut stream_hash = Sha256::new();
        let mut segment_hash = Sha256::new();
        let mut changed = false;

        let corrupt = |segment: u32, detail: &str| RawStoreError::CorruptSegment {
            partition,
            segment,
            detail: detail.to_string(),
        };

        let n = manifest.segments.len();
        for idx in 0..n {
            let meta = manifest.segments[idx].clone();
            let bytes = fs::read(segment_path(&dir, meta.seq))?;
            if (bytes.len() as u64) < meta.byte_length {
                return Err(corrupt(meta.seq, "file shorter than manifest"));
            }
            let covered = &bytes[..meta.byte_length as usize];
            if hex::encode(Sha256::digest(covered)) != meta.checksum {
                return Err(corrupt(meta.seq, "checksum mismatch"));
            }
            stream_hash.update(covered);
            if idx + 1 == n {
                segment_hash.update(covered);
                let tail = &bytes[meta.byte_length as usize..];
                let adopted = adopt_tail(tail, &mut manifest, idx, &mut stream_hash, &mut segment_hash);
                if adopted.changed {
                    changed = true;
                }
                if adopted.keep < tail.len() {
                    let f = OpenOptions::new().write(true).open(segment_path(&dir, meta.seq))?;
                    f.set_len(meta.byte_length + adopted.keep as u64)?;
                    f.sync_all()?;
                    changed = true;
                }
            }
        }

        // A segment file created by a roll-over whose manifest never landed.
        let next_seq = manifest.segments.last().map_or(0, |s| s.seq + 1);
        let orphan = segment_path(&dir, next_seq);
        if orphan.exists() {
            let bytes = fs::read(&orphan)?;
            manifest.segments.push(SegmentMeta {
                seq: next_seq,
                first_record: manifest.record_count,
                record_count: 0,
                byte_length: 0,
                checksum: hex::encode(Sha256::new().finalize()),
            });
            let idx = manifest.segments.len() - 1;
            let mut fresh = Sha256::new();
            let adopted = adopt_tail(&bytes, &mut manifest, idx, &mut stream_hash, &mut fresh);
            if adopted.keep == 0 {
                manifest.segments.pop();
                fs::remove_file(&orphan)?;
            } else {
                segment_hash = fresh;
                if adopted.keep < bytes.len() {
                    let f = OpenOptions::new().write(true).open(&orphan)?;
                    f.set_len(adopted.keep as u64)?;
                }
            }
            changed = true;
        }

        let mut w = PartitionWriter {
            dir,
            manifest,
            stream_hash,
            segment_hash,
            active: None,
        };
        if changed {
            w.persist_manifest(sync)?;
        }
        Ok(w)
    }

    fn persist_manifest(&mut self, sync: bool) -> Result<(), RawStoreError> {
        self.manifest.checksum = hex::encode(self.stream_hash.clone().finalize());
        if let Some(last) = self.manifest.segments.last_mut() {
            last.checksum = hex::encode(self.segment_hash.clone().finalize());
        }
        let bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.dir.join(MANIFEST), &bytes, sync)?;
        Ok(())
    }

    fn active_file(&mut self, max_segment_bytes: u64, incoming: u64) -> Result<&mut File, RawStoreError> {
        let needs_new = match self.manifest.segments.last() {
            None => true,
            Some(s) => s.byte_length > 0 && s.byte_length + incoming > max_segment_bytes,
        };
        if needs_new {
            // Seal the full segment with its final digest before starting the next.
            if let Some(prev) = self.manifest.segments.last_mut() {
                prev.checksum = hex::encode(std::mem::take(&mut self.segment_hash).finalize());
            }
            let seq = self.manifest.segments.last().map_or(0, |s| s.seq + 1);
            self.manifest.segments.push(SegmentMeta {
                seq,
                first_record: self.manifest.record_count,
                record_count: 0,
                byte_length: 0,
                checksum: String::new(),
            });
            self.segment_hash = Sha256::new();
            self.active = None;
        }
        if self.active.is_none() {
            let seq = self.manifest.segments.last().unwrap().seq;
            let mut f = OpenOptions::new().create(true).truncate(false).read(true).write(true).open(segment_path(&self.dir, seq))?;
            let len = self.manifest.segments.last().unwrap().byte_length;
            f.set_len(len)?;
            f.seek(SeekFrom::Start(len))?;
            self.active = Some(f);
        }
        Ok(self.active.as_mut().unwrap())
    }

    /// Append a group of payloads sharing one ingestion timestamp with a
    /// single sync and manifest write.
    fn append_all(&mut self, payloads: &[&[u8]], ingestion_ts: u64, cfg: &RawStoreConfig) -> Result<Vec<u64>, RawStoreError> {
        let ts = ingestion_ts.max(self.manifest.last_ingestion_ts);
        let mut ids = Vec::with_capacity(payloads.len());
        let mut buf = Vec::new();
        for payload in payloads {
            let id = self.manifest.record_count;
            buf.clear();
            encode_frame(id, ts, SCHEMA_VERSION, payload, &mut buf);
            let f = self.active_file(cfg.max_segment_bytes, buf.len() as u64)?;
            f.write_all(&buf)?;
            self.stream_hash.update(&buf);
            self.segment_hash.update(&buf);
            let seg = self.manifest.segments.last_mut().unwrap();
            seg.byte_length += buf.len() as u64;
            seg.record_count += 1;
            self.manifest.record_count += 1;
            self.manifest.byte_length += buf.len() as u64;
            self.manifest.last_ingestion_ts = ts;
            ids.push(id);
            // A roll-over inside the batch must not leave the previous segment unsynced.
            if cfg.sync && seg_is_full(self.manifest.segments.last().unwrap(), cfg.max_segment_bytes) {
                self.active.as_mut().unwrap().sync_data()?;
            }
        }
        if cfg.sync {
            if let Some(f) = self.active.as_mut() {
                f.sync_data()?;
            }
        }
        self.persist_manifest(cfg.sync)?;
        Ok(ids)
    }
}

fn seg_is_full(seg: &SegmentMeta, max: u64) -> bool {
    seg.byte_length >= max
}

struct Adopted {
    /// Bytes of the tail that hold whole, valid, in-sequence frames.
    keep: usize,
    changed: bool,
}

fn adopt_tail(tail: &[u8], manifest: &mut PartitionManifest, idx: usize, stream: &mut Sha256, segment: &mut Sha256) -> Adopted {
    let mut off = 0usize;
    let mut changed = false;
    while off < tail.len() {
        match decode_frame(&tail[off..]) {
            Frame::Complete { record, len } if record.record_id == manifest.record_count => {
                let bytes = &tail[off..off + len];
                stream.update(bytes);
                segment.update(bytes);
                let seg = &mut manifest.segments[idx];
                seg.byte_length += len as u64;
                seg.record_count += 1;
                manifest.record_count += 1;
                manifest.byte_length += len as u64;
                manifest.last_ingestion_ts = manifest.last_ingestion_ts.max(record.ingestion_ts);
                off += len;
                changed = true;
            }
            _ => break,
        }
    }
    Adopted { keep: off, changed }
}

/// The raw store. Cheap to share behind an `Arc`.
pub struct RawStore {
    cfg: RawStoreConfig,
    writers: Mutex<HashMap<PartitionId, Arc<Mutex<PartitionWriter>>>>,
    total_bytes: AtomicU64,
    writable: bool,
}

impl RawStore {
    /// Open (or create) a store, recovering every partition.
    pub fn open(cfg: RawStoreConfig) -> Result<Self, RawStoreError> {
        fs::create_dir_all(&cfg.root)?;
        let store = RawStore {
            cfg,
            writers: Mutex::new(HashMap::new()),
            total_bytes: AtomicU64::new(0),
            writable: true,
        };
        let mut total = 0;
        for p in store.partitions()? {
            let w = store.writer(p)?;
            total += w.lock().unwrap().manifest.byte_length;
        }
        store.total_bytes.store(total, Ordering::SeqCst);
        Ok(store)
    }

    /// Open for replay only. No recovery runs, so this is safe while
    /// another process owns the writers.
    pub fn reader(root: impl Into<PathBuf>) -> Self {
        RawStore {
            cfg: RawStoreConfig::new(root),
            writers: Mutex::new(HashMap::new()),
            total_bytes: AtomicU64::new(0),
            writable: false,
        }
    }

    pub fn root(&self) -> &Path {
        &self.cfg.root
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes.load(Ordering::SeqCst)
    }

    fn partition_dir(&self, p: PartitionId) -> PathBuf {
        self.cfg.root.join(p.to_string())
    }

    fn writer(&self, p: PartitionId) -> Result<Arc<Mutex<PartitionWriter>>, RawStoreError> {
        let mut map = self.writers.lock().unwrap();
        if let Some(w) = map.get(&p) {
            return Ok(w.clone());
        }
        let w = Arc::new(Mutex::new(PartitionWriter::open(self.partition_dir(p), p, self.cfg.sync)?));
        map.insert(p, w.clone());
        Ok(w)
    }

    fn reserve(&self, bytes: u64) -> Result<(), RawStoreError> {
        let Some(limit) = self.cfg.max_total_bytes else {
            self.total_bytes.fetch_add(bytes, Ordering::SeqCst);
            return Ok(());
        };
        self.total_bytes
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |cur| {
                (cur + bytes <= limit).then_some(cur + bytes)
            })
            .map(|_| ())
            .map_err(|_| RawStoreError::StoreFull { limit })
    }

    pub fn append(&self, payload: &[u8], ingestion_ts: u64) -> Result<(PartitionId, u64), RawStoreError> {
        let ids = self.append_batch(&[payload], ingestion_ts)?;
        Ok(ids[0])
    }

    /// Append several payloads received together. All land in the same
    /// partition, in order, with contiguous offsets.
    pub fn append_batch(&self, payloads: &[&[u8]], ingestion_ts: u64) -> Result<Vec<(PartitionId, u64)>, RawStoreError> {
        if !self.writable {
            return Err(RawStoreError::ReadOnly);
        }
        if payloads.is_empty() {
            return Ok(Vec::new());
        }
        if payloads.iter().any(|p| p.is_empty()) {
            return Err(RawStoreError::EmptyPayload);
        }
        let bytes: u64 = payloads.iter().map(|p| encoded_len(p.len()) as u64).sum();
        self.reserve(bytes)?;
        let p = PartitionId::for_ingestion(ingestion_ts);
        let result = self
            .writer(p)
            .and_then(|w| w.lock().unwrap().append_all(payloads, ingestion_ts, &self.cfg));
        match result {
            Ok(ids) => Ok(ids.into_iter().map(|id| (p, id)).collect()),
            Err(e) => {
                // The writer may hold a half-written tail; drop it so the next
                // append reopens and repairs the partition.
                self.writers.lock().unwrap().remove(&p);
                self.total_bytes.fetch_sub(bytes, Ordering::SeqCst);
                Err(e)
            }
        }
    }

    /// Partition ids present on disk, ascending.
    pub fn partitions(&self) -> Result<Vec<PartitionId>, RawStoreError> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(&self.cfg.root) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            if let Some(id) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) {
                out.push(PartitionId(id));
            }
        }
        out.sort();
        Ok(out)
    }

    /// Committed manifest of a partition as a reader sees it.
    pub fn manifest(&self, p: PartitionId) -> Result<Option<PartitionManifest>, RawStoreError> {
        read_manifest(&self.partition_dir(p), p)
    }

    /// Committed record count per partition.
    pub fn watermarks(&self) -> Result<Watermarks, RawStoreError> {
        let mut w = Watermarks::new();
        for p in self.partitions()? {
            if let Some(m) = self.manifest(p)? {
                w.insert(p, m.record_count);
            }
        }
        Ok(w)
    }

    pub fn record_count(&self) -> Result<u64, RawStoreError> {
        Ok(self.watermarks()?.values().sum())
    }

    /// Every committed record in `range`, ordered by `(partition, record)`.
    /// `from_record` skips offsets below it in the first partition of the
    /// range only, like a cursor position.
    pub fn replay(&self, range: PartitionRange, from_record: Option<u64>) -> Result<Vec<RawRecord>, RawStoreError> {
        if let (Some(f), Some(t)) = (range.from, range.to) {
            if f > t {
                return Err(RawStoreError::BadRange { from: f, to: t });
            }
        }
        let mut out = Vec::new();
        let mut first = true;
        for p in self.partitions()?.into_iter().filter(|p| range.contains(*p)) {
            let start = if first { from_record.unwrap_or(0) } else { 0 };
            first = false;
            self.read_partition(p, start, u64::MAX, &mut out)?;
        }
        Ok(out)
    }

    /// Records past the given per-partition offsets, plus everything in
    /// partitions the watermarks do not mention. Returns the new watermarks.
    pub fn replay_after(&self, consumed: &Watermarks) -> Result<(Vec<RawRecord>, Watermarks), RawStoreError> {
        let mut out = Vec::new();
        let mut next = consumed.clone();
        for p in self.partitions()? {
            let start = consumed.get(&p).copied().unwrap_or(0);
            let upto = self.read_partition(p, start, u64::MAX, &mut out)?;
            next.insert(p, upto.max(start));
        }
        Ok((out, next))
    }

    /// Replay a partition's records with `start <= record_id < end`.
    /// Returns the record count of the manifest that was read.
    fn read_partition(&self, p: PartitionId, start: u64, end: u64, out: &mut Vec<RawRecord>) -> Result<u64, RawStoreError> {
        let dir = self.partition_dir(p);
        // Compaction may delete segments named by a manifest we just read;
        // a second read sees the replacement manifest.
        let mut retried = false;
        loop {
            let Some(manifest) = read_manifest(&dir, p)? else {
                return Ok(0);
            };
            let mark = out.len();
            match read_segments(&dir, &manifest, start, end, out) {
                Ok(()) => return Ok(manifest.record_count),
                Err(RawStoreError::Io(e)) if e.kind() == io::ErrorKind::NotFound && !retried => {
                    out.truncate(mark);
                    retried = true;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Merge every multi-segment partition into one segment. Payload bytes
    /// are copied verbatim, so replay output is unchanged.
    pub fn compact_segments(&self) -> Result<CompactionStats, RawStoreError> {
        if !self.writable {
            return Err(RawStoreError::ReadOnly);
        }
        let mut stats = CompactionStats::default();
        for p in self.partitions()? {
            let w = self.writer(p)?;
            let mut w = w.lock().unwrap();
            let before = w.manifest.segments.len();
            stats.segments_before += before;
            stats.records += w.manifest.record_count;
            if before <= 1 {
                stats.segments_after += before;
                continue;
            }
            let mut merged = Vec::with_capacity(w.manifest.byte_length as usize);
            for seg in &w.manifest.segments {
                let mut f = File::open(segment_path(&w.dir, seg.seq))?;
                let mut buf = vec![0u8; seg.byte_length as usize];
                f.read_exact(&mut buf)?;
                if hex::encode(Sha256::digest(&buf)) != seg.checksum {
                    return Err(RawStoreError::CorruptSegment {
                        partition: p,
                        segment: seg.seq,
                        detail: "checksum mismatch during compaction".into(),
                    });
                }
                merged.extend_from_slice(&buf);
            }
            let seq = w.manifest.segments.last().unwrap().seq + 1;
            let new_path = segment_path(&w.dir, seq);
            write_atomic(&new_path, &merged, true)?;
            let old: Vec<u32> = w.manifest.segments.iter().map(|s| s.seq).collect();
            w.manifest.segments = vec![SegmentMeta {
                seq,
                first_record: 0,
                record_count: w.manifest.record_count,
                byte_length: merged.len() as u64,
                checksum: String::new(),
            }];
            w.segment_hash = Sha256::new();
            w.segment_hash.update(&merged);
            w.active = None;
            w.persist_manifest(true)?;
            for s in old {
                let _ = fs::remove_file(segment_path(&w.dir, s));
            }
            stats.partitions_compacted += 1;
            stats.segments_after += 1;
        }
        Ok(stats)
    }

    /// Segment count per partition, for diagnostics.
    pub fn segment_counts(&self) -> Result<BTreeMap<PartitionId, usize>, RawStoreError> {
        let mut out = BTreeMap::new();
        for p in self.partitions()? {
            if let Some(m) = self.manifest(p)? {
                out.insert(p, m.segments.len());
            }
        }
        Ok(out)
    }
}

fn read_segments(dir: &Path, manifest: &PartitionManifest, start: u64, end: u64, out: &mut Vec<RawRecord>) -> Result<(), RawStoreError> {
    let p = manifest.partition_id;
    for seg in &manifest.segments {
        if seg.first_record + seg.record_count <= start || seg.first_record >= end {
            continue;
        }
        let mut f = File::open(segment_path(dir, seg.seq))?;
        let mut buf = vec![0u8; seg.byte_length as usize];
        f.read_exact(&mut buf).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                RawStoreError::CorruptSegment {
                    partition: p,
                    segment: seg.seq,
                    detail: "segment shorter than manifest".into(),
                }
            } else {
                e.into()
            }
        })?;
        if hex::encode(Sha256::digest(&buf)) != seg.checksum {
            return Err(RawStoreError::CorruptSegment {
                partition: p,
                segment: seg.seq,
                detail: "checksum mismatch".into(),
            });
        }
        let mut off = 0;
        let mut expected = seg.first_record;
        while off < buf.len() {
            match decode_frame(&buf[off..]) {
                Frame::Complete { record, len } if record.record_id == expected => {
                    if record.record_id >= start && record.record_id < end {
                        out.push(RawRecord {
                            partition_id: p,
                            record_id: record.record_id,
                            ingestion_ts: record.ingestion_ts,
                            schema_version: record.schema_version,
                            payload: record.payload,
                        });
                    }
                    expected += 1;
                    off += len;
                }
                _ => {
                    return Err(RawStoreError::CorruptSegment {
                        partition: p,
                        segment: seg.seq,
                        detail: format!("bad frame at byte {off}"),
                    })
                }
            }
        }
        if expected != seg.first_record + seg.record_count {
            return Err(RawStoreError::CorruptSegment {
                partition: p,
                segment: seg.seq,
                detail: "record count disagrees with manifest".into(),
            });
        }
    }
    Ok(())
}
