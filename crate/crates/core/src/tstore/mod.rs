//! Embedded append-only time-series store.
//!
//! On-disk layout of a store directory:
//!
//! ```text
//! MANIFEST            "COOLGUARD-TSTORE 1\n" then one "<file id>\t<series key>\n" per series
//! series-000001.log   b"CGTS0001" then 20-byte records:
//!                       i64 LE timestamp (ns) | f64 LE value | u32 LE crc32 of the first 16 bytes
//! ```
//!
//! Points are kept in memory and rebuilt from the logs on open. A torn or
//! corrupt tail record is truncated away, so a reopened store holds a prefix
//! of the acknowledged writes.

use crate::model::RackId;
use parking_lot::{Mutex, RwLock};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

const MANIFEST: &str = "MANIFEST";
const MANIFEST_HEADER: &str = "COOLGUARD-TSTORE 1";
const LOG_MAGIC: &[u8; 8] = b"CGTS0001";
const RECORD_LEN: usize = 20;

pub const RACK_TAG: &str = "rack_id";

/// Series name plus sorted tags, rendered as `name,key=value,...`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SeriesKey {
    pub name: String,
    pub tags: BTreeMap<String, String>,
}

impl SeriesKey {
    pub fn new(name: impl Into<String>) -> Self {
        SeriesKey {
            name: name.into(),
            tags: BTreeMap::new(),
        }
    }

    pub fn for_rack(name: impl Into<String>, rack: &RackId) -> Self {
        SeriesKey::new(name).with_tag(RACK_TAG, rack.as_str())
    }

    pub fn with_tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.insert(key.into(), value.into());
        self
    }

    pub fn rack(&self) -> Option<RackId> {
        self.tags.get(RACK_TAG).map(RackId::new)
    }

    fn valid_part(s: &str) -> bool {
        !s.is_empty() && !s.contains([',', '=', '\t', '\n'])
    }

    fn validate(&self) -> Result<(), StoreError> {
        let ok = Self::valid_part(&self.name)
            && self
                .tags
                .iter()
                .all(|(k, v)| Self::valid_part(k) && Self::valid_part(v));
        if ok {
            Ok(())
        } else {
            Err(StoreError::BadKey(self.to_string()))
        }
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for (k, v) in &self.tags {
            write!(f, ",{k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for SeriesKey {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(',');
        let mut key = SeriesKey::new(parts.next().unwrap_or_default());
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| StoreError::BadKey(s.to_string()))?;
            key.tags.insert(k.to_string(), v.to_string());
        }
        key.validate()?;
        Ok(key)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage error: {0}")]
    Io(#[from] io::Error),
    #[error("invalid series key {0:?}")]
    BadKey(String),
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("query range start {t0} is after end {t1}")]
    InvalidRange { t0: i64, t1: i64 },
    #[error("aggregation bucket must be positive, got {0}")]
    BadBucket(i64),
}

/// A point refused by [`Store::write_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// Position in the submitted batch.
    pub index: usize,
    pub series: SeriesKey,
    pub timestamp: i64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RejectReason {
    /// Not after the series tail.
    OutOfOrder { tail: i64 },
    NonFinite,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.reason {
            RejectReason::OutOfOrder { tail } => write!(
                f,
                "{}: timestamp {} not after series tail {tail}",
                self.series, self.timestamp
            ),
            RejectReason::NonFinite => {
                write!(f, "{}: non-finite value at {}", self.series, self.timestamp)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WriteReport {
    pub written: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFn {
    Mean,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Aggregation {
    pub func: AggFn,
    pub bucket_ns: i64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryResult {
    /// `(timestamp, value)`; for aggregations the timestamp is the bucket start.
    pub points: Vec<(i64, f64)>,
    /// False when the series has never been written.
    pub series_found: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreOptions {
    /// fsync each touched log before `write_batch` returns.
    pub sync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { sync: true }
    }
}

struct SeriesData {
    points: RwLock<Vec<(i64, f64)>>,
    file: Mutex<File>,
}

pub struct Store {
    dir: PathBuf,
    options: StoreOptions,
    series: RwLock<HashMap<SeriesKey, Arc<SeriesData>>>,
    /// Serializes writers; readers only take the per-series read locks.
    writer: Mutex<ManifestWriter>,
}

struct ManifestWriter {
    file: File,
    next_id: u64,
}

fn log_name(id: u64) -> String {
    format!("series-{id:06}.log")
}

fn encode(ts: i64, value: f64, out: &mut Vec<u8>) {
    let start = out.len();
    out.extend_from_slice(&ts.to_le_bytes());
    out.extend_from_slice(&value.to_le_bytes());
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

/// Decodes valid records and returns the byte length of the valid prefix.
fn decode(bytes: &[u8]) -> (Vec<(i64, f64)>, usize) {
    let mut points = Vec::with_capacity(bytes.len() / RECORD_LEN);
    let mut valid = 0;
    for rec in bytes.chunks_exact(RECORD_LEN) {
        let crc = u32::from_le_bytes(rec[16..20].try_into().unwrap());
        if crc32fast::hash(&rec[..16]) != crc {
            break;
        }
        let ts = i64::from_le_bytes(rec[..8].try_into().unwrap());
        let value = f64::from_le_bytes(rec[8..16].try_into().unwrap());
        if points.last().is_some_and(|&(prev, _)| ts <= prev) {
            break;
        }
        points.push((ts, value));
        valid += RECORD_LEN;
    }
    (points, valid)
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Store, StoreError> {
        Store::open_with(dir, StoreOptions::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Store, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let manifest_path = dir.join(MANIFEST);
        if !manifest_path.exists() {
            let mut f = File::create(&manifest_path)?;
            writeln!(f, "{MANIFEST_HEADER}")?;
            f.sync_all()?;
        }
        let mut series = HashMap::new();
        let mut next_id = 1;
        let reader = BufReader::new(File::open(&manifest_path)?);
        let corrupt = |reason: String| StoreError::Corrupt {
            path: manifest_path.clone(),
            reason,
        };
        let mut lines = reader.lines();
        match lines.next().transpose()? {
            Some(h) if h == MANIFEST_HEADER => {}
            other => return Err(corrupt(format!("bad header {other:?}"))),
        }
        for line in lines {
            let line = line?;
            // a torn final manifest line has no tab or an unparsable key
            let Some((id, key)) = line.split_once('\t') else {
                break;
            };
            let (Ok(id), Ok(key)) = (id.parse::<u64>(), key.parse::<SeriesKey>()) else {
                break;
            };
            next_id = next_id.max(id + 1);
            series.insert(key, Arc::new(Store::load_log(&dir.join(log_name(id)))?));
        }
        let file = OpenOptions::new().append(true).open(&manifest_path)?;
        Ok(Store {
            dir,
            options,
            series: RwLock::new(series),
            writer: Mutex::new(ManifestWriter { file, next_id }),
        })
    }

    fn load_log(path: &Path) -> Result<SeriesData, StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let points = if bytes.len() < LOG_MAGIC.len() {
            // crashed before the header was durable
            file.set_len(0)?;
            file.write_all(LOG_MAGIC)?;
            Vec::new()
        } else {
            if &bytes[..LOG_MAGIC.len()] != LOG_MAGIC {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    reason: "bad magic".into(),
                });
            }
            let (points, valid) = decode(&bytes[LOG_MAGIC.len()..]);
            let keep = (LOG_MAGIC.len() + valid) as u64;
            if keep < bytes.len() as u64 {
                log::warn!(
                    "{}: truncating {} trailing bytes",
                    path.display(),
                    bytes.len() as u64 - keep
                );
                file.set_len(keep)?;
            }
            points
        };
        file.seek(SeekFrom::End(0))?;
        Ok(SeriesData {
            points: RwLock::new(points),
            file: Mutex::new(file),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn create_series(
        &self,
        writer: &mut ManifestWriter,
        key: &SeriesKey,
    ) -> Result<Arc<SeriesData>, StoreError> {
        key.validate()?;
        let id = writer.next_id;
        let path = self.dir.join(log_name(id));
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(true)
            .write(true)
            .read(true)
            .open(&path)?;
        file.write_all(LOG_MAGIC)?;
        if self.options.sync {
            file.sync_all()?;
        }
        writeln!(writer.file, "{id}\t{key}")?;
        if self.options.sync {
            writer.file.sync_all()?;
        }
        writer.next_id += 1;
        let data = Arc::new(SeriesData {
            points: RwLock::new(Vec::new()),
            file: Mutex::new(file),
        });
        self.series.write().insert(key.clone(), data.clone());
        Ok(data)
    }

    /// Appends points, rejecting individually any that are not strictly after
    /// their series tail. Accepted points are durable and visible on return.
    pub fn write_batch(&self, points: &[(SeriesKey, i64, f64)]) -> Result<WriteReport, StoreError> {
        let mut writer = self.writer.lock();
        let mut report = WriteReport::default();
        let mut pending: Vec<(Arc<SeriesData>, Vec<u8>, Vec<(i64, f64)>)> = Vec::new();
        let mut slot: HashMap<&SeriesKey, usize> = HashMap::new();

        for (index, (key, ts, value)) in points.iter().enumerate() {
            let i = match slot.get(key) {
                Some(&i) => i,
                None => {
                    let existing = self.series.read().get(key).cloned();
                    let data = match existing {
                        Some(d) => d,
                        None => self.create_series(&mut writer, key)?,
                    };
                    pending.push((data, Vec::new(), Vec::new()));
                    slot.insert(key, pending.len() - 1);
                    pending.len() - 1
                }
            };
            let (data, bytes, accepted) = &mut pending[i];
            let tail = accepted
                .last()
                .map(|p| p.0)
                .or_else(|| data.points.read().last().map(|p| p.0));
            let reject = |reason| Rejection {
                index,
                series: key.clone(),
                timestamp: *ts,
                reason,
            };
            if !value.is_finite() {
                report.rejected.push(reject(RejectReason::NonFinite));
                continue;
            }
            if let Some(tail) = tail.filter(|&t| *ts <= t) {
                report.rejected.push(reject(RejectReason::OutOfOrder { tail }));
                continue;
            }
            encode(*ts, *value, bytes);
            accepted.push((*ts, *value));
        }

        for (data, bytes, accepted) in pending {
            if accepted.is_empty() {
                continue;
            }
            let mut file = data.file.lock();
            let before = file.seek(SeekFrom::End(0))?;
            let res = file
                .write_all(&bytes)
                .and_then(|_| if self.options.sync { file.sync_data() } else { Ok(()) });
            if let Err(e) = res {
                // keep the log a clean prefix so the store stays readable
                let _ = file.set_len(before);
                let _ = file.seek(SeekFrom::End(0));
                return Err(StoreError::Io(e));
            }
            report.written += accepted.len();
            data.points.write().extend(accepted);
        }
        Ok(report)
    }

    pub fn write(&self, key: &SeriesKey, timestamp: i64, value: f64) -> Result<WriteReport, StoreError> {
        self.write_batch(&[(key.clone(), timestamp, value)])
    }

    /// Points with `t0 <= t < t1`, optionally reduced into buckets of
    /// `bucket_ns` starting at `t0`. Empty buckets are omitted.
    pub fn query_range(
        &self,
        key: &SeriesKey,
        t0: i64,
        t1: i64,
        agg: Option<Aggregation>,
    ) -> Result<QueryResult, StoreError> {
        if t0 > t1 {
            return Err(StoreError::InvalidRange { t0, t1 });
        }
        if let Some(a) = agg {
            if a.bucket_ns <= 0 {
                return Err(StoreError::BadBucket(a.bucket_ns));
            }
        }
        let Some(data) = self.series.read().get(key).cloned() else {
            return Ok(QueryResult::default());
        };
        let points = data.points.read();
        let lo = points.partition_point(|p| p.0 < t0);
        let hi = points.partition_point(|p| p.0 < t1);
        let slice = &points[lo..hi.max(lo)];
        let points = match agg {
            None => slice.to_vec(),
            Some(a) => aggregate(slice, t0, a),
        };
        Ok(QueryResult {
            points,
            series_found: true,
        })
    }

    pub fn latest(&self, key: &SeriesKey) -> Option<(i64, f64)> {
        let data = self.series.read().get(key).cloned()?;
        let last = data.points.read().last().copied();
        last
    }

    pub fn len(&self, key: &SeriesKey) -> usize {
        self.series
            .read()
            .get(key)
            .map_or(0, |d| d.points.read().len())
    }

    pub fn series(&self) -> Vec<SeriesKey> {
        let mut keys: Vec<SeriesKey> = self.series.read().keys().cloned().collect();
        keys.sort();
        keys
    }
}

fn aggregate(points: &[(i64, f64)], t0: i64, agg: Aggregation) -> Vec<(i64, f64)> {
    let mut out = Vec::new();
    let mut iter = points.iter().peekable();
    while let Some(&&(ts, first)) = iter.peek() {
        let bucket = t0 + (ts - t0) / agg.bucket_ns * agg.bucket_ns;
        let end = bucket + agg.bucket_ns;
        let (mut sum, mut n, mut min, mut max) = (0.0, 0usize, first, first);
        while let Some(&&(t, v)) = iter.peek() {
            if t >= end {
                break;
            }
            sum += v;
            n += 1;
            min = min.min(v);
            max = max.max(v);
            iter.next();
        }
        let value = match agg.func {
            AggFn::Mean => sum / n as f64,
            AggFn::Min => min,
            AggFn::Max => max,
        };
        out.push((bucket, value));
    }
    out
}
