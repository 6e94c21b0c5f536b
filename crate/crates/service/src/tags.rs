//! Human feasibility tags, persisted as an append-only JSON-lines file.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagLabel {
    Feasible,
    Infeasible,
    Interesting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagRecord {
    pub model: String,
    pub z: [f32; 2],
    pub label: TagLabel,
    /// RFC 3339.
    pub timestamp: String,
    #[serde(default)]
    pub note: String,
}

impl TagRecord {
    fn key(&self) -> (&str, [u32; 2]) {
        // +0 and -0 name the same point.
        let bits = |v: f32| if v == 0.0 { 0 } else { v.to_bits() };
        (&self.model, [bits(self.z[0]), bits(self.z[1])])
    }
}

/// One record per `(model, z)`; a later record replaces an earlier one in place.
fn upsert(records: &mut Vec<TagRecord>, record: TagRecord) {
    match records.iter_mut().find(|r| r.key() == record.key()) {
        Some(slot) => *slot = record,
        None => records.push(record),
    }
}

/// Writes go through one lock that owns the file; readers take the current
/// snapshot without waiting on writers.
#[derive(Debug)]
pub struct TagStore {
    path: PathBuf,
    writer: Mutex<File>,
    snapshot: RwLock<Arc<Vec<TagRecord>>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |e| ServiceError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn parse(path: &Path) -> Result<Vec<TagRecord>, ServiceError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(io_err(path))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut records = Vec::new();
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TagRecord>(line) {
            Ok(r) => upsert(&mut records, r),
            // A crash mid-append leaves at most a torn final line.
            Err(e) if Some(n) == last => {
                log::warn!("{}: dropping torn final record: {e}", path.display())
            }
            Err(e) => {
                return Err(ServiceError::TagStore(format!(
                    "{} line {}: {e}",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    Ok(records)
}

fn encode(records: &[TagRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("tag serializes") + "\n")
        .collect()
}

impl TagStore {
    /// Loads and compacts the log, replacing it atomically with one line per tag.
    pub fn open(path: &Path) -> Result<TagStore, ServiceError> {
        let records = parse(path)?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let tmp = path.with_extension(format!("compact-{}", std::process::id()));
        fs::write(&tmp, encode(&records)).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(TagStore {
            path: path.to_path_buf(),
            writer: Mutex::new(file),
            snapshot: RwLock::new(Arc::new(records)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends `record` and publishes it. Nothing is published unless the
    /// line reached the disk, so a failed call can simply be retried.
    pub fn put(&self, record: TagRecord) -> Result<TagRecord, ServiceError> {
        let mut file = self.writer.lock().expect("tag writer poisoned");
        let line = encode(std::slice::from_ref(&record));
        file.write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(io_err(&self.path))?;
        let mut next = self.list(None);
        upsert(&mut next, record.clone());
        *self.snapshot.write().expect("tag snapshot poisoned") = Arc::new(next);
        Ok(record)
    }

    /// Tags in first-tagged order, optionally for one model.
    pub fn list(&self, model: Option<&str>) -> Vec<TagRecord> {
        let snap = Arc::clone(&self.snapshot.read().expect("tag snapshot poisoned"));
        snap.iter()
            .filter(|r| model.is_none_or(|m| r.model == m))
            .cloned()
            .collect()
    }
}
