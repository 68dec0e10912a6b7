//! On-disk persistence: content-addressed blobs plus a JSON-lines journal.
//!
//! Layout under the data directory:
//!
//! ```text
//! blobs/<sha256>          payload bytes, named by their SHA-256
//! journal/<n>.jsonl       one record per line: {op, entity, id, payload, actor, ts}
//! snapshot.json           compacted state covering journal segments 1..=n
//! ```
//!
//! Records have put semantics: replaying a record stores its payload as the
//! current value of (entity, id).

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_sha256_hex(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Writes through a temporary file so readers never see partial content.
fn write_atomic(path: &Path, bytes: &[u8], sync: bool) -> io::Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        if sync {
            f.sync_all()?;
        }
    }
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone)]
pub struct BlobStore {
    dir: PathBuf,
    sync: bool,
}

impl BlobStore {
    pub fn open(dir: PathBuf, sync: bool) -> io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(BlobStore { dir, sync })
    }

    pub fn put(&self, bytes: &[u8]) -> io::Result<String> {
        let sha = sha256_hex(bytes);
        let path = self.dir.join(&sha);
        if !path.exists() {
            write_atomic(&path, bytes, self.sync)?;
        }
        Ok(sha)
    }

    pub fn get(&self, sha: &str) -> io::Result<Vec<u8>> {
        if !is_sha256_hex(sha) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("invalid blob name '{sha}'")));
        }
        fs::read(self.dir.join(sha))
    }

    pub fn contains(&self, sha: &str) -> bool {
        is_sha256_hex(sha) && self.dir.join(sha).is_file()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub op: String,
    pub entity: String,
    pub id: u64,
    pub payload: Value,
    pub actor: Option<u64>,
    pub ts: DateTime<Utc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot {
    /// Journal segments 1..=segment are folded into `state`.
    pub segment: u64,
    pub state: Value,
}

pub struct Journal {
    dir: PathBuf,
    segment: u64,
    records_in_segment: usize,
    file: File,
    sync: bool,
}

fn segment_path(dir: &Path, n: u64) -> PathBuf {
    dir.join(format!("{n}.jsonl"))
}

/// Sorted list of existing segment numbers.
fn list_segments(dir: &Path) -> io::Result<Vec<u64>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(n) = name.strip_suffix(".jsonl").and_then(|s| s.parse::<u64>().ok()) {
            out.push(n);
        }
    }
    out.sort_unstable();
    Ok(out)
}

fn corrupt(reason: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, reason)
}

/// Reads every record of the segments after `after`. A torn final line of
/// the last segment (interrupted append) is dropped; damage elsewhere is an error.
pub fn read_records(journal_dir: &Path, after: u64) -> io::Result<Vec<JournalRecord>> {
    let segments: Vec<u64> = list_segments(journal_dir)?.into_iter().filter(|&n| n > after).collect();
    let mut records = Vec::new();
    for (si, &n) in segments.iter().enumerate() {
        let path = segment_path(journal_dir, n);
        let lines: Vec<String> = BufReader::new(File::open(&path)?).lines().collect::<io::Result<_>>()?;
        let last_segment = si + 1 == segments.len();
        for (li, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<JournalRecord>(line) {
                Ok(r) => records.push(r),
                Err(_) if last_segment && li + 1 == lines.len() => {}
                Err(e) => return Err(corrupt(format!("{}:{}: {e}", path.display(), li + 1))),
            }
        }
    }
    Ok(records)
}

pub fn read_snapshot(path: &Path) -> io::Result<Option<Snapshot>> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| corrupt(format!("snapshot: {e}"))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot, sync: bool) -> io::Result<()> {
    let bytes = serde_json::to_vec(snapshot).map_err(|e| corrupt(e.to_string()))?;
    write_atomic(path, &bytes, sync)
}

impl Journal {
    /// Opens the newest segment for appending, creating segment `min_segment` if none is newer.
    pub fn open(dir: PathBuf, min_segment: u64, sync: bool) -> io::Result<Self> {
        fs::create_dir_all(&dir)?;
        let latest = list_segments(&dir)?.last().copied().unwrap_or(0).max(min_segment).max(1);
        let path = segment_path(&dir, latest);
        // drop a torn final line left by an interrupted append
        if let Ok(content) = fs::read(&path) {
            if !content.is_empty() && content.last() != Some(&b'\n') {
                let keep = content.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                OpenOptions::new().write(true).open(&path)?.set_len(keep as u64)?;
            }
        }
        let records_in_segment = match File::open(&path) {
            Ok(f) => BufReader::new(f).lines().count(),
            Err(_) => 0,
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Journal { dir, segment: latest, records_in_segment, file, sync })
    }

    pub fn segment(&self) -> u64 {
        self.segment
    }

    pub fn records_in_segment(&self) -> usize {
        self.records_in_segment
    }

    pub fn append(&mut self, record: &JournalRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(|e| corrupt(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.records_in_segment += 1;
        Ok(())
    }

    /// Starts a new segment; the previous ones stay on disk for auditing.
    pub fn rotate(&mut self) -> io::Result<()> {
        let next = self.segment + 1;
        self.file = OpenOptions::new().create(true).append(true).open(segment_path(&self.dir, next))?;
        self.segment = next;
        self.records_in_segment = 0;
        Ok(())
    }
}
