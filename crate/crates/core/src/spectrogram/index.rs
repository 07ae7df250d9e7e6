//! `index.jsonl`: one JSON object per spectrogram file in a dataset directory.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Label;

pub const INDEX_FILE: &str = "index.jsonl";
const INDEX_TMP: &str = ".index.jsonl.tmp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    /// File name relative to the dataset directory.
    pub path: String,
    pub id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("missing {0}")]
    Missing(String),
    #[error("{file}:{line}: {source}")]
    Corrupt {
        file: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate id {0:?} in index")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn read_index(dir: impl AsRef<Path>) -> Result<Vec<IndexEntry>, IndexError> {
    let path = dir.as_ref().join(INDEX_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(IndexError::Missing(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: IndexEntry = serde_json::from_str(line).map_err(|source| IndexError::Corrupt {
            file: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        if !seen.insert(entry.id.clone()) {
            return Err(IndexError::DuplicateId(entry.id));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn encode_index(entries: &[IndexEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).expect("index entries serialize");
        out.push(b'\n');
    }
    out
}

/// Points at which an index write can be interrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteStage {
    /// Half of the new content is in the temp file.
    TempPartial,
    /// Temp file complete and synced, not yet renamed.
    TempComplete,
    /// Rename done.
    Renamed,
}

/// Replaces the index atomically (temp file, fsync, rename).
pub fn write_index(dir: impl AsRef<Path>, entries: &[IndexEntry]) -> Result<(), IndexError> {
    write_index_with(dir, entries, |_| Ok(()))
}

/// [`write_index`] with a hook called at each [`WriteStage`]. A hook error
/// aborts the write on the spot without cleanup, like a crash would.
pub fn write_index_with<F>(dir: impl AsRef<Path>, entries: &[IndexEntry], mut hook: F) -> Result<(), IndexError>
where
    F: FnMut(WriteStage) -> io::Result<()>,
{
    let dir = dir.as_ref();
    let bytes = encode_index(entries);
    let tmp = dir.join(INDEX_TMP);
    let mut f = File::create(&tmp)?;
    let half = bytes.len() / 2;
    f.write_all(&bytes[..half])?;
    f.flush()?;
    hook(WriteStage::TempPartial)?;
    f.write_all(&bytes[half..])?;
    f.sync_all()?;
    drop(f);
    hook(WriteStage::TempComplete)?;
    fs::rename(&tmp, dir.join(INDEX_FILE))?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    hook(WriteStage::Renamed)?;
    Ok(())
}
