//! File-backed label store: `index.jsonl` holds the current labels, each
//! WPSG file mirrors its label byte and `labels.jsonl` keeps the history.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectrogram::{
    load_spectrogram, read_index, rewrite_label, write_index_with, FormatError, IndexEntry, IndexError, Label,
    Spectrogram, WriteStage,
};

pub const HISTORY_FILE: &str = "labels.jsonl";

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown spectrogram id {0:?}")]
    UnknownId(String),
    #[error("label must be \"drumming\" or \"other\", got {0:?}")]
    BadLabel(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("{path}: {source}")]
    Spectrogram { path: PathBuf, source: FormatError },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One line of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub spectrogram_id: String,
    pub label: Label,
    pub annotated_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingItem {
    pub id: String,
    pub source: String,
    pub captured_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub labeled: usize,
    pub drumming: usize,
    pub other: usize,
    pub unlabeled: usize,
}

/// Points inside [`Store::apply_label_with`] where a fault can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyStage {
    Index(WriteStage),
    LabelByte,
    History,
}

/// Parses a label accepted from annotators.
pub fn parse_annotation_label(s: &str) -> Result<Label, AnnotationError> {
    match s {
        "drumming" => Ok(Label::Drumming),
        "other" => Ok(Label::Other),
        _ => Err(AnnotationError::BadLabel(s.to_string())),
    }
}

#[derive(Debug, Clone)]
struct Item {
    entry: IndexEntry,
    source: String,
    captured_at: String,
    order: (Option<DateTime<FixedOffset>>, String),
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    items: Vec<Item>,
    by_id: HashMap<String, usize>,
}

impl Store {
    /// Loads the index and every referenced file. A WPSG label byte that
    /// disagrees with the index is rewritten to match it.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, AnnotationError> {
        let dir = dir.as_ref().to_path_buf();
        let entries = read_index(&dir)?;
        let mut items = Vec::with_capacity(entries.len());
        let mut by_id = HashMap::with_capacity(entries.len());
        for entry in entries {
            let path = dir.join(&entry.path);
            let s = load_spectrogram(&path).map_err(|source| AnnotationError::Spectrogram {
                path: path.clone(),
                source,
            })?;
            if s.meta.label != entry.label {
                log::warn!(
                    "{}: label byte {} disagrees with index {}, rewriting",
                    path.display(),
                    s.meta.label,
                    entry.label
                );
                rewrite_label(&path, entry.label)
                    .map_err(|source| AnnotationError::Spectrogram { path: path.clone(), source })?;
            }
            let parsed = DateTime::parse_from_rfc3339(&s.meta.captured_at).ok();
            by_id.insert(entry.id.clone(), items.len());
            items.push(Item {
                entry,
                order: (parsed, s.meta.captured_at.clone()),
                source: s.meta.source,
                captured_at: s.meta.captured_at,
            });
        }
        Ok(Self { dir, items, by_id })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn label_of(&self, id: &str) -> Option<Label> {
        self.by_id.get(id).map(|&i| self.items[i].entry.label)
    }

    fn index_of(&self, id: &str) -> Result<usize, AnnotationError> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| AnnotationError::UnknownId(id.to_string()))
    }

    /// All unlabeled ids, oldest capture first (ties broken by id).
    pub fn pending_all(&self) -> Vec<PendingItem> {
        let mut v: Vec<&Item> = self
            .items
            .iter()
            .filter(|it| it.entry.label == Label::Unlabeled)
            .collect();
        v.sort_by(|a, b| a.order.cmp(&b.order).then_with(|| a.entry.id.cmp(&b.entry.id)));
        v.into_iter()
            .map(|it| PendingItem {
                id: it.entry.id.clone(),
                source: it.source.clone(),
                captured_at: it.captured_at.clone(),
            })
            .collect()
    }

    /// First `limit` pending items and the total pending count.
    pub fn pending(&self, limit: Option<usize>) -> (Vec<PendingItem>, usize) {
        let mut all = self.pending_all();
        let total = all.len();
        if let Some(n) = limit {
            all.truncate(n);
        }
        (all, total)
    }

    pub fn stats(&self) -> Stats {
        let mut s = Stats {
            total: self.items.len(),
            ..Stats::default()
        };
        for it in &self.items {
            match it.entry.label {
                Label::Drumming => s.drumming += 1,
                Label::Other => s.other += 1,
                Label::Unlabeled => s.unlabeled += 1,
            }
        }
        s.labeled = s.drumming + s.other;
        s
    }

    pub fn spectrogram_path(&self, id: &str) -> Result<PathBuf, AnnotationError> {
        let i = self.index_of(id)?;
        Ok(self.dir.join(&self.items[i].entry.path))
    }

    pub fn load(&self, id: &str) -> Result<Spectrogram, AnnotationError> {
        let path = self.spectrogram_path(id)?;
        load_spectrogram(&path).map_err(|source| AnnotationError::Spectrogram { path, source })
    }

    pub fn history(&self) -> Result<Vec<AnnotationRecord>, AnnotationError> {
        read_history(&self.dir)
    }

    /// Labels one spectrogram; returns the number still pending.
    pub fn apply_label(&mut self, id: &str, label: Label, annotator: Option<&str>) -> Result<usize, AnnotationError> {
        self.apply_label_with(id, label, annotator, |_| Ok(()))
    }

    /// [`Store::apply_label`] with a fault hook. On any failure the index
    /// and label byte are restored before the error is returned.
    pub fn apply_label_with<F>(
        &mut self,
        id: &str,
        label: Label,
        annotator: Option<&str>,
        mut hook: F,
    ) -> Result<usize, AnnotationError>
    where
        F: FnMut(ApplyStage) -> io::Result<()>,
    {
        if !label.is_labeled() {
            return Err(AnnotationError::BadLabel(label.as_str().to_string()));
        }
        let i = self.index_of(id)?;
        let old_entries: Vec<IndexEntry> = self.items.iter().map(|it| it.entry.clone()).collect();
        let old_label = old_entries[i].label;
        let mut new_entries = old_entries.clone();
        new_entries[i].label = label;
        let path = self.dir.join(&new_entries[i].path);

        write_index_with(&self.dir, &new_entries, |st| hook(ApplyStage::Index(st)))
            .map_err(|e| self.rollback(&old_entries, None, e.into()))?;

        let byte = hook(ApplyStage::LabelByte)
            .map_err(AnnotationError::from)
            .and_then(|()| {
                rewrite_label(&path, label).map_err(|source| AnnotationError::Spectrogram {
                    path: path.clone(),
                    source,
                })
            });
        if let Err(e) = byte {
            return Err(self.rollback(&old_entries, Some((&path, old_label)), e));
        }

        let record = AnnotationRecord {
            spectrogram_id: id.to_string(),
            label,
            annotated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            annotator: annotator.map(str::to_string),
        };
        let appended = hook(ApplyStage::History)
            .and_then(|()| append_history(&self.dir, &record))
            .map_err(AnnotationError::from);
        if let Err(e) = appended {
            return Err(self.rollback(&old_entries, Some((&path, old_label)), e));
        }

        self.items[i].entry.label = label;
        Ok(self.stats().unlabeled)
    }

    fn rollback(&self, old: &[IndexEntry], byte: Option<(&Path, Label)>, err: AnnotationError) -> AnnotationError {
        if let Some((path, label)) = byte {
            if let Err(e) = rewrite_label(path, label) {
                log::error!("rollback of {} label byte failed: {e}", path.display());
            }
        }
        if let Err(e) = crate::spectrogram::write_index(&self.dir, old) {
            log::error!("rollback of {} failed: {e}", self.dir.display());
        }
        err
    }
}

fn append_history(dir: &Path, record: &AnnotationRecord) -> io::Result<()> {
    let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join(HISTORY_FILE))?;
    f.write_all(line.as_bytes())?;
    f.sync_data()
}

/// Reads `labels.jsonl`; a missing file is an empty history.
pub fn read_history(dir: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let text = match fs::read_to_string(dir.as_ref().join(HISTORY_FILE)) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| AnnotationError::Io(io::Error::other(e))))
        .collect()
}
