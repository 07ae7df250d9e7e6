//! WPSG spectrogram files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size  | field                               |
//! |--------|-------|-------------------------------------|
//! | 0      | 4     | magic `WPSG`                        |
//! | 4      | 2     | version (1)                         |
//! | 6      | 2     | rows (600)                          |
//! | 8      | 2     | cols (7)                            |
//! | 10     | 1     | label (0 unlabeled, 1 drumming, 2 other) |
//! | 11     | 1     | reserved                            |
//! | 12     | 16800 | 600×7 `f32`, row-major              |
//! | 16812  | 4     | metadata length `n`                 |
//! | 16816  | n     | UTF-8 JSON `{id, source, captured_at, species_hint}` |

use std::fs::{self, OpenOptions};
use std::io::{self, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BandMatrix, Label, Spectrogram, SpectrogramMeta, CELLS};

pub const MAGIC: &[u8; 4] = b"WPSG";
pub const VERSION: u16 = 1;
pub const LABEL_OFFSET: u64 = 10;
pub const HEADER_LEN: usize = 12;
pub const PAYLOAD_LEN: usize = CELLS * 4;
pub const EXTENSION: &str = "wpsg";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected WPSG")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("shape mismatch: file is {rows}x{cols}, expected 600x7")]
    ShapeMismatch { rows: u16, cols: u16 },
    #[error("invalid label byte {0}")]
    BadLabel(u8),
    #[error("{0} unexpected trailing bytes")]
    TrailingData(usize),
    #[error("invalid metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("invalid spectrogram id {0:?}")]
    InvalidId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Serialize, Deserialize)]
struct MetaBlob {
    id: String,
    source: String,
    captured_at: String,
    species_hint: Option<String>,
}

pub fn encode_spectrogram(s: &Spectrogram) -> Result<Vec<u8>, FormatError> {
    let blob = serde_json::to_vec(&MetaBlob {
        id: s.meta.id.clone(),
        source: s.meta.source.clone(),
        captured_at: s.meta.captured_at.clone(),
        species_hint: s.meta.species_hint.clone(),
    })?;
    let mut out = Vec::with_capacity(HEADER_LEN + PAYLOAD_LEN + 4 + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(BandMatrix::ROWS as u16).to_le_bytes());
    out.extend_from_slice(&(BandMatrix::COLS as u16).to_le_bytes());
    out.push(s.meta.label.to_byte());
    out.push(0);
    for v in s.values.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&blob);
    Ok(out)
}

fn need(bytes: &[u8], needed: usize) -> Result<(), FormatError> {
    if bytes.len() < needed {
        Err(FormatError::Truncated {
            needed,
            have: bytes.len(),
        })
    } else {
        Ok(())
    }
}

pub fn decode_spectrogram(bytes: &[u8]) -> Result<Spectrogram, FormatError> {
    need(bytes, 4)?;
    if &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    need(bytes, HEADER_LEN)?;
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let (rows, cols) = (u16_at(6), u16_at(8));
    if usize::from(rows) != BandMatrix::ROWS || usize::from(cols) != BandMatrix::COLS {
        return Err(FormatError::ShapeMismatch { rows, cols });
    }
    let label = Label::from_byte(bytes[10]).ok_or(FormatError::BadLabel(bytes[10]))?;
    let meta_at = HEADER_LEN + PAYLOAD_LEN;
    need(bytes, meta_at + 4)?;
    let values: Vec<f32> = bytes[HEADER_LEN..meta_at]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let len = u32::from_le_bytes(bytes[meta_at..meta_at + 4].try_into().expect("4 bytes")) as usize;
    let end = meta_at + 4 + len;
    need(bytes, end)?;
    if bytes.len() > end {
        return Err(FormatError::TrailingData(bytes.len() - end));
    }
    let blob: MetaBlob = serde_json::from_slice(&bytes[meta_at + 4..end])?;
    Ok(Spectrogram {
        values: BandMatrix::from_vec(values).expect("payload length fixed by header"),
        meta: SpectrogramMeta {
            id: blob.id,
            source: blob.source,
            captured_at: blob.captured_at,
            label,
            species_hint: blob.species_hint,
        },
    })
}

/// Ids become file names, so only a conservative character set is accepted.
pub fn validate_id(id: &str) -> Result<(), FormatError> {
    let ok = !id.is_empty()
        && id.len() <= 200
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(FormatError::InvalidId(id.to_owned()))
    }
}

pub fn file_name_for(id: &str) -> String {
    format!("{id}.{EXTENSION}")
}

/// Writes `<dir>/<id>.wpsg` via a temporary file and rename.
pub fn save_spectrogram(s: &Spectrogram, dir: impl AsRef<Path>) -> Result<PathBuf, FormatError> {
    validate_id(&s.meta.id)?;
    let bytes = encode_spectrogram(s)?;
    let path = dir.as_ref().join(file_name_for(&s.meta.id));
    let tmp = dir.as_ref().join(format!(".{}.tmp", file_name_for(&s.meta.id)));
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}

pub fn load_spectrogram(path: impl AsRef<Path>) -> Result<Spectrogram, FormatError> {
    decode_spectrogram(&fs::read(path)?)
}

/// Overwrites the label byte of an existing file in place.
pub fn rewrite_label(path: impl AsRef<Path>, label: Label) -> Result<(), FormatError> {
    let mut f = OpenOptions::new().read(true).write(true).open(path)?;
    let mut header = [0u8; HEADER_LEN];
    io::Read::read_exact(&mut f, &mut header).map_err(|_| FormatError::Truncated {
        needed: HEADER_LEN,
        have: 0,
    })?;
    if &header[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    f.seek(SeekFrom::Start(LABEL_OFFSET))?;
    f.write_all(&[label.to_byte()])?;
    f.sync_data()?;
    Ok(())
}
