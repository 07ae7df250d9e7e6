//! Labeled spectrogram datasets: synthetic generation, WAV import and
//! loading for training.

pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synth::{
    synth_drumming, synth_drumming_at, synth_negative, synth_negative_clip, DrummingParams, NegativeKind,
    NegativeParams,
};

use crate::analyzer::wav::{read_wav, WavError};
use crate::analyzer::{AnalyzerConfig, AnalyzerError, AudioClip, BandAnalyzer, TICKS_PER_SECOND};
use crate::cnn::{spectrogram_tensor, split_stratified, Sample, CLASS_DRUMMING, CLASS_OTHER};
use crate::spectrogram::format::{file_name_for, validate_id};
use crate::spectrogram::{
    load_spectrogram, read_index, save_spectrogram, write_index, zscore, FormatError, IndexEntry, IndexError,
    Label, SlidingWindow, Spectrogram, SpectrogramMeta, Split, WINDOW_TICKS,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MIN_DATASET_SIZE: usize = 10;
/// Hop between successive windows cut from a long recording.
pub const IMPORT_HOP_TICKS: u64 = TICKS_PER_SECOND as u64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
    #[error("dataset needs at least {MIN_DATASET_SIZE} files, asked for {0}")]
    TooSmall(usize),
    #[error("positive_fraction must be in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("recording is {0:.2} s, shorter than one 3 s window")]
    TooShort(f64),
    #[error("cannot write dataset directory {path}: {source}")]
    Unwritable { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub id: String,
    pub label: Label,
    pub source: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub directory: PathBuf,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn count(&self, label: Label, split: Option<Split>) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label == label && split.is_none_or(|s| e.split == s))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub n_total: usize,
    pub positive_fraction: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub analyzer: AnalyzerConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            n_total: 750,
            positive_fraction: 0.5,
            seed: 0,
            validation_fraction: 0.2,
            analyzer: AnalyzerConfig::default(),
        }
    }
}

/// SplitMix64 step; derives independent per-file seeds from the master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Streams `clip` through a fresh analyzer and returns the normalized
/// spectrogram of every window ending at tick `600 + k * hop`.
pub fn spectrograms_from_clip(
    clip: &AudioClip,
    config: &AnalyzerConfig,
    hop_ticks: u64,
) -> Result<Vec<Spectrogram>, AnalyzerError> {
    if clip.sample_rate_hz() != config.sample_rate_hz {
        return Err(AnalyzerError::RateMismatch {
            clip: clip.sample_rate_hz(),
            analyzer: config.sample_rate_hz,
        });
    }
    let mut analyzer = BandAnalyzer::new(config)?;
    let mut window = SlidingWindow::new();
    let mut out = Vec::new();
    analyzer.feed_with(clip.samples(), |frame| {
        window.push_frame(&frame);
        let n = window.count();
        if n >= WINDOW_TICKS as u64 && (n - WINDOW_TICKS as u64).is_multiple_of(hop_ticks) {
            out.push(zscore(&window.snapshot_raw().expect("window full")));
        }
    });
    Ok(out)
}

/// Deterministic stand-in capture time for synthetic files.
fn synthetic_timestamp(index: usize) -> String {
    chrono::DateTime::from_timestamp(946_684_800 + index as i64 * 3, 0)
        .expect("in range")
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn ensure_dir(dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Unwritable {
        path: dir.to_path_buf(),
        source,
    })?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|source| DatasetError::Unwritable {
        path: dir.to_path_buf(),
        source,
    })?;
    let _ = fs::remove_file(probe);
    Ok(())
}

/// One synthetic labeled spectrogram; file `index` of a dataset.
pub fn synth_spectrogram(index: usize, positive: bool, config: &BuildConfig) -> Result<Spectrogram, DatasetError> {
    let seed = derive_seed(config.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (clip, kind, label) = if positive {
        let p = DrummingParams::random(&mut rng);
        (synth_drumming(&p, seed)?, "drumming", Label::Drumming)
    } else {
        let p = NegativeParams::random(&mut rng);
        (synth_negative(&p, seed)?, p.kind.name(), Label::Other)
    };
    let mut s = spectrograms_from_clip(&clip, &config.analyzer, IMPORT_HOP_TICKS)?
        .into_iter()
        .next()
        .expect("3 s clip yields one window");
    s.meta = SpectrogramMeta {
        id: format!("synth-{index:05}"),
        source: format!("synth:{kind}"),
        captured_at: synthetic_timestamp(index),
        label,
        species_hint: None,
    };
    Ok(s)
}

/// Generates `n_total` labeled spectrogram files plus `index.jsonl` and
/// `manifest.json`, with a seeded stratified train/val split.
pub fn build_dataset(out_dir: impl AsRef<Path>, config: &BuildConfig) -> Result<DatasetManifest, DatasetError> {
    let dir = out_dir.as_ref();
    if config.n_total < MIN_DATASET_SIZE {
        return Err(DatasetError::TooSmall(config.n_total));
    }
    if !(0.0..=1.0).contains(&config.positive_fraction) {
        return Err(DatasetError::BadFraction(config.positive_fraction));
    }
    ensure_dir(dir)?;
    let n_pos = (config.n_total as f64 * config.positive_fraction).round() as usize;
    let spectrograms: Vec<Spectrogram> = (0..config.n_total)
        .into_par_iter()
        .map(|i| synth_spectrogram(i, i < n_pos, config))
        .collect::<Result<_, _>>()?;
    spectrograms
        .par_iter()
        .try_for_each(|s| save_spectrogram(s, dir).map(|_| ()))?;

    let labels: Vec<usize> = spectrograms.iter().map(|s| usize::from(s.meta.label == Label::Drumming)).collect();
    let (_, val) = split_stratified(&labels, config.validation_fraction, config.seed);
    let mut is_val = vec![false; spectrograms.len()];
    val.iter().for_each(|&i| is_val[i] = true);

    let entries: Vec<ManifestEntry> = spectrograms
        .iter()
        .zip(&is_val)
        .map(|(s, &v)| ManifestEntry {
            file: file_name_for(&s.meta.id),
            id: s.meta.id.clone(),
            label: s.meta.label,
            source: s.meta.source.clone(),
            split: if v { Split::Val } else { Split::Train },
        })
        .collect();
    let index: Vec<IndexEntry> = entries
        .iter()
        .map(|e| IndexEntry {
            path: e.file.clone(),
            id: e.id.clone(),
            label: e.label,
            split: Some(e.split),
        })
        .collect();
    write_index(dir, &index)?;
    let manifest = DatasetManifest {
        directory: dir.to_path_buf(),
        seed: config.seed,
        entries,
    };
    let record = serde_json::json!({
        "seed": config.seed,
        "n_total": config.n_total,
        "positive_fraction": config.positive_fraction,
        "validation_fraction": config.validation_fraction,
        "analyzer": config.analyzer,
    });
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&record)?)?;
    Ok(manifest)
}

/// Stable split for entries added after generation: FNV-1a of the id, one
/// in five to validation.
pub fn split_for_id(id: &str) -> Split {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    if h.is_multiple_of(5) {
        Split::Val
    } else {
        Split::Train
    }
}

fn sanitize_stem(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
    let s: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "clip".into()
    } else {
        s
    }
}

/// Cuts a recording into 3 s windows with a 1 s hop and appends them to the
/// dataset in `out_dir` under `label` (`Unlabeled` for raw captures).
pub fn import_wav(
    path: impl AsRef<Path>,
    label: Label,
    out_dir: impl AsRef<Path>,
    config: &AnalyzerConfig,
) -> Result<Vec<IndexEntry>, DatasetError> {
    let path = path.as_ref();
    let clip = read_wav(path)?;
    import_clip(&clip, &file_label(path), &sanitize_stem(path), label, out_dir, config)
}

fn file_label(path: &Path) -> String {
    path.file_name().and_then(|s| s.to_str()).unwrap_or("unknown").to_owned()
}

pub fn import_clip(
    clip: &AudioClip,
    source: &str,
    stem: &str,
    label: Label,
    out_dir: impl AsRef<Path>,
    config: &AnalyzerConfig,
) -> Result<Vec<IndexEntry>, DatasetError> {
    let dir = out_dir.as_ref();
    let min_samples = u64::from(clip.sample_rate_hz()) * crate::spectrogram::WINDOW_SECONDS as u64;
    if (clip.len() as u64) < min_samples {
        return Err(DatasetError::TooShort(clip.duration_s()));
    }
    ensure_dir(dir)?;
    let mut index = match read_index(dir) {
        Ok(i) => i,
        Err(IndexError::Missing(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let taken: std::collections::HashSet<String> = index.iter().map(|e| e.id.clone()).collect();
    let now = chrono::Utc::now();
    let mut added = Vec::new();
    for (k, mut s) in spectrograms_from_clip(clip, config, IMPORT_HOP_TICKS)?.into_iter().enumerate() {
        let base = format!("{stem}-{k:03}s");
        let mut id = base.clone();
        let mut n = 1;
        while taken.contains(&id) {
            id = format!("{base}-{n}");
            n += 1;
        }
        validate_id(&id)?;
        s.meta = SpectrogramMeta {
            id: id.clone(),
            source: source.to_owned(),
            captured_at: (now + chrono::Duration::seconds(k as i64))
                .to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            label,
            species_hint: None,
        };
        save_spectrogram(&s, dir)?;
        added.push(IndexEntry {
            path: file_name_for(&id),
            split: Some(split_for_id(&id)),
            id,
            label,
        });
    }
    index.extend(added.iter().cloned());
    write_index(dir, &index)?;
    Ok(added)
}

/// A stored spectrogram with its index entry.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub entry: IndexEntry,
    pub spectrogram: Spectrogram,
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<DatasetItem>, DatasetError> {
    let dir = dir.as_ref();
    read_index(dir)?
        .into_iter()
        .map(|entry| {
            let spectrogram = load_spectrogram(dir.join(&entry.path))?;
            Ok(DatasetItem { entry, spectrogram })
        })
        .collect()
}

pub fn class_index(label: Label) -> Option<usize> {
    match label {
        Label::Drumming => Some(CLASS_DRUMMING),
        Label::Other => Some(CLASS_OTHER),
        Label::Unlabeled => None,
    }
}

/// Labeled items of `split` as training samples; also returns how many
/// unlabeled items were skipped.
pub fn samples_for_split(items: &[DatasetItem], split: Split) -> (Vec<Sample>, usize) {
    let mut skipped = 0;
    let samples = items
        .iter()
        .filter(|it| it.entry.split.unwrap_or_else(|| split_for_id(&it.entry.id)) == split)
        .filter_map(|it| match class_index(it.entry.label) {
            Some(label) => Some(Sample {
                input: spectrogram_tensor(&it.spectrogram),
                label,
            }),
            None => {
                skipped += 1;
                None
            }
        })
        .collect();
    (samples, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::wav::write_wav;

    fn small(seed: u64) -> BuildConfig {
        BuildConfig {
            n_total: 10,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_tiny_and_bad_fraction() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_dataset(dir.path(), &BuildConfig { n_total: 9, ..Default::default() }),
            Err(DatasetError::TooSmall(9))
        ));
        assert!(matches!(
            build_dataset(dir.path(), &BuildConfig { n_total: 10, positive_fraction: 1.5, ..Default::default() }),
            Err(DatasetError::BadFraction(_))
        ));
    }

    #[test]
    fn ten_file_dataset_is_stratified() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(dir.path(), &small(4)).unwrap();
        assert_eq!(m.entries.len(), 10);
        let val = m.entries.iter().filter(|e| e.split == Split::Val).count();
        assert_eq!((10 - val, val), (8, 2));
        for split in [Split::Train, Split::Val] {
            assert!(m.count(Label::Drumming, Some(split)) >= 1);
            assert!(m.count(Label::Other, Some(split)) >= 1);
        }
        let items = load_dataset(dir.path()).unwrap();
        assert_eq!(items.len(), 10);
        for (item, e) in items.iter().zip(&m.entries) {
            assert_eq!(item.spectrogram.meta.label, e.label);
            assert_eq!(item.spectrogram.meta.id, e.id);
        }
    }

    #[test]
    fn unwritable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, b"x").unwrap();
        assert!(matches!(
            build_dataset(file.join("sub"), &small(0)),
            Err(DatasetError::Unwritable { .. })
        ));
    }

    #[test]
    fn import_window_counts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ds");
        for (secs, expected) in [(5.0, Some(3)), (3.0, Some(1)), (2.9, None)] {
            let wav = dir.path().join(format!("rec{secs}.wav"));
            write_wav(&wav, &AudioClip::silence(secs, 44100).unwrap()).unwrap();
            match (import_wav(&wav, Label::Drumming, &out, &AnalyzerConfig::default()), expected) {
                (Ok(added), Some(n)) => assert_eq!(added.len(), n),
                (Err(DatasetError::TooShort(_)), None) => {}
                (r, e) => panic!("{secs}s: {r:?} vs {e:?}"),
            }
        }
        assert_eq!(read_index(&out).unwrap().len(), 4);
        // a second import of the same file gets fresh ids
        let wav = dir.path().join("rec3.wav");
        let again = import_wav(&wav, Label::Unlabeled, &out, &AnalyzerConfig::default()).unwrap();
        assert_eq!(again[0].id, "rec3-000s-1");
        assert_eq!(read_index(&out).unwrap().len(), 5);
    }

    #[test]
    fn import_rejects_rate_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("r48.wav");
        write_wav(&wav, &AudioClip::silence(3.5, 48000).unwrap()).unwrap();
        assert!(matches!(
            import_wav(&wav, Label::Other, dir.path(), &AnalyzerConfig::default()),
            Err(DatasetError::Analyzer(AnalyzerError::RateMismatch { .. }))
        ));
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
