use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::{BandMatrix, WINDOW_TICKS};
use crate::analyzer::{BandFrame, NUM_BANDS};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("window not warmed up: {have} of {need} frames")]
pub struct NotWarmedUp {
    pub have: u64,
    pub need: usize,
}

/// Fixed 600-frame circular buffer of band frames.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    storage: Vec<[u16; NUM_BANDS]>,
    /// Slot the next frame is written to; also the oldest frame once full.
    head: usize,
    count: u64,
}

impl Default for SlidingWindow {
    fn default() -> Self {
        Self::new()
    }
}

impl SlidingWindow {
    pub const CAPACITY: usize = WINDOW_TICKS;

    pub fn new() -> Self {
        Self {
            storage: vec![[0; NUM_BANDS]; Self::CAPACITY],
            head: 0,
            count: 0,
        }
    }

    pub fn push_frame(&mut self, frame: &BandFrame) {
        self.storage[self.head] = frame.amplitudes;
        self.head = (self.head + 1) % Self::CAPACITY;
        self.count += 1;
    }

    /// Total frames pushed since creation.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_full(&self) -> bool {
        self.count >= Self::CAPACITY as u64
    }

    /// Chronological, dequantized copy of the last 600 frames.
    pub fn snapshot_raw(&self) -> Result<BandMatrix, NotWarmedUp> {
        if !self.is_full() {
            return Err(NotWarmedUp {
                have: self.count,
                need: Self::CAPACITY,
            });
        }
        let mut m = BandMatrix::zeros();
        let (newer, older) = self.storage.split_at(self.head);
        for (dst, frame) in m
            .as_mut_slice()
            .chunks_exact_mut(NUM_BANDS)
            .zip(older.iter().chain(newer))
        {
            for (d, &a) in dst.iter_mut().zip(frame) {
                *d = BandMatrix::dequantize(a);
            }
        }
        Ok(m)
    }
}

/// Window shared between one frame producer and one snapshot consumer.
/// Pushes and snapshots are serialized, so a snapshot never observes a
/// partially written frame.
#[derive(Debug, Clone, Default)]
pub struct SharedWindow {
    inner: Arc<Mutex<SlidingWindow>>,
}

impl SharedWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_frame(&self, frame: &BandFrame) {
        self.inner.lock().expect("window lock poisoned").push_frame(frame);
    }

    pub fn count(&self) -> u64 {
        self.inner.lock().expect("window lock poisoned").count()
    }

    pub fn snapshot_raw(&self) -> Result<BandMatrix, NotWarmedUp> {
        self.inner.lock().expect("window lock poisoned").snapshot_raw()
    }
}
