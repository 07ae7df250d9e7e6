//! Streaming detection loop: analyzer frames into the sliding window, one
//! inference per second, trigger debounce and deterrent hooks.

mod deterrent;
mod policy;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{AnalyzerConfig, AnalyzerError, AudioClip, BandAnalyzer, BandFrame, TICKS_PER_SECOND};
use crate::cnn::{CnnError, Model, ModelSpec, REFERENCE_INPUT_SHAPE};
use crate::spectrogram::{zscore, BandMatrix, SlidingWindow, WINDOW_TICKS};

pub use deterrent::{Deterrent, DeterrentConfig, DeterrentSummary, TriggerPayload, WEBHOOK_ENV};
pub use policy::{trigger_policy, TriggerConfig, TriggerPolicy};

pub const NEVER_WARMED_UP: &str = "never warmed up";

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("model architecture does not match the detector input (input shape {0:?})")]
    ArchitectureMismatch(Vec<usize>),
    #[error("invalid detector config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Model(#[from] CnnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub inference_period_ticks: u64,
    pub warmup_ticks: u64,
    pub trigger: TriggerConfig,
    /// 0 disables periodic status events.
    pub status_period_ticks: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            inference_period_ticks: u64::from(TICKS_PER_SECOND),
            warmup_ticks: WINDOW_TICKS as u64,
            trigger: TriggerConfig::default(),
            status_period_ticks: 10 * u64::from(TICKS_PER_SECOND),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.inference_period_ticks == 0 {
            return Err(RuntimeError::InvalidConfig("inference_period_ticks must be positive"));
        }
        if self.warmup_ticks < WINDOW_TICKS as u64 {
            return Err(RuntimeError::InvalidConfig("warmup_ticks must cover a full window"));
        }
        if self.trigger.consecutive_required == 0 {
            return Err(RuntimeError::InvalidConfig("consecutive_required must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.trigger.threshold) {
            return Err(RuntimeError::InvalidConfig("threshold must lie in [0, 1]"));
        }
        if !(self.trigger.cooldown_s >= 0.0) {
            return Err(RuntimeError::InvalidConfig("cooldown_s must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Detection,
    Trigger,
    Status,
}

/// One line of detector output. `tick` counts frames consumed, so the
/// first possible inference sits at tick 600.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "EventRecord", from = "EventRecord")]
pub struct DetectionEvent {
    pub tick: u64,
    pub kind: EventKind,
    pub probability: Option<f64>,
    pub message: Option<String>,
}

impl DetectionEvent {
    pub fn time_s(&self) -> f64 {
        self.tick as f64 / f64::from(TICKS_PER_SECOND)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct EventRecord {
    tick: u64,
    time_s: f64,
    kind: EventKind,
    probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    message: Option<String>,
}

impl From<DetectionEvent> for EventRecord {
    fn from(e: DetectionEvent) -> Self {
        Self {
            tick: e.tick,
            time_s: e.time_s(),
            kind: e.kind,
            probability: e.probability,
            message: e.message,
        }
    }
}

impl From<EventRecord> for DetectionEvent {
    fn from(r: EventRecord) -> Self {
        Self {
            tick: r.tick,
            kind: r.kind,
            probability: r.probability,
            message: r.message,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub tick: u64,
    pub p_drumming: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub tick: u64,
    pub preprocessing: Duration,
    pub inference: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub runs: usize,
    pub preprocessing_mean_ms: f64,
    pub preprocessing_p95_ms: f64,
    pub inference_mean_ms: f64,
    pub inference_p95_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub records: Vec<TimingRecord>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn mean_ms(v: &[Duration]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|d| ms(*d)).sum::<f64>() / v.len() as f64
}

/// Nearest-rank 95th percentile.
fn p95_ms(v: &[Duration]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort();
    let rank = (0.95 * s.len() as f64).ceil() as usize;
    ms(s[rank.clamp(1, s.len()) - 1])
}

impl TimingReport {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn column(&self, f: impl Fn(&TimingRecord) -> Duration) -> Vec<Duration> {
        self.records.iter().map(f).collect()
    }

    pub fn summary(&self) -> TimingSummary {
        let pre = self.column(|r| r.preprocessing);
        let inf = self.column(|r| r.inference);
        TimingSummary {
            runs: self.records.len(),
            preprocessing_mean_ms: mean_ms(&pre),
            preprocessing_p95_ms: p95_ms(&pre),
            inference_mean_ms: mean_ms(&inf),
            inference_p95_ms: p95_ms(&inf),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionRun {
    pub events: Vec<DetectionEvent>,
    pub inferences: Vec<InferenceRecord>,
    pub timing: TimingReport,
}

impl DetectionRun {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn triggers(&self) -> impl Iterator<Item = &DetectionEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::Trigger)
    }
}

fn check_model(model: &Model<f32>) -> Result<(), RuntimeError> {
    let spec = model.spec();
    let reference = ModelSpec::reference(0.0);
    if spec.input_shape != REFERENCE_INPUT_SHAPE || !spec.same_topology(&reference) {
        return Err(RuntimeError::ArchitectureMismatch(spec.input_shape.clone()));
    }
    Ok(())
}

/// Inference consumer fed one frame at a time.
pub struct Detector<'m> {
    model: &'m Model<f32>,
    config: DetectorConfig,
    window: SlidingWindow,
    policy: TriggerPolicy,
    run: DetectionRun,
}

impl<'m> Detector<'m> {
    pub fn new(model: &'m Model<f32>, config: DetectorConfig) -> Result<Self, RuntimeError> {
        config.validate()?;
        check_model(model)?;
        Ok(Self {
            model,
            config,
            window: SlidingWindow::new(),
            policy: TriggerPolicy::new(config.trigger),
            run: DetectionRun::default(),
        })
    }

    pub fn ticks(&self) -> u64 {
        self.window.count()
    }

    fn due(&self, tick: u64) -> bool {
        tick >= self.config.warmup_ticks
            && (tick - self.config.warmup_ticks).is_multiple_of(self.config.inference_period_ticks)
    }

    fn status(&self, tick: u64) -> DetectionEvent {
        DetectionEvent {
            tick,
            kind: EventKind::Status,
            probability: None,
            message: Some(format!(
                "ok uptime_s={:.1} inferences={} detections={} triggers={}",
                tick as f64 / f64::from(TICKS_PER_SECOND),
                self.run.inferences.len(),
                self.run.count(EventKind::Detection),
                self.run.count(EventKind::Trigger),
            )),
        }
    }

    /// Consumes a frame and returns the events it produced, which are also
    /// kept for `finish`.
    pub fn push_frame(&mut self, frame: &BandFrame) -> Result<Vec<DetectionEvent>, RuntimeError> {
        self.window.push_frame(frame);
        let tick = self.window.count();
        let mut out = Vec::new();
        if self.due(tick) {
            let t0 = Instant::now();
            let raw = self
                .window
                .snapshot_raw()
                .expect("warmup covers a full window");
            let s = zscore(&raw);
            let t1 = Instant::now();
            let prediction = self.model.predict(&s)?;
            let t2 = Instant::now();
            self.run.timing.records.push(TimingRecord {
                tick,
                preprocessing: t1 - t0,
                inference: t2 - t1,
            });
            let p = prediction.p_drumming;
            self.run.inferences.push(InferenceRecord { tick, p_drumming: p });
            if p >= self.config.trigger.threshold {
                out.push(DetectionEvent {
                    tick,
                    kind: EventKind::Detection,
                    probability: Some(p),
                    message: None,
                });
            }
            if self.policy.observe(tick, p) {
                out.push(DetectionEvent {
                    tick,
                    kind: EventKind::Trigger,
                    probability: Some(p),
                    message: None,
                });
            }
        }
        self.run.events.extend(out.iter().cloned());
        if self.config.status_period_ticks > 0 && tick.is_multiple_of(self.config.status_period_ticks) {
            let status = self.status(tick);
            self.run.events.push(status.clone());
            out.push(status);
        }
        Ok(out)
    }

    pub fn finish(mut self) -> DetectionRun {
        if self.window.count() < self.config.warmup_ticks {
            self.run.events.push(DetectionEvent {
                tick: self.window.count(),
                kind: EventKind::Status,
                probability: None,
                message: Some(NEVER_WARMED_UP.into()),
            });
        }
        self.run
    }
}

/// Runs the detector over pre-computed analyzer frames.
pub fn run_detector_frames<'a, I>(frames: I, model: &Model<f32>, config: &DetectorConfig) -> Result<DetectionRun, RuntimeError>
where
    I: IntoIterator<Item = &'a BandFrame>,
{
    let mut det = Detector::new(model, *config)?;
    for f in frames {
        det.push_frame(f)?;
    }
    Ok(det.finish())
}

/// Streams a clip through a fresh analyzer and the detector.
pub fn run_detector(clip: &AudioClip, model: &Model<f32>, config: &DetectorConfig) -> Result<DetectionRun, RuntimeError> {
    let mut det = Detector::new(model, *config)?;
    let mut analyzer = BandAnalyzer::new(&AnalyzerConfig {
        sample_rate_hz: clip.sample_rate_hz(),
        ..AnalyzerConfig::default()
    })?;
    let mut err = None;
    analyzer.feed_with(clip.samples(), |frame| {
        if err.is_none() {
            if let Err(e) = det.push_frame(&frame) {
                err = Some(e);
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(det.finish()),
    }
}

/// Times z-score and prediction on `n_runs` random raw windows.
pub fn benchmark(model: &Model<f32>, n_runs: usize, seed: u64) -> Result<TimingReport, RuntimeError> {
    check_model(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TimingReport::default();
    for i in 0..n_runs {
        let raw: Vec<f32> = (0..BandMatrix::ROWS * BandMatrix::COLS)
            .map(|_| rng.random::<f32>())
            .collect();
        let raw = BandMatrix::from_vec(raw).expect("window shape");
        let t0 = Instant::now();
        let s = zscore(&raw);
        let t1 = Instant::now();
        let p = model.predict(&s)?;
        let t2 = Instant::now();
        std::hint::black_box(p);
        report.records.push(TimingRecord {
            tick: i as u64,
            preprocessing: t1 - t0,
            inference: t2 - t1,
        });
    }
    Ok(report)
}
