//! Deterrent actuation stand-in: a structured log line per trigger and an
//! optional fire-and-forget webhook POST.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{DetectionEvent, EventKind};

pub const WEBHOOK_ENV: &str = "WOODPECKER_WEBHOOK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterrentConfig {
    pub webhook_url: Option<String>,
    /// Pending POSTs beyond this are dropped.
    pub queue_capacity: usize,
    pub timeout_ms: u64,
}

impl Default for DeterrentConfig {
    fn default() -> Self {
        Self {
            webhook_url: None,
            queue_capacity: 16,
            timeout_ms: 2000,
        }
    }
}

/// JSON body of a webhook POST.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerPayload {
    pub kind: String,
    pub tick: u64,
    pub time_s: f64,
    pub probability: f64,
    pub at: String,
}

#[derive(Debug, Default)]
struct Counters {
    logged: AtomicUsize,
    posted: AtomicUsize,
    failed: AtomicUsize,
    dropped: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeterrentSummary {
    pub logged: usize,
    pub posted: usize,
    /// Webhook errors and non-2xx responses.
    pub failed: usize,
    /// Triggers not posted because the queue was full.
    pub dropped: usize,
}

pub struct Deterrent {
    tx: Option<SyncSender<TriggerPayload>>,
    worker: Option<JoinHandle<()>>,
    counters: Arc<Counters>,
}

impl Deterrent {
    pub fn new(config: &DeterrentConfig) -> Self {
        let counters = Arc::new(Counters::default());
        let (tx, worker) = match &config.webhook_url {
            None => (None, None),
            Some(url) => {
                let (tx, rx) = sync_channel::<TriggerPayload>(config.queue_capacity.max(1));
                let url = url.clone();
                let c = Arc::clone(&counters);
                let timeout = Duration::from_millis(config.timeout_ms);
                let worker = std::thread::spawn(move || {
                    let agent: ureq::Agent = ureq::Agent::config_builder()
                        .timeout_global(Some(timeout))
                        .build()
                        .into();
                    for payload in rx {
                        let body = serde_json::to_string(&payload).expect("payload serializes");
                        match agent.post(&url).content_type("application/json").send(body) {
                            Ok(_) => {
                                c.posted.fetch_add(1, Ordering::Relaxed);
                            }
                            Err(e) => {
                                c.failed.fetch_add(1, Ordering::Relaxed);
                                log::warn!("deterrent webhook {url} failed: {e}");
                            }
                        }
                    }
                });
                (Some(tx), Some(worker))
            }
        };
        Self { tx, worker, counters }
    }

    /// Logs a trigger and queues its webhook POST. Non-trigger events are
    /// ignored. Returns the log line written.
    pub fn emit(&self, event: &DetectionEvent) -> Option<String> {
        if event.kind != EventKind::Trigger {
            return None;
        }
        let at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        let probability = event.probability.unwrap_or(f64::NAN);
        let line = format!(
            "deterrent trigger at={at} tick={} time_s={:.3} probability={probability:.4}",
            event.tick,
            event.time_s()
        );
        log::info!("{line}");
        self.counters.logged.fetch_add(1, Ordering::Relaxed);
        if let Some(tx) = &self.tx {
            let payload = TriggerPayload {
                kind: "trigger".into(),
                tick: event.tick,
                time_s: event.time_s(),
                probability,
                at,
            };
            match tx.try_send(payload) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                    self.counters.dropped.fetch_add(1, Ordering::Relaxed);
                    log::warn!("deterrent webhook queue full, trigger at tick {} dropped", event.tick);
                }
            }
        }
        Some(line)
    }

    pub fn summary(&self) -> DeterrentSummary {
        DeterrentSummary {
            logged: self.counters.logged.load(Ordering::Relaxed),
            posted: self.counters.posted.load(Ordering::Relaxed),
            failed: self.counters.failed.load(Ordering::Relaxed),
            dropped: self.counters.dropped.load(Ordering::Relaxed),
        }
    }

    /// Waits for queued POSTs to finish.
    pub fn finish(mut self) -> DeterrentSummary {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
        self.summary()
    }
}

impl Drop for Deterrent {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Mutex;

    /// Minimal HTTP/1.1 server answering every request with `status`.
    fn stub(status: u16) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/hook", listener.local_addr().unwrap());
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&bodies);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                seen.lock().unwrap().push(String::from_utf8(body).unwrap());
                write!(stream, "HTTP/1.1 {status} X\r\ncontent-length: 0\r\nconnection: close\r\n\r\n").unwrap();
            }
        });
        (url, bodies)
    }

    fn trigger(tick: u64) -> DetectionEvent {
        DetectionEvent {
            tick,
            kind: EventKind::Trigger,
            probability: Some(0.93),
            message: None,
        }
    }

    #[test]
    fn log_line_format() {
        let d = Deterrent::new(&DeterrentConfig::default());
        let line = d.emit(&trigger(1400)).unwrap();
        assert!(line.starts_with("deterrent trigger at="));
        assert!(line.contains("tick=1400 time_s=7.000 probability=0.9300"));
        let at = line.split("at=").nth(1).unwrap().split(' ').next().unwrap();
        assert!(chrono::DateTime::parse_from_rfc3339(at).is_ok());
        let status = DetectionEvent { kind: EventKind::Status, ..trigger(2000) };
        assert!(d.emit(&status).is_none());
        assert_eq!(d.finish().logged, 1);
    }

    #[test]
    fn one_post_per_trigger() {
        let (url, bodies) = stub(200);
        let d = Deterrent::new(&DeterrentConfig {
            webhook_url: Some(url),
            ..Default::default()
        });
        d.emit(&trigger(800));
        d.emit(&trigger(2800));
        let s = d.finish();
        assert_eq!((s.posted, s.failed, s.dropped), (2, 0, 0));
        let bodies = bodies.lock().unwrap();
        assert_eq!(bodies.len(), 2);
        let p: TriggerPayload = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!((p.kind.as_str(), p.tick), ("trigger", 800));
    }

    #[test]
    fn server_errors_are_counted_not_fatal() {
        let (url, _) = stub(500);
        let d = Deterrent::new(&DeterrentConfig {
            webhook_url: Some(url),
            ..Default::default()
        });
        for t in 0..3 {
            assert!(d.emit(&trigger(800 + t)).is_some());
        }
        let s = d.finish();
        assert_eq!((s.logged, s.posted, s.failed), (3, 0, 3));
    }

    #[test]
    fn unreachable_webhook_is_a_warning() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let d = Deterrent::new(&DeterrentConfig {
            webhook_url: Some(format!("http://127.0.0.1:{port}/")),
            timeout_ms: 500,
            ..Default::default()
        });
        d.emit(&trigger(1));
        assert_eq!(d.finish().failed, 1);
    }
}
