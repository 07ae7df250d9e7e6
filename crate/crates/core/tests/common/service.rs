//! HTTP contract helpers for the annotation service.

use std::collections::{BTreeMap, BTreeSet};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;
use woodpecker::annotation::{read_history, router, AppState, Store};
use woodpecker::spectrogram::Label;

pub fn app(dir: &std::path::Path) -> Router {
    router(AppState::new(Store::open(dir).unwrap()), None)
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, v)
}

pub fn keys(v: &Value) -> BTreeSet<&str> {
    v.as_object().unwrap().keys().map(String::as_str).collect()
}

pub fn set(k: &[&'static str]) -> BTreeSet<&'static str> {
    k.iter().copied().collect()
}

pub fn check_stats_schema(v: &Value) {
    assert_eq!(keys(v), set(&["total", "labeled", "drumming", "other", "unlabeled"]));
    let n = |k: &str| v[k].as_u64().unwrap();
    assert_eq!(n("labeled") + n("unlabeled"), n("total"));
    assert_eq!(n("drumming") + n("other"), n("labeled"));
}

pub fn check_pending_schema(v: &Value) {
    assert_eq!(keys(v), set(&["items", "total"]));
    assert!(v["total"].is_u64());
    for it in v["items"].as_array().unwrap() {
        assert_eq!(keys(it), set(&["id", "source", "captured_at"]));
        assert!(it["id"].is_string() && it["source"].is_string() && it["captured_at"].is_string());
    }
}

/// Random label/pending/stats/spectrogram calls against a reference model
/// of the expected state.
pub async fn randomized_consistency(seed: u64, ops: usize) -> Result<(), String> {
    let d = tempfile::tempdir().unwrap();
    let fifo = super::unlabeled_dataset(d.path(), 25);
    let app = app(d.path());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: BTreeMap<String, Label> = fifo.iter().map(|id| (id.clone(), Label::Unlabeled)).collect();
    let mut posts = 0;
    let ensure = |ok: bool, what: String| if ok { Ok(()) } else { Err(what) };

    for op in 0..ops {
        match rng.random_range(0..4) {
            0 | 1 => {
                let id = if rng.random_bool(0.9) {
                    fifo[rng.random_range(0..fifo.len())].clone()
                } else {
                    format!("missing-{op}")
                };
                let label = ["drumming", "other", "bogus"][rng.random_range(0..3)];
                let (s, v) = call(&app, "POST", "/api/label", Some(json!({"id": id, "label": label, "annotator": "t"}))).await;
                let expected = match (model.contains_key(&id), label) {
                    (_, "bogus") => StatusCode::UNPROCESSABLE_ENTITY,
                    (false, _) => StatusCode::NOT_FOUND,
                    (true, l) => {
                        model.insert(id.clone(), l.parse().unwrap());
                        posts += 1;
                        StatusCode::OK
                    }
                };
                ensure(s == expected, format!("op {op}: POST {id} {label} -> {s}, expected {expected}"))?;
                if s == StatusCode::OK {
                    let remaining = model.values().filter(|l| !l.is_labeled()).count();
                    ensure(v == json!({"ok": true, "remaining": remaining}), format!("op {op}: body {v}"))?;
                }
            }
            2 => {
                let limit = rng.random_range(0..30);
                let (s, v) = call(&app, "GET", &format!("/api/pending?limit={limit}"), None).await;
                ensure(s == StatusCode::OK, format!("op {op}: pending {s}"))?;
                check_pending_schema(&v);
                let expected: Vec<&String> = fifo.iter().filter(|id| model[*id] == Label::Unlabeled).collect();
                let got: Vec<&str> = v["items"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap()).collect();
                let want: Vec<&str> = expected.iter().take(limit).map(|s| s.as_str()).collect();
                ensure(got == want, format!("op {op}: pending {got:?} != {want:?}"))?;
                ensure(v["total"] == expected.len(), format!("op {op}: pending total"))?;
            }
            _ => {
                let id = &fifo[rng.random_range(0..fifo.len())];
                let (s, v) = call(&app, "GET", &format!("/api/spectrogram/{id}"), None).await;
                ensure(s == StatusCode::OK, format!("op {op}: spectrogram {s}"))?;
                ensure(v["meta"]["label"] == model[id].as_str(), format!("op {op}: stale label for {id}"))?;
            }
        }
        let (_, stats) = call(&app, "GET", "/api/stats", None).await;
        check_stats_schema(&stats);
        let count = |l: Label| model.values().filter(|&&x| x == l).count();
        let want = json!({
            "total": model.len(),
            "labeled": count(Label::Drumming) + count(Label::Other),
            "drumming": count(Label::Drumming),
            "other": count(Label::Other),
            "unlabeled": count(Label::Unlabeled),
        });
        ensure(stats == want, format!("op {op}: stats {stats} != {want}"))?;
    }
    // persisted state agrees with the model
    let reopened = Store::open(d.path()).unwrap();
    for (id, l) in &model {
        ensure(reopened.label_of(id) == Some(*l), format!("persisted label of {id}"))?;
        ensure(reopened.load(id).unwrap().meta.label == *l, format!("label byte of {id}"))?;
    }
    ensure(read_history(d.path()).unwrap().len() == posts, "history length".into())
}


/// Exercises every endpoint once against a fresh 10-item dataset,
/// checking status codes and exact JSON shapes. Panics on violation.
pub async fn endpoint_contract() {
    let d = tempfile::tempdir().unwrap();
    let fifo = super::unlabeled_dataset(d.path(), 10);
    let app = app(d.path());

    let (s, v) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    check_stats_schema(&v);
    assert_eq!(v, json!({"total": 10, "labeled": 0, "drumming": 0, "other": 0, "unlabeled": 10}));

    let (s, v) = call(&app, "GET", "/api/pending?limit=3", None).await;
    assert_eq!(s, StatusCode::OK);
    check_pending_schema(&v);
    assert_eq!(v["total"], 10);
    let ids: Vec<&str> = v["items"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap()).collect();
    assert_eq!(ids, fifo[..3].iter().map(String::as_str).collect::<Vec<_>>());

    let (s, v) = call(&app, "GET", &format!("/api/spectrogram/{}", fifo[0]), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(keys(&v), set(&["id", "rows", "cols", "values", "meta"]));
    assert_eq!((v["rows"].as_u64(), v["cols"].as_u64()), (Some(600), Some(7)));
    let rows = v["values"].as_array().unwrap();
    assert_eq!(rows.len(), 600);
    assert!(rows.iter().all(|r| r.as_array().unwrap().len() == 7 && r.as_array().unwrap().iter().all(Value::is_f64)));
    assert_eq!(v["meta"]["id"], fifo[0].as_str());
    assert_eq!(v["meta"]["label"], "unlabeled");
    for k in ["source", "captured_at", "species_hint"] {
        assert!(v["meta"].get(k).is_some(), "meta.{k}");
    }

    let (s, _) = call(&app, "GET", "/api/spectrogram/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, "POST", "/api/label", Some(json!({"id": fifo[0], "label": "drumming"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"ok": true, "remaining": 9}));

    let (_, v) = call(&app, "GET", "/api/pending", None).await;
    assert!(v["items"].as_array().unwrap().iter().all(|i| i["id"] != fifo[0].as_str()));
    assert_eq!(v["total"], 9);

    let (s, _) = call(&app, "POST", "/api/label", Some(json!({"id": fifo[1], "label": "woodpecker"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/api/label", Some(json!({"id": fifo[1], "label": "unlabeled"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/api/label", Some(json!({"id": "ghost", "label": "other"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"total": 10, "labeled": 1, "drumming": 1, "other": 0, "unlabeled": 9}));
}

