use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;
use woodpecker::analyzer::wav::read_wav;
use woodpecker::analyzer::{AnalyzerConfig, BandAnalyzer, BAND_CENTERS_HZ};
use woodpecker::annotation::{self, AppState, Store};
use woodpecker::cnn::{build_reference_model, load_weights_for, save_weights, train_with_split, Model, ModelSpec, TrainConfig};
use woodpecker::dataset::{build_dataset, import_wav, load_dataset, samples_for_split, BuildConfig};
use woodpecker::metrics::evaluate_model;
use woodpecker::runtime::{benchmark, Detector, DetectorConfig, Deterrent, DeterrentConfig, EventKind, TriggerConfig};
use woodpecker::spectrogram::{Label, Split};

use crate::{Cli, Command, LabelArg, SplitArg, UsageError};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    log::info!(
        "resolved config: seed={} dataset={} model={} verbosity={} command={:?}",
        g.seed,
        g.dataset.as_deref().map_or("-".into(), |p| p.display().to_string()),
        g.model.as_deref().map_or("-".into(), |p| p.display().to_string()),
        g.verbosity,
        cli.command
    );
    match &cli.command {
        Command::Synth {
            n,
            positive_fraction,
            validation_fraction,
        } => synth(cli, *n, *positive_fraction, *validation_fraction),
        Command::Import { wav, label } => import(cli, wav, to_label(*label)),
        Command::Capture { wav } => import(cli, wav, Label::Unlabeled),
        Command::Train {
            epochs,
            batch_size,
            learning_rate,
            dropout,
            history,
        } => {
            let cfg = TrainConfig {
                batch_size: *batch_size,
                epochs: *epochs,
                learning_rate: *learning_rate,
                dropout_rate: *dropout,
                seed: g.seed,
                ..TrainConfig::default()
            };
            train(cli, &cfg, history.as_deref())
        }
        Command::Eval { split } => eval(cli, *split),
        Command::Detect {
            wav,
            webhook,
            json_events,
            status,
            threshold,
            consecutive,
            cooldown_s,
        } => {
            let cfg = DetectorConfig {
                trigger: TriggerConfig {
                    threshold: *threshold,
                    consecutive_required: *consecutive,
                    cooldown_s: *cooldown_s,
                },
                ..DetectorConfig::default()
            };
            detect(cli, wav, webhook.clone(), json_events.as_deref(), *status, &cfg)
        }
        Command::Annotate { bind, ui } => annotate(cli, *bind, ui.clone()),
        Command::Bands { wav } => bands(wav),
        Command::Bench { runs } => bench(cli, *runs),
    }
}

fn to_label(l: LabelArg) -> Label {
    match l {
        LabelArg::Drumming => Label::Drumming,
        LabelArg::Other => Label::Other,
        LabelArg::Unlabeled => Label::Unlabeled,
    }
}

fn dataset_dir(cli: &Cli) -> Result<&Path> {
    cli.global
        .dataset
        .as_deref()
        .ok_or_else(|| UsageError("--dataset (or --out) is required".into()).into())
}

fn model_path(cli: &Cli) -> Result<&Path> {
    cli.global
        .model
        .as_deref()
        .ok_or_else(|| UsageError("--model is required".into()).into())
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    load_weights_for(path, &ModelSpec::reference(0.2)).with_context(|| format!("loading model {}", path.display()))
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn synth(cli: &Cli, n: usize, positive_fraction: f64, validation_fraction: f64) -> Result<()> {
    let dir = dataset_dir(cli)?;
    let cfg = BuildConfig {
        n_total: n,
        positive_fraction,
        seed: cli.global.seed,
        validation_fraction,
        ..BuildConfig::default()
    };
    let m = build_dataset(dir, &cfg).with_context(|| format!("building dataset in {}", dir.display()))?;
    let count = |l, s| m.count(l, s);
    eprintln!(
        "wrote {} spectrograms to {} ({} drumming, {} other; {} train, {} val)",
        m.entries.len(),
        dir.display(),
        count(Label::Drumming, None),
        count(Label::Other, None),
        count(Label::Drumming, Some(Split::Train)) + count(Label::Other, Some(Split::Train)),
        count(Label::Drumming, Some(Split::Val)) + count(Label::Other, Some(Split::Val)),
    );
    print_json(&json!({
        "dir": dir.display().to_string(),
        "total": m.entries.len(),
        "drumming": count(Label::Drumming, None),
        "other": count(Label::Other, None),
        "seed": cli.global.seed,
    }))
}

fn import(cli: &Cli, wav: &Path, label: Label) -> Result<()> {
    let dir = dataset_dir(cli)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let added = import_wav(wav, label, dir, &AnalyzerConfig::default())
        .with_context(|| format!("importing {}", wav.display()))?;
    eprintln!("added {} {} spectrograms from {}", added.len(), label, wav.display());
    print_json(&serde_json::to_value(&added)?)
}

fn train(cli: &Cli, cfg: &TrainConfig, history_path: Option<&Path>) -> Result<()> {
    let dir = dataset_dir(cli)?;
    let out = model_path(cli)?;
    let items = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let (train, skipped_t) = samples_for_split(&items, Split::Train);
    let (val, skipped_v) = samples_for_split(&items, Split::Val);
    if skipped_t + skipped_v > 0 {
        log::warn!("{} unlabeled entries excluded", skipped_t + skipped_v);
    }
    eprintln!("training on {} samples, validating on {}", train.len(), val.len());
    let train: Vec<_> = train.iter().collect();
    let val: Vec<_> = val.iter().collect();
    let mut model = build_reference_model(cfg.seed);
    let history = train_with_split(&mut model, &train, &val, cfg, |e| {
        eprintln!(
            "epoch {:3}  loss {:.4}  acc {:.4}  val_loss {}  val_acc {}",
            e.epoch,
            e.train_loss,
            e.train_accuracy,
            e.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            e.val_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
        )
    })?;
    save_weights(&model, out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = history_path {
        std::fs::write(p, serde_json::to_vec_pretty(&history)?).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!("saved model to {}", out.display());
    print_json(&json!({
        "model": out.display().to_string(),
        "config": cfg,
        "final": history.last(),
        "skipped_unlabeled": skipped_t + skipped_v,
    }))
}

fn eval(cli: &Cli, split: SplitArg) -> Result<()> {
    let dir = dataset_dir(cli)?;
    let model = load_model(model_path(cli)?)?;
    let items = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let (samples, skipped) = match split {
        SplitArg::Train => samples_for_split(&items, Split::Train),
        SplitArg::Val => samples_for_split(&items, Split::Val),
        SplitArg::All => {
            let (mut a, sa) = samples_for_split(&items, Split::Train);
            let (b, sb) = samples_for_split(&items, Split::Val);
            a.extend(b);
            (a, sa + sb)
        }
    };
    if skipped > 0 {
        log::warn!("{skipped} unlabeled entries excluded");
    }
    if samples.is_empty() {
        anyhow::bail!("no labeled samples in the {split:?} split of {}", dir.display());
    }
    let mut report = evaluate_model(&model, &samples)?;
    report.skipped_unlabeled = skipped;
    eprintln!("accuracy {:.4} on {} samples", report.accuracy, report.n);
    print_json(&serde_json::to_value(&report)?)
}

fn detect(
    cli: &Cli,
    wav: &Path,
    webhook: Option<String>,
    json_events: Option<&Path>,
    status: bool,
    cfg: &DetectorConfig,
) -> Result<()> {
    let model = load_model(model_path(cli)?)?;
    let clip = read_wav(wav).with_context(|| format!("reading {}", wav.display()))?;
    let mut analyzer = BandAnalyzer::new(&AnalyzerConfig {
        sample_rate_hz: clip.sample_rate_hz(),
        ..AnalyzerConfig::default()
    })?;
    let mut detector = Detector::new(&model, *cfg)?;
    let deterrent = Deterrent::new(&DeterrentConfig {
        webhook_url: webhook,
        ..DeterrentConfig::default()
    });
    let mut sink: Box<dyn Write> = match json_events {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };

    let frames = analyzer.feed(clip.samples());
    let mut written = 0;
    for frame in &frames {
        for ev in detector.push_frame(frame)? {
            writeln!(sink, "{}", ev.to_json_line())?;
            written += 1;
            match ev.kind {
                EventKind::Trigger => {
                    deterrent.emit(&ev);
                }
                EventKind::Status if status => {
                    eprintln!("status t={:.1}s {}", ev.time_s(), ev.message.as_deref().unwrap_or(""));
                }
                _ => {}
            }
        }
    }
    let run = detector.finish();
    for ev in &run.events[written..] {
        writeln!(sink, "{}", ev.to_json_line())?;
        if status {
            eprintln!("status t={:.1}s {}", ev.time_s(), ev.message.as_deref().unwrap_or(""));
        }
    }
    sink.flush()?;
    drop(sink);
    let webhook = deterrent.finish();
    let timing = run.timing.summary();
    let summary = json!({
        "source": wav.display().to_string(),
        "duration_s": clip.duration_s(),
        "inferences": run.inferences.len(),
        "detections": run.count(EventKind::Detection),
        "triggers": run.count(EventKind::Trigger),
        "status": run.count(EventKind::Status),
        "deterrent": webhook,
        "timing": timing,
    });
    eprintln!(
        "{} inferences, {} detections, {} triggers; webhook posted {} failed {} dropped {}",
        run.inferences.len(),
        run.count(EventKind::Detection),
        run.count(EventKind::Trigger),
        webhook.posted,
        webhook.failed,
        webhook.dropped
    );
    if status {
        eprintln!(
            "status final: mean preprocessing {:.3} ms, mean inference {:.3} ms",
            timing.preprocessing_mean_ms, timing.inference_mean_ms
        );
    }
    if json_events.is_some() {
        print_json(&summary)?;
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn annotate(cli: &Cli, bind: std::net::SocketAddr, ui: Option<PathBuf>) -> Result<()> {
    let dir = dataset_dir(cli)?;
    let store = Store::open(dir).with_context(|| format!("opening dataset {}", dir.display()))?;
    let stats = store.stats();
    eprintln!(
        "{}: {} spectrograms, {} pending",
        dir.display(),
        stats.total,
        stats.unlabeled
    );
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(annotation::serve(
        AppState::new(store),
        bind,
        ui,
        |addr| eprintln!("annotation service listening on http://{addr}"),
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
    ))
    .with_context(|| format!("serving on {bind}"))?;
    Ok(())
}

fn bands(wav: &Path) -> Result<()> {
    let clip = read_wav(wav).with_context(|| format!("reading {}", wav.display()))?;
    let mut analyzer = BandAnalyzer::new(&AnalyzerConfig {
        sample_rate_hz: clip.sample_rate_hz(),
        ..AnalyzerConfig::default()
    })?;
    let mut out = BufWriter::new(io::stdout().lock());
    write!(out, "tick_index")?;
    for c in BAND_CENTERS_HZ {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    let mut result = Ok(());
    analyzer.feed_with(clip.samples(), |f| {
        if result.is_ok() {
            let cols: Vec<String> = f.amplitudes.iter().map(u16::to_string).collect();
            result = writeln!(out, "{},{}", f.tick_index, cols.join(","));
        }
    });
    result?;
    out.flush()?;
    Ok(())
}

fn bench(cli: &Cli, runs: usize) -> Result<()> {
    let model = match &cli.global.model {
        Some(p) => load_model(p)?,
        None => {
            log::info!("no --model given, timing an untrained reference model");
            build_reference_model(cli.global.seed)
        }
    };
    let s = benchmark(&model, runs, cli.global.seed)?.summary();
    eprintln!(
        "preprocessing mean {:.3} ms p95 {:.3} ms; inference mean {:.3} ms p95 {:.3} ms",
        s.preprocessing_mean_ms, s.preprocessing_p95_ms, s.inference_mean_ms, s.inference_p95_ms
    );
    print_json(&serde_json::to_value(s)?)
}
