//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod service;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use woodpecker::cnn::ops::{conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2d_backward, maxpool2d_forward};
use woodpecker::cnn::{softmax_cross_entropy, Activation, LayerSpec, Model, ModelSpec, Tensor};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Magnitudes below this are compared absolutely; f64 central-difference
/// round-off at h = 1e-4 is around 1e-12.
const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max relative error between `analytic` and central differences of `f`
/// with respect to every entry of `x`.
fn check<F: FnMut(&Tensor<f64>) -> f64>(x: &Tensor<f64>, analytic: &[f64], mut f: F) -> f64 {
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let up = f(&xp);
        xp.data_mut()[i] = orig - FD_STEP;
        let down = f(&xp);
        xp.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Per-operation checks with a random linear readout `L = r . y`.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let (h, w, c, f) = (rng.random_range(3..7), rng.random_range(2..6), rng.random_range(1..3), rng.random_range(1..4));
    let x = random_tensor(&mut rng, &[h, w, c]);
    let k = random_tensor(&mut rng, &[3, 3, c, f]);
    let b = random_tensor(&mut rng, &[f]);
    let r = random_tensor(&mut rng, &[h, w, f]);
    let (dx, dk, db) = conv2d_backward(&x, &k, &r).unwrap();
    let loss = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| dot(conv2d_forward(x, k, b).unwrap().data(), r.data());
    out.push(("conv2d input", check(&x, dx.data(), |v| loss(v, &k, &b))));
    out.push(("conv2d kernel", check(&k, dk.data(), |v| loss(&x, v, &b))));
    out.push(("conv2d bias", check(&b, db.data(), |v| loss(&x, &k, v))));

    let shape = [rng.random_range(4..10), rng.random_range(2..8), 2];
    let x = random_tensor(&mut rng, &shape);
    let (y, arg) = maxpool2d_forward(&x, [3, 3], [3, 3]).unwrap();
    let r = random_tensor(&mut rng, y.shape());
    let dx = maxpool2d_backward(x.shape(), &arg, &r).unwrap();
    out.push((
        "max_pooling2d input",
        check(&x, dx.data(), |v| dot(maxpool2d_forward(v, [3, 3], [3, 3]).unwrap().0.data(), r.data())),
    ));

    let (n, m) = (rng.random_range(2..12), rng.random_range(1..6));
    let x = random_tensor(&mut rng, &[n]);
    let wt = random_tensor(&mut rng, &[n, m]);
    let b = random_tensor(&mut rng, &[m]);
    let r = random_tensor(&mut rng, &[m]);
    let (dx, dw, db) = dense_backward(x.data(), &wt, r.data()).unwrap();
    let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(&dense_forward(x.data(), w, b).unwrap(), r.data());
    out.push(("dense input", check(&x, &dx, |v| loss(v, &wt, &b))));
    out.push(("dense weights", check(&wt, dw.data(), |v| loss(&x, v, &b))));
    out.push(("dense bias", check(&b, db.data(), |v| loss(&x, &wt, v))));

    let z = random_tensor(&mut rng, &[2]).map(|v| 3.0 * v);
    let label = rng.random_range(0..2);
    let (_, dz) = softmax_cross_entropy(z.data(), label);
    out.push(("softmax cross-entropy", check(&z, &dz, |v| softmax_cross_entropy(v.data(), label).0)));
    out
}

/// Same layer types as the reference model on a 12x7 input.
pub fn surrogate_spec() -> ModelSpec {
    let conv = |filters| LayerSpec::Conv2d {
        filters,
        kernel: [3, 3],
        activation: Activation::Relu,
    };
    let pool = LayerSpec::MaxPool2d {
        pool: [3, 3],
        stride: [3, 3],
    };
    ModelSpec {
        input_shape: vec![12, 7, 1],
        layers: vec![
            LayerSpec::Rescale { scale: 0.5 },
            conv(3),
            pool.clone(),
            conv(4),
            pool,
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 6,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                units: 2,
                activation: Activation::Linear,
            },
        ],
    }
}

/// Whole-model check of every parameter under a fixed dropout mask;
/// returns `(layer part, max relative error, max |gradient|)` per
/// parameterized layer.
pub fn model_gradient_errors(seed: u64) -> Vec<(String, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut model = Model::<f64>::new(surrogate_spec(), seed).unwrap();
    // non-zero biases so their gradients are exercised off the origin
    for p in model.params_mut().iter_mut().flatten() {
        for v in p.bias.data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let x = random_tensor(&mut rng, &[12, 7, 1]);
    let label = rng.random_range(0..2);
    let masks = model.sample_dropout_masks(&mut rng);
    let loss = |m: &Model<f64>| softmax_cross_entropy(m.forward_train(&x, &masks).unwrap().logits(), label).0;
    let trace = model.forward_train(&x, &masks).unwrap();
    let (_, dz) = softmax_cross_entropy(trace.logits(), label);
    let grads = model.backward(&trace, &dz).unwrap();

    let mut out = Vec::new();
    for (li, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        let name = model.spec().layers[li].name();
        for (part, analytic) in [("weights", g.weights.data()), ("bias", g.bias.data())] {
            let mut worst: f64 = 0.0;
            let mut probe = model.clone();
            for (i, &orig) in original(&model, li, part).iter().enumerate() {
                set_param(&mut probe, li, part, i, orig + FD_STEP);
                let up = loss(&probe);
                set_param(&mut probe, li, part, i, orig - FD_STEP);
                let down = loss(&probe);
                set_param(&mut probe, li, part, i, orig);
                worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
            }
            let scale = analytic.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            out.push((format!("{name}[{li}] {part}"), worst, scale));
        }
    }
    out
}

fn original(m: &Model<f64>, layer: usize, part: &str) -> Vec<f64> {
    let p = m.params()[layer].as_ref().unwrap();
    if part == "weights" { p.weights.data().to_vec() } else { p.bias.data().to_vec() }
}

fn set_param(m: &mut Model<f64>, layer: usize, part: &str, i: usize, v: f64) {
    let p = m.params_mut()[layer].as_mut().unwrap();
    let d = if part == "weights" { p.weights.data_mut() } else { p.bias.data_mut() };
    d[i] = v;
}

// ---- analyzer oracles ----

use woodpecker::analyzer::design_filter_bank;
use woodpecker::analyzer::{BandFrame, BAND_CENTERS_HZ, DEFAULT_SAMPLE_RATE_HZ, NUM_BANDS};

pub fn sine(freq_hz: f64, amplitude: f64, seconds: f64, rate: u32) -> Vec<f32> {
    let n = (seconds * f64::from(rate)).round() as usize;
    (0..n)
        .map(|i| (amplitude * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / f64::from(rate)).sin()) as f32)
        .collect()
}

/// Mean envelope per band over the last half of a one-second steady sine,
/// read every 10 ms straight from the filter bank.
pub fn steady_envelopes(freq_hz: f64, amplitude: f64) -> [f64; NUM_BANDS] {
    let rate = DEFAULT_SAMPLE_RATE_HZ;
    let mut bank = design_filter_bank(rate, 4.0, 15.0).unwrap();
    let x = sine(freq_hz, amplitude, 1.0, rate);
    let hop = rate as usize / 100;
    let mut acc = [0.0; NUM_BANDS];
    let mut reads = 0;
    for (k, block) in x.chunks(hop).enumerate() {
        bank.process_block(block);
        if k >= 50 {
            for (a, e) in acc.iter_mut().zip(bank.envelopes()) {
                *a += e;
            }
            reads += 1;
        }
    }
    acc.map(|a| a / f64::from(reads))
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap()
}

/// Frequency of maximum steady-state response for each band over a
/// log-spaced 20 Hz to 20 kHz sweep.
pub fn sweep_peaks(points: usize) -> [f64; NUM_BANDS] {
    let (lo, hi) = (20f64.ln(), 20_000f64.ln());
    let mut best = [(0.0f64, 0.0f64); NUM_BANDS];
    for i in 0..points {
        let f = (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp();
        let env = steady_envelopes(f, 1.0);
        for (b, e) in best.iter_mut().zip(env) {
            if e > b.1 {
                *b = (f, e);
            }
        }
    }
    best.map(|b| b.0)
}

/// Relative peak-to-trough depth of band 3 for a 1 kHz carrier gated on and
/// off at 25 Hz, from analyzer frames after a 0.5 s settle.
pub fn modulation_depth(frames: &[BandFrame]) -> f64 {
    let band: Vec<f64> = frames[100..].iter().map(|f| f64::from(f.amplitudes[3])).collect();
    let max = band.iter().cloned().fold(f64::MIN, f64::max);
    let min = band.iter().cloned().fold(f64::MAX, f64::min);
    (max - min) / max
}

pub fn gated_carrier(carrier_hz: f64, gate_hz: f64, seconds: f64) -> Vec<f32> {
    let rate = DEFAULT_SAMPLE_RATE_HZ;
    sine(carrier_hz, 0.8, seconds, rate)
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let phase = (i as f64 * gate_hz / f64::from(rate)).fract();
            if phase < 0.5 { s } else { 0.0 }
        })
        .collect()
}

/// Direct Pearson-style autocorrelation of the band-summed frame series,
/// written independently of the library's periodicity helpers.
pub fn acf_oracle(frames: &[BandFrame], max_lag: usize) -> Vec<f64> {
    let x: Vec<f64> = frames
        .iter()
        .map(|f| f.amplitudes.iter().map(|&a| f64::from(a)).sum())
        .collect();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    (0..=max_lag)
        .map(|k| {
            if var == 0.0 {
                return 0.0;
            }
            let mut s = 0.0;
            for t in k..x.len() {
                s += (x[t] - mean) * (x[t - k] - mean);
            }
            s / var
        })
        .collect()
}

/// `(lag, height)` of the tallest strict local maximum with lag in `range`.
pub fn tallest_peak(acf: &[f64], range: std::ops::RangeInclusive<usize>) -> Option<(usize, f64)> {
    range
        .filter(|&k| k > 0 && k + 1 < acf.len() && acf[k] > acf[k - 1] && acf[k] >= acf[k + 1])
        .map(|k| (k, acf[k]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

pub const CENTERS: [f64; NUM_BANDS] = BAND_CENTERS_HZ;

// ---- annotation fixtures ----

use woodpecker::spectrogram::{file_name_for, save_spectrogram, write_index, BandMatrix, IndexEntry, Label, Spectrogram, SpectrogramMeta};

/// `n` unlabeled spectrograms whose capture times run backwards relative
/// to their ids; returns ids in expected FIFO order.
pub fn unlabeled_dataset(dir: &std::path::Path, n: usize) -> Vec<String> {
    let mut entries = Vec::new();
    for i in 0..n {
        let id = format!("cap-{i:03}");
        let values: Vec<f32> = (0..BandMatrix::ROWS * BandMatrix::COLS)
            .map(|k| ((k * (i + 1)) % 17) as f32 / 17.0 - 0.5)
            .collect();
        let s = Spectrogram {
            values: BandMatrix::from_vec(values).unwrap(),
            meta: SpectrogramMeta {
                id: id.clone(),
                source: format!("capture.wav@{i}s"),
                captured_at: format!("2024-05-01T{:02}:{:02}:00Z", 23 - i / 60, 59 - i % 60),
                label: Label::Unlabeled,
                species_hint: None,
            },
        };
        save_spectrogram(&s, dir).unwrap();
        entries.push(IndexEntry {
            path: file_name_for(&id),
            id,
            label: Label::Unlabeled,
            split: None,
        });
    }
    write_index(dir, &entries).unwrap();
    entries.into_iter().rev().map(|e| e.id).collect()
}
