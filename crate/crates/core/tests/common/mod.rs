//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use molcom::nn::{softmax_cross_entropy_batch, Conv1d, Dense, Layer, Network, Tensor};
use molcom::testbed::stream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (1e-8f64).max(a.abs() + n.abs())
}

fn uniform(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `sum(weights * layer(x))` with the layer's randomness pinned to `seed`,
/// so dropout masks are the same on every evaluation.
fn projected(layer: &Layer<f64>, x: &Tensor<f64>, weights: &Tensor<f64>, seed: u64) -> f64 {
    let mut rng = stream(seed, 0);
    let (y, _) = layer.forward(x, Some(&mut rng)).unwrap();
    y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Largest relative error between the analytic gradient of one layer and
/// central differences, over every input element and every parameter.
pub fn layer_grad_error(layer: &Layer<f64>, x: &Tensor<f64>, seed: u64) -> f64 {
    let mut rng = stream(seed, 1);
    let (y, cache) = layer.forward(x, Some(&mut stream(seed, 0))).unwrap();
    let weights = uniform(y.shape().to_vec(), &mut rng);
    let (gx, gparams) = layer.backward(Some(&cache), &weights).unwrap();

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut up = x.clone();
        up.data_mut()[i] += FD_STEP;
        let mut down = x.clone();
        down.data_mut()[i] -= FD_STEP;
        let n = (projected(layer, &up, &weights, seed) - projected(layer, &down, &weights, seed)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(gx.data()[i], n));
    }
    for (p, g) in gparams.iter().enumerate() {
        for i in 0..g.len() {
            let perturbed = |delta: f64| {
                let mut l = layer.clone();
                l.params_mut()[p].data_mut()[i] += delta;
                projected(&l, x, &weights, seed)
            };
            let n = (perturbed(FD_STEP) - perturbed(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[i], n));
        }
    }
    worst
}

/// Values bounded away from zero, so ReLU kinks lie outside the step.
fn away_from_zero(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced far wider than the step, so pooling winners do
/// not change under perturbation.
fn well_separated(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.5).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).unwrap()
}

pub const LAYER_KINDS: [&str; 6] = ["conv1d", "maxpool1d", "relu", "dropout", "flatten", "dense"];

/// A random small instance of a layer type and an input for it.
pub fn random_case(kind: &str, seed: u64) -> (Layer<f64>, Tensor<f64>) {
    let mut rng = stream(seed, 7);
    let batch = rng.random_range(1..=3);
    let len = 2 * rng.random_range(1..=5);
    let c = rng.random_range(1..=4);
    match kind {
        "conv1d" => {
            let cout = rng.random_range(1..=4);
            let k = [1, 3, 5, 7][rng.random_range(0..4)];
            let layer = Layer::Conv1d(Conv1d {
                weight: uniform(vec![cout, c, k], &mut rng),
                bias: uniform(vec![cout], &mut rng),
            });
            (layer, uniform(vec![batch, len, c], &mut rng))
        }
        "maxpool1d" => (Layer::MaxPool1d, well_separated(vec![batch, len, c], &mut rng)),
        "relu" => (Layer::Relu, away_from_zero(vec![batch, len, c], &mut rng)),
        "dropout" => (
            Layer::Dropout(rng.random_range(0.1..0.8)),
            uniform(vec![batch, len, c], &mut rng),
        ),
        "flatten" => (Layer::Flatten, uniform(vec![batch, len, c], &mut rng)),
        "dense" => {
            let fin = rng.random_range(1..=12);
            let fout = rng.random_range(1..=6);
            let layer = Layer::Dense(Dense {
                weight: uniform(vec![fout, fin], &mut rng),
                bias: uniform(vec![fout], &mut rng),
            });
            (layer, uniform(vec![batch, fin], &mut rng))
        }
        other => panic!("unknown layer kind {other}"),
    }
}

/// Worst relative gradient error per layer type over `configs` random cases.
pub fn gradient_report(configs: u64) -> Vec<(&'static str, f64)> {
    LAYER_KINDS
        .iter()
        .map(|&kind| {
            let worst = (0..configs)
                .map(|s| {
                    let (layer, x) = random_case(kind, 1000 + s);
                    layer_grad_error(&layer, &x, 1000 + s)
                })
                .fold(0.0, f64::max);
            (kind, worst)
        })
        .collect()
}

/// Cross-entropy of a whole network with its dropout masks pinned.
fn network_loss(net: &Network<f64>, x: &Tensor<f64>, labels: &[u8], seed: u64) -> f64 {
    let (logits, _) = net.forward_train(x, &mut stream(seed, 0)).unwrap();
    softmax_cross_entropy_batch(&logits, labels).unwrap().0
}

/// Gradient check of a full network (conv, pool, dense, dropout) under the
/// softmax cross-entropy loss, over every parameter.
pub fn network_grad_error(net: &Network<f64>, x: &Tensor<f64>, labels: &[u8], seed: u64) -> f64 {
    let (logits, caches) = net.forward_train(x, &mut stream(seed, 0)).unwrap();
    let (_, g) = softmax_cross_entropy_batch(&logits, labels).unwrap();
    let (_, grads) = net.backward(&caches, &g).unwrap();
    let mut worst: f64 = 0.0;
    for (p, grad) in grads.iter().enumerate() {
        for i in 0..grad.len() {
            let perturbed = |delta: f64| {
                let mut n = net.clone();
                n.params_mut()[p].data_mut()[i] += delta;
                network_loss(&n, x, labels, seed)
            };
            let numeric = (perturbed(FD_STEP) - perturbed(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad.data()[i], numeric));
        }
    }
    worst
}

/// Direct evaluation of the convolution definition.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (batch, len, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k as isize - 1) / 2;
    let mut out = Tensor::zeros(vec![batch, len, cout]);
    for bi in 0..batch {
        for pos in 0..len {
            for co in 0..cout {
                let mut acc = b.data()[co];
                for ci in 0..cin {
                    for tap in 0..k {
                        let src = pos as isize + tap as isize - pad;
                        if src >= 0 && (src as usize) < len {
                            acc += w.data()[(co * cin + ci) * k + tap] * x.data()[(bi * len + src as usize) * cin + ci];
                        }
                    }
                }
                out.data_mut()[(bi * len + pos) * cout + co] = acc;
            }
        }
    }
    out
}

/// Parameter count of the reference architecture, tallied layer by layer
/// from its declared shapes.
pub fn reference_param_count(fc: usize, classes: usize) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k + cout;
    let dense = |fin: usize, fout: usize| fout * fin + fout;
    conv(1, 64, 7) + conv(64, 128, 5) + conv(128, 256, 3) + dense(16 * 256, fc) + dense(fc, fc) + dense(fc, classes)
}

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

/// `erfc(z) = 2/sqrt(pi) * integral_z^inf exp(-t^2) dt`, by composite
/// Simpson quadrature truncated at 10 (tail below 1e-40).
pub fn erfc_quadrature(z: f64) -> f64 {
    if z < 0.0 {
        return 2.0 - erfc_quadrature(-z);
    }
    let upper = 10.0f64.max(z);
    let n = 20_000;
    let h = (upper - z) / n as f64;
    let f = |t: f64| (-t * t).exp();
    let mut s = f(z) + f(upper);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(z + i as f64 * h);
    }
    2.0 / std::f64::consts::PI.sqrt() * s * h / 3.0
}

fn is_number_array(v: &serde_json::Value) -> bool {
    v.as_array()
        .is_some_and(|a| a.iter().all(|x| x.as_f64().is_some_and(f64::is_finite)))
}

/// Checks one `transmissions.jsonl` line against the documented record
/// layout without going through the library's own types.
pub fn check_transmission_record(line: &str) -> Result<(), String> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("record is not an object")?;
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    if keys != ["boundaries_s", "config", "symbols", "t_s", "v"] {
        return Err(format!("unexpected fields {keys:?}"));
    }
    let config = obj["config"].as_object().ok_or("config is not an object")?;
    for key in ["modulation", "channel", "noise", "seed"] {
        if !config.contains_key(key) {
            return Err(format!("config lacks {key}"));
        }
    }
    let alphabet = config["modulation"]["alphabet_size"]
        .as_u64()
        .ok_or("alphabet_size missing")?;
    let symbols = obj["symbols"].as_array().ok_or("symbols is not an array")?;
    if symbols.is_empty() || !symbols.iter().all(|s| s.as_u64().is_some_and(|s| s < alphabet)) {
        return Err("symbols must be integers below the alphabet size".into());
    }
    for key in ["boundaries_s", "t_s", "v"] {
        if !is_number_array(&obj[key]) {
            return Err(format!("{key} is not an array of finite numbers"));
        }
    }
    let n = |key: &str| obj[key].as_array().map_or(0, Vec::len);
    if n("boundaries_s") != symbols.len() || n("t_s") != n("v") {
        return Err("array lengths disagree".into());
    }
    Ok(())
}

/// Checks `header.json`, `data.f32` and `labels.u8` in `dir` against the
/// documented on-disk layout.
pub fn check_segment_files(dir: &std::path::Path) -> Result<(), String> {
    let read = |name: &str| std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let header: serde_json::Value = serde_json::from_slice(&read("header.json")?).map_err(|e| e.to_string())?;
    let n = header["n"].as_u64().ok_or("n missing")? as usize;
    let len = header["len"].as_u64().ok_or("len missing")? as usize;
    let alphabet = header["alphabet"].as_u64().ok_or("alphabet missing")?;
    if len != 128 {
        return Err(format!("len {len}"));
    }
    if header.get("provenance").is_none() {
        return Err("provenance missing".into());
    }
    let mut seen = vec![false; n];
    for part in ["train", "val", "test"] {
        let idx = header["split"][part]
            .as_array()
            .ok_or(format!("split.{part} missing"))?;
        for i in idx {
            let i = i.as_u64().ok_or("split index is not an integer")? as usize;
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(format!("bad split index {i}"));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err("split does not cover every row".into());
    }
    let data = read("data.f32")?;
    if data.len() != n * len * 4 {
        return Err(format!("data.f32 has {} bytes, expected {}", data.len(), n * len * 4));
    }
    let in_range = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .all(|v| (0.0..=1.0).contains(&v));
    if !in_range {
        return Err("data.f32 holds values outside [0, 1]".into());
    }
    let labels = read("labels.u8")?;
    if labels.len() != n || labels.iter().any(|&l| u64::from(l) >= alphabet) {
        return Err("labels.u8 does not match the header".into());
    }
    Ok(())
}
