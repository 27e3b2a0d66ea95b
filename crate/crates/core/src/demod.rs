//! CNN symbol demodulator, its training loop, and a peak-threshold baseline.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::ExecMode;
use crate::nn::{softmax, softmax_cross_entropy, Adam, AdamConfig, Float, Layer, LayerSpec, Network, Tensor};
use crate::preprocess::SegmentDataset;
use crate::testbed::stream;
use crate::{Error, Result};

/// Samples per symbol window the network consumes.
pub const INPUT_LEN: usize = 128;

/// Samples per forward/backward work unit. Batches are cut into chunks of
/// this size whatever the execution mode, which keeps training results
/// independent of thread scheduling.
const CHUNK: usize = 16;

/// Scale applied to the classifier's initial weights so that the untrained
/// network predicts a near-uniform distribution.
const CLASSIFIER_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub alphabet_size: usize,
    pub fc_width: usize,
    pub input_len: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            alphabet_size: 8,
            fc_width: 4096,
            input_len: INPUT_LEN,
        }
    }
}

impl CnnConfig {
    pub fn new(alphabet_size: usize, fc_width: usize) -> Self {
        CnnConfig {
            alphabet_size,
            fc_width,
            input_len: INPUT_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size < 2 {
            return Err(Error::config(format!(
                "alphabet size must be at least 2, got {}",
                self.alphabet_size
            )));
        }
        if self.fc_width < self.alphabet_size {
            return Err(Error::config(format!(
                "fc width {} is narrower than the alphabet ({})",
                self.fc_width, self.alphabet_size
            )));
        }
        if self.input_len != INPUT_LEN {
            return Err(Error::config(format!(
                "input length must be {INPUT_LEN}, got {}",
                self.input_len
            )));
        }
        Ok(())
    }

    /// Three conv/pool stages followed by three fully connected layers.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let fc = self.fc_width;
        let mut specs = Vec::new();
        let mut channels = 1;
        for (out, k) in [(64, 7), (128, 5), (256, 3)] {
            specs.push(LayerSpec::Conv1d {
                in_channels: channels,
                out_channels: out,
                kernel_size: k,
            });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::MaxPool1d);
            channels = out;
        }
        specs.push(LayerSpec::Flatten);
        for fin in [(self.input_len / 8) * channels, fc] {
            specs.push(LayerSpec::Dense {
                in_features: fin,
                out_features: fc,
            });
            specs.push(LayerSpec::Dropout { p: 0.5 });
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::Dense {
            in_features: fc,
            out_features: self.alphabet_size,
        });
        Ok(specs)
    }
}

/// Builds the network with Kaiming-uniform weights (bound `sqrt(6 / fan_in)`)
/// and zero biases; the last layer's weights are additionally scaled down.
pub fn build_network<T: Float, R: Rng + ?Sized>(cfg: &CnnConfig, rng: &mut R) -> Result<Network<T>> {
    let mut net = Network::zeros(&cfg.layer_specs()?)?;
    let last_dense = net
        .layers()
        .iter()
        .rposition(|l| matches!(l, Layer::Dense(_)))
        .expect("stack ends in a dense layer");
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        let weight = match layer {
            Layer::Conv1d(c) => &mut c.weight,
            Layer::Dense(d) => &mut d.weight,
            _ => continue,
        };
        let fan_in: usize = weight.shape()[1..].iter().product();
        let mut bound = (6.0 / fan_in as f64).sqrt();
        if i == last_dense {
            bound *= CLASSIFIER_INIT_SCALE;
        }
        for w in weight.data_mut() {
            *w = T::from_f64_lossy(rng.random_range(-bound..bound));
        }
    }
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Non-improving epochs before the learning rate is decayed.
    pub plateau_patience: usize,
    pub decay_factor: f64,
    /// Non-improving epochs since the last improvement before stopping.
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    /// A validation loss counts as an improvement only if it beats the best
    /// so far by more than this.
    pub improvement_tolerance: f64,
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            optimizer: AdamConfig::default(),
            plateau_patience: 10,
            decay_factor: 0.1,
            early_stop_patience: 20,
            max_epochs: 200,
            improvement_tolerance: 1e-6,
            seed: 0,
            exec: ExecMode::Sequential,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if self.plateau_patience == 0 || self.plateau_patience >= self.early_stop_patience {
            return Err(Error::config(format!(
                "plateau patience ({}) must be positive and below early-stop patience ({})",
                self.plateau_patience, self.early_stop_patience
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::config(format!(
                "decay factor must lie in (0, 1), got {}",
                self.decay_factor
            )));
        }
        if !(self.improvement_tolerance >= 0.0) {
            return Err(Error::config("improvement tolerance must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub network: Network<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

fn check_compatible(net: &Network<f32>, ds: &SegmentDataset) -> Result<()> {
    let shapes = net.shapes(&[ds.segment_len, 1])?;
    match shapes.last().map(Vec::as_slice) {
        Some(&[c]) if c == ds.alphabet_size => Ok(()),
        other => Err(Error::config(format!(
            "network output {other:?} does not match the dataset alphabet of {}",
            ds.alphabet_size
        ))),
    }
}

fn batch_input(ds: &SegmentDataset, rows: &[usize]) -> Result<Tensor<f32>> {
    let len = ds.segment_len;
    let mut data = Vec::with_capacity(rows.len() * len);
    for &r in rows {
        data.extend_from_slice(ds.row(r));
    }
    Tensor::new(vec![rows.len(), len, 1], data)
}

/// Summed cross-entropy over `rows` with dropout off.
fn loss_sum(net: &Network<f32>, ds: &SegmentDataset, rows: &[usize]) -> Result<f64> {
    let logits = net.infer(&batch_input(ds, rows)?)?;
    let c = ds.alphabet_size;
    let mut total = 0.0;
    for (row, &r) in logits.data().chunks_exact(c).zip(rows) {
        let (l, _) = softmax_cross_entropy(row, ds.y[r] as usize)?;
        total += l as f64;
    }
    Ok(total)
}

/// Mean cross-entropy of the network over the given rows (dropout off).
pub fn mean_loss(net: &Network<f32>, ds: &SegmentDataset, rows: &[usize], exec: ExecMode) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::domain("cannot evaluate the loss of an empty row set"));
    }
    check_compatible(net, ds)?;
    let chunks: Vec<&[usize]> = rows.chunks(CHUNK).collect();
    let sums = exec.map(chunks, |chunk| loss_sum(net, ds, chunk));
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    let mean = total / rows.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!("mean loss over {} rows", rows.len())));
    }
    Ok(mean)
}

struct ChunkResult {
    loss: f64,
    grads: Vec<Tensor<f32>>,
}

/// Forward/backward over one chunk. Gradients are of the batch-mean loss,
/// so chunk contributions simply add.
fn chunk_gradients(
    net: &Network<f32>,
    ds: &SegmentDataset,
    rows: &[usize],
    batch_len: usize,
    rng_stream: u64,
    seed: u64,
) -> Result<ChunkResult> {
    let mut rng = stream(seed, rng_stream);
    let (logits, caches) = net.forward_train(&batch_input(ds, rows)?, &mut rng)?;
    let c = ds.alphabet_size;
    let scale = 1.0 / batch_len as f32;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(rows.len() * c);
    for (row, &r) in logits.data().chunks_exact(c).zip(rows) {
        let (l, g) = softmax_cross_entropy(row, ds.y[r] as usize)?;
        loss += l as f64;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    let (_, grads) = net.backward(&caches, &Tensor::new(vec![rows.len(), c], grad)?)?;
    Ok(ChunkResult { loss, grads })
}

/// Trains with Adam on the dataset's train split, tracking the loss on its
/// validation split to drive learning-rate decay, early stopping, and
/// checkpoint selection.
pub fn train(mut net: Network<f32>, ds: &SegmentDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.validate()?;
    check_compatible(&net, ds)?;
    if ds.split.train.is_empty() || ds.split.val.is_empty() {
        return Err(Error::config("training needs non-empty train and validation splits"));
    }
    let mut adam = Adam::new(cfg.optimizer, &net.params())?;
    let mut order = ds.split.train.clone();
    let mut history = Vec::new();
    let mut best = (net.clone(), f64::INFINITY, 0usize);
    let mut since_improvement = 0;
    let mut plateau = 0;

    for epoch in 1..=cfg.max_epochs {
        let lr = adam.config.learning_rate;
        // Stream 0 of the per-epoch family shuffles; the rest drive dropout.
        let epoch_seed = cfg.seed.wrapping_add(epoch as u64);
        order.shuffle(&mut stream(epoch_seed, 0));
        let mut train_total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let chunks: Vec<(usize, &[usize])> = batch.chunks(CHUNK).enumerate().collect();
            let chunks_per_batch = cfg.batch_size.div_ceil(CHUNK);
            let results = cfg.exec.map(chunks, |(k, rows)| {
                let id = 1 + (b * chunks_per_batch + k) as u64;
                chunk_gradients(&net, ds, rows, batch.len(), id, epoch_seed)
            });
            let mut sum: Option<Vec<Tensor<f32>>> = None;
            for r in results {
                let r = r?;
                train_total += r.loss;
                match sum.as_mut() {
                    None => sum = Some(r.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&r.grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let grads = sum.expect("batches are non-empty");
            adam.step(&mut net.params_mut(), &grads).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {what}")),
                other => other,
            })?;
        }
        let train_loss = train_total / order.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
        }
        let val_loss = mean_loss(&net, ds, &ds.split.val, cfg.exec).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite(format!("validation loss in epoch {epoch}")),
            other => other,
        })?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
        });

        if val_loss < best.1 - cfg.improvement_tolerance {
            best = (net.clone(), val_loss, epoch);
            since_improvement = 0;
            plateau = 0;
        } else {
            since_improvement += 1;
            plateau += 1;
            if since_improvement >= cfg.early_stop_patience {
                break;
            }
            if plateau >= cfg.plateau_patience {
                adam.config.learning_rate *= cfg.decay_factor;
                plateau = 0;
            }
        }
    }

    let (network, best_val_loss, best_epoch) = best;
    Ok(TrainOutcome {
        network,
        history,
        best_epoch,
        best_val_loss,
    })
}

pub fn write_history<W: Write>(out: W, history: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.train_loss.to_string(),
            h.val_loss.to_string(),
            h.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class and class probabilities for one segment, dropout off.
pub fn predict(net: &Network<f32>, segment: &[f32]) -> Result<(usize, Vec<f32>)> {
    if segment.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("segment contains non-finite values"));
    }
    net.shapes(&[segment.len(), 1])?;
    let logits = net.infer(&Tensor::new(vec![1, segment.len(), 1], segment.to_vec())?)?;
    let probs = softmax(logits.data());
    Ok((argmax(&probs), probs))
}

/// Predicted labels for the given dataset rows.
pub fn predict_rows(net: &Network<f32>, ds: &SegmentDataset, rows: &[usize], exec: ExecMode) -> Result<Vec<u8>> {
    check_compatible(net, ds)?;
    let chunks: Vec<&[usize]> = rows.chunks(CHUNK).collect();
    let c = ds.alphabet_size;
    let parts = exec.map(chunks, |chunk| -> Result<Vec<u8>> {
        let logits = net.infer(&batch_input(ds, chunk)?)?;
        Ok(logits.data().chunks_exact(c).map(|l| argmax(l) as u8).collect())
    });
    let mut out = Vec::with_capacity(rows.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Classifies a segment by its maximum: the class whose mean training
/// maximum is nearest wins, ties to the lower class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBaseline {
    pub means: Vec<f64>,
}

impl ThresholdBaseline {
    pub fn fit(ds: &SegmentDataset) -> Result<Self> {
        let c = ds.alphabet_size;
        let mut sums = vec![0.0; c];
        let mut counts = vec![0usize; c];
        for &r in &ds.split.train {
            let label = ds.y[r] as usize;
            sums[label] += segment_max(ds.row(r));
            counts[label] += 1;
        }
        if let Some(missing) = counts.iter().position(|&n| n == 0) {
            return Err(Error::config(format!("class {missing} is absent from the train split")));
        }
        Ok(ThresholdBaseline {
            means: sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect(),
        })
    }

    pub fn predict(&self, segment: &[f32]) -> usize {
        let peak = segment_max(segment);
        let mut best = 0;
        for (i, m) in self.means.iter().enumerate() {
            if (peak - m).abs() < (peak - self.means[best]).abs() {
                best = i;
            }
        }
        best
    }

    pub fn predict_rows(&self, ds: &SegmentDataset, rows: &[usize]) -> Vec<u8> {
        rows.iter().map(|&r| self.predict(ds.row(r)) as u8).collect()
    }
}

fn segment_max(segment: &[f32]) -> f64 {
    segment.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64))
}
