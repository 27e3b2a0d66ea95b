use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    normalize, onset_delay_samples, resample_uniform, resize_segment, segment, smooth, Boundaries, PreprocessConfig,
    SegmentMode, SlopeDetector, SplitRatios, SEGMENT_LEN,
};
use crate::testbed::Transmission;
use crate::{Error, Result};

pub const HEADER_FILE: &str = "header.json";
pub const DATA_FILE: &str = "data.f32";
pub const LABELS_FILE: &str = "labels.u8";

/// Disjoint train/validation/test index sets covering `[0, n)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::format(format!("split index {i} out of range for {n} rows")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::format(format!("row {i} appears in more than one split")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::format(format!("row {missing} is not assigned to any split")));
        }
        Ok(())
    }
}

/// Fixed-length labeled symbol windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDataset {
    /// Row-major `n x segment_len`, values in `[0, 1]`.
    pub x: Vec<f32>,
    pub y: Vec<u8>,
    pub alphabet_size: usize,
    pub segment_len: usize,
    pub split: Split,
    /// Free-form description of how the rows were produced.
    pub provenance: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    n: usize,
    len: usize,
    alphabet: usize,
    split: Split,
    #[serde(default)]
    provenance: serde_json::Value,
}

impl SegmentDataset {
    pub fn new(
        x: Vec<f32>,
        y: Vec<u8>,
        alphabet_size: usize,
        split: Split,
        provenance: serde_json::Value,
    ) -> Result<Self> {
        let ds = SegmentDataset {
            x,
            y,
            alphabet_size,
            segment_len: SEGMENT_LEN,
            split,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.x[i * self.segment_len..(i + 1) * self.segment_len]
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.alphabet_size) {
            return Err(Error::format(format!(
                "alphabet size {} outside [2, 256]",
                self.alphabet_size
            )));
        }
        if self.segment_len != SEGMENT_LEN {
            return Err(Error::format(format!(
                "segment length must be {SEGMENT_LEN}, got {}",
                self.segment_len
            )));
        }
        let expected = self
            .y
            .len()
            .checked_mul(self.segment_len)
            .ok_or_else(|| Error::format("row count overflows"))?;
        if self.x.len() != expected {
            return Err(Error::format(format!(
                "{} values for {} rows of {}",
                self.x.len(),
                self.y.len(),
                self.segment_len
            )));
        }
        if let Some(&bad) = self.y.iter().find(|&&l| l as usize >= self.alphabet_size) {
            return Err(Error::format(format!(
                "label {bad} outside alphabet of size {}",
                self.alphabet_size
            )));
        }
        if self.x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format("segment values must lie in [0, 1]"));
        }
        self.split.validate(self.y.len())
    }

    /// Symbol rate recorded by [`build_dataset`], if any.
    pub fn symbol_rate(&self) -> Option<f64> {
        self.provenance
            .pointer("/sim/modulation/symbol_rate")
            .and_then(|v| v.as_f64())
    }

    /// Scenario label such as `C8_4Hz`.
    pub fn scenario(&self) -> String {
        match self.symbol_rate() {
            Some(rate) => format!("C{}_{}Hz", self.alphabet_size, rate),
            None => format!("C{}", self.alphabet_size),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = Header {
            n: self.len(),
            len: self.segment_len,
            alphabet: self.alphabet_size,
            split: self.split.clone(),
            provenance: self.provenance.clone(),
        };
        fs::write(dir.join(HEADER_FILE), serde_json::to_vec_pretty(&header)?)?;
        let mut bytes = Vec::with_capacity(self.x.len() * 4);
        for v in &self.x {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(DATA_FILE), bytes)?;
        fs::write(dir.join(LABELS_FILE), &self.y)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header = fs::read(dir.join(HEADER_FILE))?;
        let data = fs::read(dir.join(DATA_FILE))?;
        let labels = fs::read(dir.join(LABELS_FILE))?;
        SegmentDataset::from_parts(&header, &data, &labels)
    }

    /// Decodes the three on-disk files from memory.
    pub fn from_parts(header: &[u8], data: &[u8], labels: &[u8]) -> Result<Self> {
        let header: Header = serde_json::from_slice(header)?;
        if header.len != SEGMENT_LEN {
            return Err(Error::format(format!(
                "header declares segment length {}, expected {SEGMENT_LEN}",
                header.len
            )));
        }
        if labels.len() != header.n {
            return Err(Error::format(format!(
                "header declares {} rows but labels file has {}",
                header.n,
                labels.len()
            )));
        }
        let expected = header
            .n
            .checked_mul(header.len)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::format("declared size overflows"))?;
        if data.len() != expected {
            return Err(Error::format(format!(
                "data file has {} bytes, expected {expected}",
                data.len()
            )));
        }
        let x = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let ds = SegmentDataset {
            x,
            y: labels.to_vec(),
            alphabet_size: header.alphabet,
            segment_len: header.len,
            split: header.split,
            provenance: header.provenance,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Largest-remainder apportionment of `target` items over classes with
/// ideal shares `ideal`, never exceeding `capacity`.
fn apportion(ideal: &[f64], capacity: &[usize], target: usize) -> Vec<usize> {
    let mut out: Vec<usize> = ideal
        .iter()
        .zip(capacity)
        .map(|(&q, &cap)| (q.floor().max(0.0) as usize).min(cap))
        .collect();
    let mut assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..ideal.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    while assigned < target {
        let mut progressed = false;
        for &c in &order {
            if assigned == target {
                break;
            }
            if out[c] < capacity[c] {
                out[c] += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    out
}

/// Stratified split: every class is divided in the given ratios (largest
/// remainder rounding so the overall sizes are `round(ratio * n)`), and every
/// class with at least three members appears in all three parts.
pub fn stratified_split(labels: &[u8], alphabet_size: usize, ratios: &SplitRatios, seed: u64) -> Result<Split> {
    ratios.validate()?;
    let n = labels.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); alphabet_size];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= alphabet_size {
            return Err(Error::format(format!(
                "label {l} outside alphabet of size {alphabet_size}"
            )));
        }
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();

    let n_train = (ratios.train * n as f64).round() as usize;
    let n_val = ((ratios.val * n as f64).round() as usize).min(n - n_train);
    let ideal_train: Vec<f64> = counts.iter().map(|&c| ratios.train * c as f64).collect();
    let mut train = apportion(&ideal_train, &counts, n_train);
    let rest: Vec<usize> = counts.iter().zip(&train).map(|(c, t)| c - t).collect();
    let val_share = ratios.val / (ratios.val + ratios.test);
    let ideal_val: Vec<f64> = rest.iter().map(|&r| val_share * r as f64).collect();
    let mut val = apportion(&ideal_val, &rest, n_val);
    let mut test: Vec<usize> = rest.iter().zip(&val).map(|(r, v)| r - v).collect();

    for c in 0..alphabet_size {
        if counts[c] < 3 {
            continue;
        }
        for part in [&mut val, &mut test] {
            if part[c] == 0 && train[c] > 1 {
                train[c] -= 1;
                part[c] += 1;
            }
        }
        if val[c] == 0 && test[c] > 1 {
            test[c] -= 1;
            val[c] += 1;
        }
        if test[c] == 0 && val[c] > 1 {
            val[c] -= 1;
            test[c] += 1;
        }
    }

    let mut split = Split::default();
    for (c, members) in by_class.iter().enumerate() {
        let (tr, rem) = members.split_at(train[c]);
        let (va, te) = rem.split_at(val[c]);
        debug_assert_eq!(te.len(), test[c]);
        split.train.extend_from_slice(tr);
        split.val.extend_from_slice(va);
        split.test.extend_from_slice(te);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Result of running the front-end over a corpus.
#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub dataset: SegmentDataset,
    /// Segment start indices chosen for each transmission.
    pub starts: Vec<Vec<usize>>,
    /// Ground-truth start indices, for comparing slope mode against truth.
    pub true_starts: Vec<Vec<usize>>,
    /// Transmissions where slope mode found no onset at all.
    pub fallbacks: usize,
}

impl BuiltDataset {
    /// Largest |chosen - true| segment start offset, in samples.
    pub fn max_boundary_error(&self) -> usize {
        self.starts
            .iter()
            .zip(&self.true_starts)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)))
            .max()
            .unwrap_or(0)
    }
}

/// resample -> smooth -> normalize -> segment -> resize for every
/// transmission, followed by a stratified split.
pub fn build_dataset(
    transmissions: &[Transmission],
    mode: SegmentMode,
    cfg: &PreprocessConfig,
    split_seed: u64,
) -> Result<BuiltDataset> {
    cfg.validate()?;
    let first = transmissions
        .first()
        .ok_or_else(|| Error::config("no transmissions to preprocess"))?;
    if let Some(other) = transmissions.iter().find(|t| !t.config.same_scenario(&first.config)) {
        return Err(Error::config(format!(
            "mixed configurations: C={} at {} Hz vs C={} at {} Hz",
            first.config.modulation.alphabet_size,
            first.config.modulation.symbol_rate,
            other.config.modulation.alphabet_size,
            other.config.modulation.symbol_rate
        )));
    }
    let m = first.config.modulation;

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut starts = Vec::with_capacity(transmissions.len());
    let mut true_starts = Vec::with_capacity(transmissions.len());
    let mut fallbacks = 0;
    for t in transmissions {
        t.validate()?;
        let series = resample_uniform(&t.times, &t.values, m.sample_rate)?;
        let series = normalize(&smooth(&series, cfg.smoothing_width)?);
        let boundaries = match mode {
            SegmentMode::Oracle => Boundaries::Oracle(&t.boundaries),
            SegmentMode::Slope => Boundaries::Slope(SlopeDetector {
                threshold: cfg.slope_threshold,
                min_separation: cfg.min_onset_separation,
                onset_delay: onset_delay_samples(&t.config.channel, m.sample_rate, cfg.smoothing_width)?,
                leading_margin: cfg.smoothing_width,
            }),
        };
        let seg = segment(&series, m.symbol_rate, t.n_symbols(), boundaries)?;
        if seg.fallback {
            fallbacks += 1;
        }
        for s in &seg.segments {
            x.extend(
                resize_segment(&s.values, cfg.segment_len)?
                    .into_iter()
                    .map(|v| v as f32),
            );
        }
        y.extend_from_slice(&t.symbols);
        starts.push(seg.starts());
        true_starts.push(
            t.boundaries
                .iter()
                .map(|b| ((b - series.start_time) * m.sample_rate).round().max(0.0) as usize)
                .collect(),
        );
    }

    let split = stratified_split(&y, m.alphabet_size, &cfg.split, split_seed)?;
    let mut sim = serde_json::to_value(first.config)?;
    if let Some(obj) = sim.as_object_mut() {
        obj.remove("index");
    }
    let provenance = serde_json::json!({
        "sim": sim,
        "transmissions": transmissions.len(),
        "mode": mode,
        "preprocess": cfg,
        "split_seed": split_seed,
    });
    let dataset = SegmentDataset::new(x, y, m.alphabet_size, split, provenance)?;
    Ok(BuiltDataset {
        dataset,
        starts,
        true_starts,
        fallbacks,
    })
}
