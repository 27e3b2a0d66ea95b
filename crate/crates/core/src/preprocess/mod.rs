//! Receiver front-end: uniform resampling, moving-average smoothing,
//! min-max normalization, symbol segmentation and fixed-length resizing.

mod dataset;

pub use dataset::{
    build_dataset, stratified_split, BuiltDataset, SegmentDataset, Split, DATA_FILE, HEADER_FILE, LABELS_FILE,
};

use serde::{Deserialize, Serialize};

use crate::channel::{hitting_density, ChannelParams};
use crate::{Error, Result};

/// Length of every classifier input window.
pub const SEGMENT_LEN: usize = 128;

/// A signal on a uniform clock: sample `i` sits at
/// `start_time + i / sample_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    pub start_time: f64,
    pub sample_rate: f64,
    pub values: Vec<f64>,
}

impl UniformSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_of(&self, index: usize) -> f64 {
        self.start_time + index as f64 / self.sample_rate
    }

    fn with_values(&self, values: Vec<f64>) -> UniformSeries {
        UniformSeries {
            start_time: self.start_time,
            sample_rate: self.sample_rate,
            values,
        }
    }
}

/// Linear interpolation of `(times, values)` onto a uniform grid starting at
/// the first timestamp. The grid never extends past the last timestamp.
pub fn resample_uniform(times: &[f64], values: &[f64], target_rate: f64) -> Result<UniformSeries> {
    if times.len() != values.len() {
        return Err(Error::shape(format!(
            "{} timestamps for {} values",
            times.len(),
            values.len()
        )));
    }
    if times.len() < 2 {
        return Err(Error::domain("resampling needs at least two samples"));
    }
    if !(target_rate > 0.0) || !target_rate.is_finite() {
        return Err(Error::domain(format!(
            "target rate must be positive, got {target_rate}"
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("sample times must be strictly increasing"));
    }
    let start = times[0];
    let last = times[times.len() - 1];
    // Tolerate rounding so a grid point landing on `last` is kept.
    let n = ((last - start) * target_rate + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let t = (start + i as f64 / target_rate).min(last);
        while k + 2 < times.len() && times[k + 1] < t {
            k += 1;
        }
        let (t0, t1) = (times[k], times[k + 1]);
        let (v0, v1) = (values[k], values[k + 1]);
        let v = if t == t0 {
            v0
        } else if t == t1 {
            v1
        } else {
            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        };
        out.push(v);
    }
    Ok(UniformSeries {
        start_time: start,
        sample_rate: target_rate,
        values: out,
    })
}

/// Centered moving average. Sample `i` averages indices
/// `[i - (w-1)/2, i + ceil((w-1)/2)]` clipped to the series, dividing by the
/// number of samples actually inside the window.
pub fn smooth(series: &UniformSeries, width: usize) -> Result<UniformSeries> {
    if width == 0 {
        return Err(Error::domain("smoothing width must be at least 1"));
    }
    if series.is_empty() {
        return Err(Error::domain("cannot smooth an empty series"));
    }
    let n = series.len();
    let before = (width - 1) / 2;
    let after = width - 1 - before;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in &series.values {
        acc += v;
        prefix.push(acc);
    }
    let values = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(n - 1);
            if width == 1 {
                series.values[i]
            } else {
                (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
            }
        })
        .collect();
    Ok(series.with_values(values))
}

/// Min-max scaling to `[0, 1]`; a constant series maps to all zeros.
pub fn normalize(series: &UniformSeries) -> UniformSeries {
    let (lo, hi) = series
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let values = if !(span > 0.0) {
        vec![0.0; series.len()]
    } else {
        series
            .values
            .iter()
            .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect()
    };
    series.with_values(values)
}

/// Linear interpolation of `values` onto `len` evenly spaced points with
/// both endpoints preserved.
pub fn resize_segment(values: &[f64], len: usize) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::domain(format!(
            "segment needs at least two samples, got {}",
            values.len()
        )));
    }
    if len < 2 {
        return Err(Error::domain(format!("target length must be at least 2, got {len}")));
    }
    if values.len() == len {
        return Ok(values.to_vec());
    }
    let scale = (values.len() - 1) as f64 / (len - 1) as f64;
    Ok((0..len)
        .map(|i| {
            let pos = i as f64 * scale;
            let k = (pos.floor() as usize).min(values.len() - 2);
            let frac = pos - k as f64;
            if frac == 0.0 {
                values[k]
            } else {
                values[k] + (values[k + 1] - values[k]) * frac
            }
        })
        .collect())
}

/// How symbol boundaries are located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    /// Rising-edge detection on the signal slope.
    Slope,
    /// Ground-truth boundaries from the transmitter.
    Oracle,
}

impl std::str::FromStr for SegmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slope" => Ok(SegmentMode::Slope),
            "oracle" => Ok(SegmentMode::Oracle),
            other => Err(Error::config(format!("unknown segmentation mode `{other}`"))),
        }
    }
}

/// Slope detector settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeDetector {
    /// Fraction of the largest first difference an edge must exceed.
    pub threshold: f64,
    /// Minimum spacing between onsets, in symbol periods.
    pub min_separation: f64,
    /// Samples between a symbol boundary and the steepest point of its
    /// rising edge, see [`onset_delay_samples`].
    pub onset_delay: f64,
    /// Edges closer than this to the start of the series are ignored: the
    /// truncated smoothing window there shifts them. Usually the smoothing
    /// width.
    pub leading_margin: usize,
}

pub enum Boundaries<'a> {
    Slope(SlopeDetector),
    Oracle(&'a [f64]),
}

/// One symbol window of a segmented series.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    /// Number of symbols whose onset was found directly (slope mode).
    pub detected: usize,
    /// Slope mode found no onset at all and fell back to a grid anchored at
    /// the start of the series.
    pub fallback: bool,
}

impl Segmentation {
    pub fn starts(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.start).collect()
    }
}

/// Splits `series` into exactly `n_symbols` windows of one nominal symbol
/// period (`round(sample_rate / symbol_rate)` samples) each.
///
/// Slope mode treats every upward crossing of `threshold * max(first
/// difference)` as a symbol onset, localizes it at the steepest point of that
/// edge and subtracts the channel's onset delay. Onsets closer than
/// `min_separation` periods to the previous one are ignored. Symbols too weak
/// to produce an edge are placed on the nominal grid projected from the
/// nearest detected onset.
pub fn segment(
    series: &UniformSeries,
    symbol_rate: f64,
    n_symbols: usize,
    boundaries: Boundaries<'_>,
) -> Result<Segmentation> {
    if n_symbols == 0 {
        return Err(Error::domain("n_symbols must be at least 1"));
    }
    if !(symbol_rate > 0.0) {
        return Err(Error::domain(format!(
            "symbol rate must be positive, got {symbol_rate}"
        )));
    }
    let seg_len = (series.sample_rate / symbol_rate).round() as usize;
    if seg_len < 2 {
        return Err(Error::domain("symbol period shorter than two samples"));
    }
    let period_samples = series.sample_rate / symbol_rate;
    let needed = ((n_symbols - 1) as f64 * period_samples).round() as usize + seg_len;
    if series.len() < needed {
        return Err(Error::domain(format!(
            "series of {} samples cannot hold {n_symbols} symbols of {seg_len} samples",
            series.len()
        )));
    }

    let (starts_f, detected, fallback) = match boundaries {
        Boundaries::Oracle(b) => {
            if b.len() != n_symbols {
                return Err(Error::shape(format!(
                    "{} oracle boundaries for {n_symbols} symbols",
                    b.len()
                )));
            }
            let starts = b
                .iter()
                .map(|&t| (t - series.start_time) * series.sample_rate)
                .collect::<Vec<_>>();
            (starts, n_symbols, false)
        }
        Boundaries::Slope(det) => slope_starts(series, period_samples, n_symbols, &det),
    };

    let max_start = series.len() - seg_len;
    let segments = starts_f
        .into_iter()
        .map(|s| {
            let start = (s.round().max(0.0) as usize).min(max_start);
            Segment {
                start,
                values: series.values[start..start + seg_len].to_vec(),
            }
        })
        .collect();
    Ok(Segmentation {
        segments,
        detected,
        fallback,
    })
}

/// First difference `d[i] = x[i] - x[i-1]`, with `d[0] = 0`.
fn first_difference(values: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; values.len()];
    for i in 1..values.len() {
        d[i] = values[i] - values[i - 1];
    }
    d
}

/// Indices of the steepest sample of every qualifying rising edge.
fn rising_edges(values: &[f64], threshold: f64, min_gap: f64) -> Vec<usize> {
    let d = first_difference(values);
    let peak = d.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Vec::new();
    }
    let level = threshold * peak;
    let mut edges: Vec<usize> = Vec::new();
    let mut i = 1;
    while i < d.len() {
        if d[i] > level && d[i - 1] <= level {
            let mut best = i;
            let mut j = i;
            while j < d.len() && d[j] > level {
                if d[j] > d[best] {
                    best = j;
                }
                j += 1;
            }
            let crossing = i;
            let far_enough = edges
                .last()
                .is_none_or(|&prev| (crossing as f64) - (prev as f64) >= min_gap);
            if far_enough {
                edges.push(best);
            }
            i = j;
        } else {
            i += 1;
        }
    }
    edges
}

fn slope_starts(series: &UniformSeries, period: f64, n_symbols: usize, det: &SlopeDetector) -> (Vec<f64>, usize, bool) {
    let edges = rising_edges(&series.values, det.threshold, det.min_separation * period);
    let mut slots: Vec<Option<f64>> = vec![None; n_symbols];
    for e in edges.into_iter().filter(|&e| e >= det.leading_margin) {
        let start = e as f64 - det.onset_delay;
        let slot = (start / period).round();
        if slot < 0.0 || slot >= n_symbols as f64 {
            continue;
        }
        let slot = slot as usize;
        if slots[slot].is_none() {
            slots[slot] = Some(start);
        }
    }
    let detected: Vec<usize> = (0..n_symbols).filter(|&j| slots[j].is_some()).collect();
    if detected.is_empty() {
        let grid = (0..n_symbols).map(|j| j as f64 * period).collect();
        return (grid, 0, true);
    }
    let starts = (0..n_symbols)
        .map(|j| match slots[j] {
            Some(s) => s,
            None => {
                let nearest = *detected
                    .iter()
                    .min_by_key(|&&k| (k as isize - j as isize).unsigned_abs())
                    .expect("non-empty");
                slots[nearest].unwrap() + (j as f64 - nearest as f64) * period
            }
        })
        .collect();
    (starts, detected.len(), false)
}

/// Samples between a symbol boundary and the steepest point of its rising
/// edge after smoothing, measured on a noiseless isolated pulse. Negative
/// when the centred smoothing window pulls the edge ahead of the boundary.
pub fn onset_delay_samples(ch: &ChannelParams, sample_rate: f64, smoothing_width: usize) -> Result<f64> {
    ch.validate()?;
    // A window long enough to contain the whole rising edge.
    let horizon = (4.0 * ch.peak_time()).max(10.0 * smoothing_width as f64 / sample_rate);
    // Leading silence so the centred window sees the edge as it would
    // mid-transmission; the result may be negative.
    let lead = smoothing_width + 2;
    let n = (horizon * sample_rate).ceil() as usize + 2 * lead;
    let values = (0..n)
        .map(|i| {
            let t = (i as f64 - lead as f64) / sample_rate;
            if t > 0.0 {
                hitting_density(ch, t)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let series = smooth(
        &UniformSeries {
            start_time: 0.0,
            sample_rate,
            values,
        },
        smoothing_width,
    )?;
    let d = first_difference(&series.values);
    let (best, _) = d.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
    );
    Ok(best as f64 - lead as f64)
}

/// Receiver front-end constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub smoothing_width: usize,
    pub slope_threshold: f64,
    /// Minimum onset spacing, in symbol periods.
    pub min_onset_separation: f64,
    pub segment_len: usize,
    pub split: SplitRatios,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            smoothing_width: 10,
            slope_threshold: 0.3,
            min_onset_separation: 0.8,
            segment_len: SEGMENT_LEN,
            split: SplitRatios::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_width == 0 {
            return Err(Error::config("smoothing_width must be at least 1"));
        }
        if !(self.slope_threshold > 0.0 && self.slope_threshold < 1.0) {
            return Err(Error::config("slope_threshold must lie in (0, 1)"));
        }
        if !(self.min_onset_separation > 0.0 && self.min_onset_separation <= 1.0) {
            return Err(Error::config("min_onset_separation must lie in (0, 1]"));
        }
        if self.segment_len != SEGMENT_LEN {
            return Err(Error::config(format!(
                "segment_len must be {SEGMENT_LEN}, got {}",
                self.segment_len
            )));
        }
        self.split.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p > 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split ratios must be positive and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}
