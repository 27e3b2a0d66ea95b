//! Confusion matrices, demodulation-offset tables, bit error rates and the
//! noisy-channel net data rate.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Counts indexed `[transmitted][demodulated]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    alphabet_size: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(alphabet_size: usize) -> Result<Self> {
        if alphabet_size == 0 {
            return Err(Error::domain("alphabet size must be positive"));
        }
        Ok(ConfusionMatrix {
            alphabet_size,
            counts: vec![0; alphabet_size * alphabet_size],
        })
    }

    pub fn from_labels(truth: &[u8], pred: &[u8], alphabet_size: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::shape(format!(
                "{} true labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(alphabet_size)?;
        for (&t, &p) in truth.iter().zip(pred) {
            cm.record(t as usize, p as usize)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        let c = self.alphabet_size;
        if truth >= c || pred >= c {
            return Err(Error::domain(format!(
                "label pair ({truth}, {pred}) outside alphabet of {c}"
            )));
        }
        self.counts[truth * c + pred] += 1;
        Ok(())
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.alphabet_size + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.alphabet_size..(truth + 1) * self.alphabet_size]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Row-normalised probabilities. Rows without samples stay all-zero and
    /// are listed in the second return value.
    pub fn row_normalize(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut empty = Vec::new();
        let rows = (0..self.alphabet_size)
            .map(|i| {
                let row = self.row(i);
                let n: u64 = row.iter().sum();
                if n == 0 {
                    empty.push(i);
                    vec![0.0; self.alphabet_size]
                } else {
                    row.iter().map(|&v| v as f64 / n as f64).collect()
                }
            })
            .collect();
        (rows, empty)
    }
}

/// `P(k)` for offsets `k = |demodulated - transmitted|`, weighted by how
/// often each symbol was transmitted.
pub fn offset_distribution(cm: &ConfusionMatrix) -> Result<Vec<f64>> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::domain("confusion matrix holds no samples"));
    }
    let c = cm.alphabet_size();
    let mut mass = vec![0u64; c];
    for i in 0..c {
        for j in 0..c {
            mass[i.abs_diff(j)] += cm.get(i, j);
        }
    }
    Ok(mass.into_iter().map(|m| m as f64 / total as f64).collect())
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    Ok(offset_distribution(cm)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitMapping {
    #[default]
    Natural,
    Gray,
}

pub fn bits_per_symbol(alphabet_size: usize) -> usize {
    alphabet_size.next_power_of_two().trailing_zeros() as usize
}

fn code(symbol: usize, mapping: BitMapping) -> usize {
    match mapping {
        BitMapping::Natural => symbol,
        BitMapping::Gray => symbol ^ (symbol >> 1),
    }
}

/// Most significant bit first.
pub fn symbol_to_bits(symbol: usize, alphabet_size: usize, mapping: BitMapping) -> Result<Vec<u8>> {
    if symbol >= alphabet_size {
        return Err(Error::domain(format!(
            "symbol {symbol} outside alphabet of {alphabet_size}"
        )));
    }
    let width = bits_per_symbol(alphabet_size);
    let c = code(symbol, mapping);
    Ok((0..width).rev().map(|b| ((c >> b) & 1) as u8).collect())
}

/// Fraction of differing bits when each symbol is sent as
/// `ceil(log2 C)` bits. For alphabets that are not a power of two some
/// codes are never used, so the figure is only approximate there.
pub fn bit_error_rate(cm: &ConfusionMatrix, mapping: BitMapping) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::domain("confusion matrix holds no samples"));
    }
    let c = cm.alphabet_size();
    let width = bits_per_symbol(c);
    if width == 0 {
        return Ok(0.0);
    }
    let mut wrong = 0u64;
    for i in 0..c {
        for j in 0..c {
            let flips = (code(i, mapping) ^ code(j, mapping)).count_ones() as u64;
            wrong += flips * cm.get(i, j);
        }
    }
    Ok(wrong as f64 / (total * width as u64) as f64)
}

/// `H2(x) = -x log2 x - (1-x) log2 (1-x)`, zero at both endpoints.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("binary entropy needs x in [0, 1], got {x}")));
    }
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    Ok(term(x) + term(1.0 - x))
}

/// Inputs to the net data rate bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityQuery {
    /// Gross data rate in bit/s.
    pub gross_rate: f64,
    /// Channel bit error rate, in `[0, 0.5]`.
    pub bit_error_rate: f64,
    /// Tolerated residual bit error rate after coding, in `(0, 0.5)`.
    pub residual_error: f64,
}

/// `R = Rg (1 - H2(f)) / (1 - H2(pb))`.
pub fn net_data_rate(q: &CapacityQuery) -> Result<f64> {
    if !(q.gross_rate > 0.0 && q.gross_rate.is_finite()) {
        return Err(Error::domain(format!(
            "gross rate must be positive, got {}",
            q.gross_rate
        )));
    }
    if !(0.0..=0.5).contains(&q.bit_error_rate) {
        return Err(Error::domain(format!(
            "bit error rate must lie in [0, 0.5], got {}",
            q.bit_error_rate
        )));
    }
    if !(q.residual_error > 0.0 && q.residual_error < 0.5) {
        return Err(Error::domain(format!(
            "residual error must lie in (0, 0.5), got {}",
            q.residual_error
        )));
    }
    if q.bit_error_rate == q.residual_error {
        return Ok(q.gross_rate);
    }
    let num = 1.0 - binary_entropy(q.bit_error_rate)?;
    let den = 1.0 - binary_entropy(q.residual_error)?;
    Ok((q.gross_rate * num / den).max(0.0))
}

/// Largest channel bit error rate at which the net rate still reaches
/// `target` (bisection on the monotone rate curve).
pub fn max_bit_error_rate_for(target: f64, gross_rate: f64, residual_error: f64) -> Result<f64> {
    let rate = |f: f64| {
        net_data_rate(&CapacityQuery {
            gross_rate,
            bit_error_rate: f,
            residual_error,
        })
    };
    if rate(0.0)? < target {
        return Err(Error::domain(format!(
            "rate {target} is unreachable even on an error-free channel"
        )));
    }
    if rate(0.5)? >= target {
        return Ok(0.5);
    }
    let (mut lo, mut hi) = (0.0, 0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid)? >= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(lo)
}

/// Evaluation summary of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub alphabet_size: usize,
    pub symbol_rate: f64,
    pub samples: u64,
    pub accuracy: f64,
    pub offsets: Vec<f64>,
    pub confusion: Vec<Vec<f64>>,
    pub empty_rows: Vec<usize>,
    pub f_natural: f64,
    pub f_gray: f64,
    /// Whether the alphabet leaves some bit codes unused (BER approximate).
    pub ber_approximate: bool,
    pub gross_rate: f64,
    pub residual_error: f64,
    /// Net rate from the natural-mapping bit error rate; zero once that
    /// reaches 0.5.
    pub net_rate: f64,
}

impl Report {
    pub fn new(scenario: &str, cm: &ConfusionMatrix, symbol_rate: f64, residual_error: f64) -> Result<Self> {
        if !(symbol_rate > 0.0) {
            return Err(Error::domain(format!(
                "symbol rate must be positive, got {symbol_rate}"
            )));
        }
        let c = cm.alphabet_size();
        let offsets = offset_distribution(cm)?;
        let (confusion, empty_rows) = cm.row_normalize();
        let f_natural = bit_error_rate(cm, BitMapping::Natural)?;
        let f_gray = bit_error_rate(cm, BitMapping::Gray)?;
        let gross_rate = symbol_rate * bits_per_symbol(c) as f64;
        let net_rate = net_data_rate(&CapacityQuery {
            gross_rate,
            bit_error_rate: f_natural.min(0.5),
            residual_error,
        })?;
        Ok(Report {
            scenario: scenario.to_string(),
            alphabet_size: c,
            symbol_rate,
            samples: cm.total(),
            accuracy: offsets[0],
            offsets,
            confusion,
            empty_rows,
            f_natural,
            f_gray,
            ber_approximate: !c.is_power_of_two(),
            gross_rate,
            residual_error,
            net_rate,
        })
    }
}

/// Row-normalised confusion matrix, one row per transmitted symbol.
pub fn write_confusion_csv<W: Write>(out: W, report: &Report) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["transmitted".to_string()];
    header.extend((0..report.alphabet_size).map(|j| format!("pred_{j}")));
    w.write_record(&header)?;
    for (i, row) in report.confusion.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Offset table with one probability column per scenario; offsets beyond a
/// scenario's alphabet are left blank.
pub fn write_offsets_csv<W: Write>(out: W, reports: &[Report]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["offset".to_string()];
    header.extend(reports.iter().map(|r| r.scenario.clone()));
    w.write_record(&header)?;
    let rows = reports.iter().map(|r| r.offsets.len()).max().unwrap_or(0);
    for k in 0..rows {
        let mut rec = vec![k.to_string()];
        rec.extend(
            reports
                .iter()
                .map(|r| r.offsets.get(k).map_or_else(String::new, |p| p.to_string())),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: W, reports: &[Report]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "accuracy",
        "f_natural",
        "f_gray",
        "net_rate",
        "residual_error",
    ])?;
    for r in reports {
        w.write_record([
            r.scenario.clone(),
            r.accuracy.to_string(),
            r.f_natural.to_string(),
            r.f_gray.to_string(),
            r.net_rate.to_string(),
            r.residual_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
