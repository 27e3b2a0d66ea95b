//! Synthetic concentration-shift-keying transmissions.
//!
//! Every symbol releases `level * particles_scale` particles at the start of
//! its period; the sensor sees the superposition of the resulting
//! hitting-time pulses plus a slow sinusoidal drift and additive white noise,
//! sampled on a slightly jittered clock.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{hitting_density, ChannelParams};
use crate::exec::ExecMode;
use crate::{Error, Result};

/// Number of silent symbol periods appended after the last symbol.
pub const TAIL_PERIODS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationConfig {
    pub alphabet_size: usize,
    /// Symbols per second.
    pub symbol_rate: f64,
    /// Signal amplitude produced by one level unit at the pulse peak is
    /// `particles_scale * max_t h(t)`.
    pub particles_scale: f64,
    pub sample_rate: f64,
}

impl ModulationConfig {
    /// Configuration whose isolated level-1 pulse peaks at exactly 1.0 on
    /// channel `ch`.
    pub fn for_channel(alphabet_size: usize, symbol_rate: f64, ch: &ChannelParams) -> Result<Self> {
        let cfg = ModulationConfig {
            alphabet_size,
            symbol_rate,
            particles_scale: unit_peak_scale(ch)?,
            sample_rate: 100.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size < 2 || self.alphabet_size > 256 {
            return Err(Error::config(format!(
                "alphabet size must be in [2, 256], got {}",
                self.alphabet_size
            )));
        }
        if !(self.symbol_rate > 0.0) || !self.symbol_rate.is_finite() {
            return Err(Error::config(format!(
                "symbol rate must be positive, got {}",
                self.symbol_rate
            )));
        }
        if !(self.particles_scale > 0.0) || !self.particles_scale.is_finite() {
            return Err(Error::config(format!(
                "particles_scale must be positive, got {}",
                self.particles_scale
            )));
        }
        if !self.sample_rate.is_finite() || !(self.sample_rate >= 8.0 * self.symbol_rate) {
            return Err(Error::config(format!(
                "sample rate ({}) must be at least 8x the symbol rate ({})",
                self.sample_rate, self.symbol_rate
            )));
        }
        Ok(())
    }

    pub fn symbol_period(&self) -> f64 {
        1.0 / self.symbol_rate
    }
}

/// Scale that makes an isolated level-1 pulse peak at 1.0.
pub fn unit_peak_scale(ch: &ChannelParams) -> Result<f64> {
    ch.validate()?;
    Ok(1.0 / hitting_density(ch, ch.peak_time())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation of additive white Gaussian noise, in signal units.
    pub awgn_sigma: f64,
    /// Log-domain standard deviation of the per-symbol injection factor.
    pub amplitude_jitter_sigma: f64,
    pub drift_amplitude: f64,
    /// Period of the sinusoidal baseline drift, in seconds.
    pub drift_period: f64,
    /// Standard deviation of per-sample timestamp errors, in seconds.
    pub sampling_jitter_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            awgn_sigma: 0.02,
            amplitude_jitter_sigma: 0.05,
            drift_amplitude: 0.05,
            drift_period: 30.0,
            sampling_jitter_sigma: 1e-3,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        NoiseConfig {
            awgn_sigma: 0.0,
            amplitude_jitter_sigma: 0.0,
            drift_amplitude: 0.0,
            drift_period: 30.0,
            sampling_jitter_sigma: 0.0,
        }
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let fields = [
            ("awgn_sigma", self.awgn_sigma),
            ("amplitude_jitter_sigma", self.amplitude_jitter_sigma),
            ("drift_amplitude", self.drift_amplitude),
            ("drift_period", self.drift_period),
            ("sampling_jitter_sigma", self.sampling_jitter_sigma),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.drift_amplitude > 0.0 && self.drift_period <= 0.0 {
            return Err(Error::config("drift_period must be positive when drift is enabled"));
        }
        if self.sampling_jitter_sigma >= 0.25 / sample_rate {
            return Err(Error::config(format!(
                "sampling jitter ({} s) must stay below a quarter sample period ({} s)",
                self.sampling_jitter_sigma,
                0.25 / sample_rate
            )));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a transmission, echoed into each record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub modulation: ModulationConfig,
    pub channel: ChannelParams,
    pub noise: NoiseConfig,
    pub seed: u64,
    /// Position of the transmission within its corpus (random stream id).
    pub index: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.modulation.validate()?;
        self.noise.validate(self.modulation.sample_rate)
    }

    /// True when two records come from the same modulation scenario.
    pub fn same_scenario(&self, other: &SimConfig) -> bool {
        self.modulation.alphabet_size == other.modulation.alphabet_size
            && self.modulation.symbol_rate == other.modulation.symbol_rate
            && self.modulation.sample_rate == other.modulation.sample_rate
    }
}

/// One simulated transmission. Serializes to a single `transmissions.jsonl`
/// record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transmission {
    pub config: SimConfig,
    pub symbols: Vec<u8>,
    #[serde(rename = "boundaries_s")]
    pub boundaries: Vec<f64>,
    #[serde(rename = "t_s")]
    pub times: Vec<f64>,
    #[serde(rename = "v")]
    pub values: Vec<f64>,
}

impl Transmission {
    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = self.config.modulation.alphabet_size;
        if self.symbols.is_empty() {
            return Err(Error::format("transmission has no symbols"));
        }
        if let Some(&s) = self.symbols.iter().find(|&&s| s as usize >= c) {
            return Err(Error::format(format!("symbol {s} outside alphabet of size {c}")));
        }
        if self.boundaries.len() != self.symbols.len() {
            return Err(Error::format(format!(
                "{} boundaries for {} symbols",
                self.boundaries.len(),
                self.symbols.len()
            )));
        }
        if self.times.len() != self.values.len() {
            return Err(Error::format(format!(
                "{} timestamps for {} values",
                self.times.len(),
                self.values.len()
            )));
        }
        if self.times.len() < 2 {
            return Err(Error::format("transmission needs at least two samples"));
        }
        let all = self.boundaries.iter().chain(&self.times).chain(&self.values);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::format("non-finite time or value"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::format("sample times must be strictly increasing"));
        }
        if self.boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::format("symbol boundaries must be strictly increasing"));
        }
        Ok(())
    }

    /// Parses and validates one JSONL record.
    pub fn from_json_line(line: &str) -> Result<Self> {
        let t: Transmission = serde_json::from_str(line)?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Reads a whole `transmissions.jsonl` document. Blank lines are skipped.
pub fn read_jsonl<R: std::io::BufRead>(reader: R) -> Result<Vec<Transmission>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = Transmission::from_json_line(&line).map_err(|e| Error::format(format!("line {}: {e}", i + 1)))?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_jsonl<W: std::io::Write>(mut writer: W, corpus: &[Transmission]) -> Result<()> {
    for t in corpus {
        writeln!(writer, "{}", t.to_json_line()?)?;
    }
    writer.flush()?;
    Ok(())
}

/// Deterministic random stream `index` of the family seeded by `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n` symbols drawn uniformly from `[0, alphabet_size)`.
pub fn random_message<R: Rng + ?Sized>(n: usize, alphabet_size: usize, rng: &mut R) -> Result<Vec<u8>> {
    if n == 0 {
        return Err(Error::config("message length must be at least 1"));
    }
    if !(2..=256).contains(&alphabet_size) {
        return Err(Error::config(format!(
            "alphabet size must be in [2, 256], got {alphabet_size}"
        )));
    }
    Ok((0..n).map(|_| rng.random_range(0..alphabet_size) as u8).collect())
}

/// Synthesizes the sensor trace for `symbols`.
///
/// Samples are taken at `i / sample_rate` plus a Gaussian timestamp error
/// clamped to +-0.49 sample periods, so the clock stays strictly increasing.
/// The first and last samples are exact so the trace always spans
/// `[0, (n + TAIL_PERIODS) / symbol_rate]`.
pub fn modulate<R: Rng + ?Sized>(symbols: &[u8], cfg: &SimConfig, rng: &mut R) -> Result<Transmission> {
    cfg.validate()?;
    let m = &cfg.modulation;
    if symbols.is_empty() {
        return Err(Error::config("cannot modulate an empty symbol sequence"));
    }
    if let Some(&s) = symbols.iter().find(|&&s| s as usize >= m.alphabet_size) {
        return Err(Error::config(format!(
            "symbol {s} outside alphabet of size {}",
            m.alphabet_size
        )));
    }
    let noise = &cfg.noise;
    let period = m.symbol_period();
    let boundaries: Vec<f64> = (0..symbols.len()).map(|j| j as f64 * period).collect();

    let amplitudes: Vec<f64> = symbols
        .iter()
        .map(|&s| {
            let z: f64 = rng.sample(StandardNormal);
            s as f64 * m.particles_scale * (noise.amplitude_jitter_sigma * z).exp()
        })
        .collect();
    let drift_phase = rng.random_range(0.0..std::f64::consts::TAU);

    let duration = (symbols.len() + TAIL_PERIODS) as f64 * period;
    let n_samples = (duration * m.sample_rate).round() as usize + 1;
    let dt = 1.0 / m.sample_rate;
    let max_shift = 0.49 * dt;
    let mut times = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let nominal = i as f64 / m.sample_rate;
        let z: f64 = rng.sample(StandardNormal);
        let t = if i == 0 || i + 1 == n_samples {
            nominal
        } else {
            nominal + (noise.sampling_jitter_sigma * z).clamp(-max_shift, max_shift)
        };
        times.push(t);
    }

    let ch = &cfg.channel;
    let mut values = Vec::with_capacity(n_samples);
    for &t in &times {
        let mut v = 0.0;
        for (&b, &a) in boundaries.iter().zip(&amplitudes) {
            if a != 0.0 && t > b {
                v += a * hitting_density(ch, t - b)?;
            }
        }
        if noise.drift_amplitude > 0.0 {
            let w = std::f64::consts::TAU / noise.drift_period;
            v += noise.drift_amplitude * (w * t + drift_phase).sin();
        }
        let z: f64 = rng.sample(StandardNormal);
        v += noise.awgn_sigma * z;
        values.push(v);
    }

    let t = Transmission {
        config: *cfg,
        symbols: symbols.to_vec(),
        boundaries,
        times,
        values,
    };
    debug_assert!(t.validate().is_ok());
    Ok(t)
}

/// Parameters shared by every transmission of a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub n_transmissions: usize,
    pub msg_len: usize,
    pub modulation: ModulationConfig,
    pub channel: ChannelParams,
    pub noise: NoiseConfig,
    pub master_seed: u64,
}

/// Transmission `i` draws its message and noise from `stream(master_seed, i)`.
pub fn generate_corpus(spec: &CorpusSpec, exec: ExecMode) -> Result<Vec<Transmission>> {
    if spec.n_transmissions == 0 {
        return Err(Error::config("corpus needs at least one transmission"));
    }
    let indices: Vec<u64> = (0..spec.n_transmissions as u64).collect();
    exec.map(indices, |i| {
        let cfg = SimConfig {
            modulation: spec.modulation,
            channel: spec.channel,
            noise: spec.noise,
            seed: spec.master_seed,
            index: i,
        };
        let mut rng = stream(spec.master_seed, i);
        let msg = random_message(spec.msg_len, spec.modulation.alphabet_size, &mut rng)?;
        modulate(&msg, &cfg, &mut rng)
    })
    .into_iter()
    .collect()
}

/// Residual of an isolated pulse one symbol period after its peak, relative
/// to the peak height.
pub fn isi_ratio(ch: &ChannelParams, symbol_rate: f64) -> Result<f64> {
    let tp = ch.peak_time();
    Ok(hitting_density(ch, tp + 1.0 / symbol_rate)? / hitting_density(ch, tp)?)
}
