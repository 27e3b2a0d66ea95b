//! Diffusion channel laws for a point transmitter and an absorbing spherical
//! receiver, plus the least-squares fit of the parametrized arrival model.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Physical description of a diffusion channel.
///
/// Lengths share one arbitrary unit (mm by convention), time is in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub receiver_radius: f64,
    /// Centre-to-centre distance between transmitter and receiver.
    pub distance: f64,
    pub diffusion_coeff: f64,
}

impl Default for ChannelParams {
    /// A short channel whose pulses peak about 42 ms after release, so that
    /// 2 Hz symbols are mostly separable while 4 Hz symbols interfere.
    fn default() -> Self {
        ChannelParams {
            receiver_radius: 1.0,
            distance: 1.5,
            diffusion_coeff: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn new(receiver_radius: f64, distance: f64, diffusion_coeff: f64) -> Result<Self> {
        let ch = ChannelParams {
            receiver_radius,
            distance,
            diffusion_coeff,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        let ChannelParams {
            receiver_radius: r,
            distance: d,
            diffusion_coeff: dc,
        } = *self;
        if !(r.is_finite() && d.is_finite() && dc.is_finite()) {
            return Err(Error::config("channel parameters must be finite"));
        }
        if r <= 0.0 {
            return Err(Error::config(format!("receiver radius must be > 0, got {r}")));
        }
        if d <= r {
            return Err(Error::config(format!(
                "distance ({d}) must exceed the receiver radius ({r})"
            )));
        }
        if dc <= 0.0 {
            return Err(Error::config(format!("diffusion coefficient must be > 0, got {dc}")));
        }
        Ok(())
    }

    /// Asymptotic arrival fraction `r / (d + r)`.
    pub fn arrival_limit(&self) -> f64 {
        self.receiver_radius / (self.distance + self.receiver_radius)
    }

    /// Time at which [`hitting_density`] peaks: `(d - r)^2 / (6 D)`.
    pub fn peak_time(&self) -> f64 {
        let gap = self.distance - self.receiver_radius;
        gap * gap / (6.0 * self.diffusion_coeff)
    }

    /// Total probability mass of the hitting-time density, `r / d`.
    pub fn hitting_mass(&self) -> f64 {
        self.receiver_radius / self.distance
    }
}

/// Correction exponents and prefactor of the parametrized arrival model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

impl FitParams {
    pub const IDENTITY: FitParams = FitParams {
        b1: 1.0,
        b2: 1.0,
        b3: 1.0,
    };

    pub fn new(b1: f64, b2: f64, b3: f64) -> Self {
        FitParams { b1, b2, b3 }
    }

    fn from_array(v: [f64; 3]) -> Self {
        FitParams::new(v[0], v[1], v[2])
    }

    fn to_array(self) -> [f64; 3] {
        [self.b1, self.b2, self.b3]
    }
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams::IDENTITY
    }
}

/// Measured or simulated arrival fractions `S(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ObservedSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::format(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 3 {
            return Err(Error::format(format!(
                "need at least 3 observations, got {}",
                times.len()
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::format("observations must be finite"));
        }
        if times[0] <= 0.0 {
            return Err(Error::format("observation times must be positive"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::format("observation times must be strictly increasing"));
        }
        Ok(ObservedSeries { times, values })
    }

    /// Reads a two-column CSV with header `t_s,value`.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "t_s" || &headers[1] != "value" {
            return Err(Error::format(format!(
                "expected header `t_s,value`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| Error::format(format!("row {}: `{}`: {e}", line + 2, &record[i])))
            };
            times.push(parse(0)?);
            values.push(parse(1)?);
        }
        ObservedSeries::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Complementary error function `1 - erf(z)`.
///
/// Chebyshev-fitted exponential form with fractional error below 1.2e-7 for
/// `z >= 0`; negative arguments use the reflection `erfc(-z) = 2 - erfc(z)`.
pub fn erfc(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::domain(format!("erfc of non-finite argument {z}")));
    }
    Ok(erfc_unchecked(z))
}

fn erfc_unchecked(z: f64) -> f64 {
    let x = z.abs();
    let t = 1.0 / (1.0 + 0.5 * x);
    let poly = -1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98 + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let ans = t * (-x * x + poly).exp();
    if z >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Fraction of released molecules absorbed by time `t`:
/// `F(t) = r/(d+r) * erfc(d / sqrt(4 D t))`.
pub fn arrival_fraction(ch: &ChannelParams, t: f64) -> Result<f64> {
    arrival_fraction_fitted(ch, &FitParams::IDENTITY, t)
}

/// Parametrized arrival model
/// `b1 * r/(d+r) * erfc(d / sqrt((4D)^b2 * t^b3))`.
pub fn arrival_fraction_fitted(ch: &ChannelParams, fit: &FitParams, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be positive and finite, got {t}")));
    }
    let radicand = (4.0 * ch.diffusion_coeff).powf(fit.b2) * t.powf(fit.b3);
    if !(radicand > 0.0) {
        return Err(Error::domain(format!(
            "non-positive radicand {radicand} at t={t} with {fit:?}"
        )));
    }
    let z = ch.distance / radicand.sqrt();
    // z = +inf (radicand underflow) is the t -> 0 limit, where erfc -> 0.
    let tail = if z.is_infinite() { 0.0 } else { erfc(z)? };
    Ok(fit.b1 * ch.arrival_limit() * tail)
}

/// First-passage (hitting) time density at the receiver surface:
/// `r (d - r) / (d sqrt(4 pi D t^3)) * exp(-(d - r)^2 / (4 D t))`.
pub fn hitting_density(ch: &ChannelParams, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be positive and finite, got {t}")));
    }
    let r = ch.receiver_radius;
    let d = ch.distance;
    let dc = ch.diffusion_coeff;
    let gap = d - r;
    let exponent = -gap * gap / (4.0 * dc * t);
    // exp underflows to 0 long before the t^-3/2 prefactor overflows.
    let decay = exponent.exp();
    if decay == 0.0 {
        return Ok(0.0);
    }
    let prefactor = r * gap / (d * (4.0 * std::f64::consts::PI * dc * t * t * t).sqrt());
    Ok(prefactor * decay)
}

/// Outcome of [`fit_channel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub params: FitParams,
    /// Residual sum of squares at `params`.
    pub rss: f64,
    pub evaluations: usize,
}

/// Residual sum of squares of the parametrized model against `obs`.
/// Non-finite model values make the whole objective `+inf`.
pub fn fit_residual(ch: &ChannelParams, obs: &ObservedSeries, fit: &FitParams) -> f64 {
    let mut rss = 0.0;
    for (&t, &s) in obs.times.iter().zip(&obs.values) {
        match arrival_fraction_fitted(ch, fit, t) {
            Ok(f) if f.is_finite() => rss += (f - s) * (f - s),
            _ => return f64::INFINITY,
        }
    }
    if rss.is_finite() {
        rss
    } else {
        f64::INFINITY
    }
}

const FIT_RESTARTS: usize = 4;
const FIT_MAX_EVALS: usize = 10_000;
const FIT_DIAMETER_TOL: f64 = 1e-8;

/// Least-squares fit of `(b1, b2, b3)`.
///
/// Nelder-Mead started at `(1, 1, 1)`, followed by restarts from the best
/// vertex with a fresh, progressively smaller simplex. Each run stops when
/// the simplex diameter drops below 1e-8; the total budget is 10 000
/// objective evaluations.
pub fn fit_channel(ch: &ChannelParams, obs: &ObservedSeries) -> Result<FitReport> {
    ch.validate()?;
    let objective = |v: &[f64; 3]| fit_residual(ch, obs, &FitParams::from_array(*v));

    let mut best = FitParams::IDENTITY.to_array();
    let mut best_value = objective(&best);
    let mut evaluations = 1;
    let mut step = 0.1;
    for _ in 0..=FIT_RESTARTS {
        let budget = FIT_MAX_EVALS.saturating_sub(evaluations);
        if budget < 4 {
            break;
        }
        let run = nelder_mead(&objective, best, step, FIT_DIAMETER_TOL, budget);
        evaluations += run.evaluations;
        if run.value <= best_value {
            best = run.point;
            best_value = run.value;
        }
        step *= 0.5;
    }
    if !best_value.is_finite() {
        return Err(Error::Optimization(
            "objective is non-finite at every probed parameter set".into(),
        ));
    }
    Ok(FitReport {
        params: FitParams::from_array(best),
        rss: best_value,
        evaluations,
    })
}

struct SimplexRun<const N: usize> {
    point: [f64; N],
    value: f64,
    evaluations: usize,
}

fn nelder_mead<const N: usize, F>(
    f: &F,
    start: [f64; N],
    step: f64,
    diameter_tol: f64,
    max_evals: usize,
) -> SimplexRun<N>
where
    F: Fn(&[f64; N]) -> f64,
{
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;

    let eval = |p: &[f64; N], evals: &mut usize| {
        *evals += 1;
        let v = f(p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut evals = 0;
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, eval(&start, &mut evals)));
    for i in 0..N {
        let mut p = start;
        p[i] += if p[i] != 0.0 { step * p[i].abs() } else { step };
        simplex.push((p, eval(&p, &mut evals)));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(p, _)| {
                p.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if diameter < diameter_tol || evals + 2 > max_evals {
            break;
        }

        let mut centroid = [0.0; N];
        for (p, _) in &simplex[..N] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / N as f64;
            }
        }
        let along = |coef: f64| -> [f64; N] {
            let mut out = [0.0; N];
            for i in 0..N {
                out[i] = centroid[i] + coef * (simplex[N].0[i] - centroid[i]);
            }
            out
        };

        let reflected = along(-ALPHA);
        let fr = eval(&reflected, &mut evals);
        if fr < simplex[0].1 {
            let expanded = along(-GAMMA);
            let fe = eval(&expanded, &mut evals);
            simplex[N] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[N].1 { along(-RHO) } else { along(RHO) };
            let fc = eval(&contracted, &mut evals);
            if fc < simplex[N].1.min(fr) {
                simplex[N] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for vertex in simplex.iter_mut().skip(1) {
                    for (x, b) in vertex.0.iter_mut().zip(best) {
                        *x = b + SIGMA * (*x - b);
                    }
                    vertex.1 = eval(&vertex.0, &mut evals);
                }
            }
        }
    }

    let (point, value) = simplex
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex is never empty");
    SimplexRun {
        point,
        value,
        evaluations: evals,
    }
}
