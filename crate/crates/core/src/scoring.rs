//! Energy score, its unbiased ensemble estimator, the prequential loss and
//! its pathwise gradient.
//!
//! Time indices are 0-based observation indices. Scoring index `t` forecasts
//! observation `t` from the window `t-k .. t`, so every scored index must
//! satisfy `t >= k`.
//!
//! Forecast noise for index `t` is drawn from `key.with(t)`. Two losses built
//! from the same key therefore use the same noise at every shared index, which
//! is what makes range losses additive and lets particles be compared under
//! common random numbers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Tape, Var};
use crate::dgfm::{standard_normals, Network};
use crate::error::{Error, Result};
use crate::lorenz96::TimeSeries;
use crate::rng::StreamKey;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    /// Energy-score exponent, in (0, 2).
    pub beta: f64,
    /// Forecast draws per score evaluation.
    pub m: usize,
    /// Loss temperature.
    pub gamma: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            beta: 1.0,
            m: 10,
            gamma: 1.0,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 2.0) {
            return Err(Error::Config(format!("score.beta = {} outside (0, 2)", self.beta)));
        }
        if self.m < 2 {
            return Err(Error::Config(format!("score.m = {} must be >= 2", self.m)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("score.gamma = {} must be positive", self.gamma)));
        }
        Ok(())
    }
}

#[inline]
fn dist_pow(a: &[f64], b: &[f64], beta: f64) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    if beta == 1.0 {
        d
    } else {
        d.max(crate::autodiff::POW_ABS_FLOOR).powf(beta)
    }
}

/// Unbiased energy-score estimate
/// `(2/m) sum_j |x_j - y|^b - 1/(m(m-1)) sum_{j != k} |x_j - x_k|^b`.
pub fn energy_score_estimate<S: AsRef<[f64]>>(samples: &[S], y: &[f64], beta: f64) -> Result<f64> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "energy score needs at least 2 samples, got {m}"
        )));
    }
    for s in samples {
        if s.as_ref().len() != y.len() {
            return Err(Error::Dimension {
                what: "energy score sample",
                expected: y.len(),
                got: s.as_ref().len(),
            });
        }
    }
    let mf = m as f64;
    let to_obs: f64 = samples.iter().map(|x| dist_pow(x.as_ref(), y, beta)).sum();
    let mut pairs = 0.0;
    for j in 0..m {
        for k in j + 1..m {
            pairs += dist_pow(samples[j].as_ref(), samples[k].as_ref(), beta);
        }
    }
    Ok(2.0 / mf * to_obs - 2.0 * pairs / (mf * (mf - 1.0)))
}

/// Tape version of [`energy_score_estimate`]. For `beta == 1` the distance is
/// the bare norm node; otherwise it is followed by a clamped `pow_abs`.
pub fn record_energy_score(tape: &mut Tape<'_>, samples: &[Var], y: Var, beta: f64) -> Result<Var, AdError> {
    let m = samples.len() as f64;
    let dist = |tape: &mut Tape<'_>, a: Var, b: Var| -> Result<Var, AdError> {
        let d = tape.sub(a, b)?;
        let n = tape.norm(d)?;
        if beta == 1.0 {
            Ok(n)
        } else {
            tape.pow_abs(n, beta)
        }
    };
    let mut terms = Vec::with_capacity(samples.len() * (samples.len() + 1) / 2);
    for &x in samples {
        terms.push((dist(tape, x, y)?, 2.0 / m));
    }
    let pair_coef = -2.0 / (m * (m - 1.0));
    for (j, &a) in samples.iter().enumerate() {
        for &b in &samples[j + 1..] {
            terms.push((dist(tape, a, b)?, pair_coef));
        }
    }
    tape.combine(&terms)
}

fn check_index(net: &Network, series: &TimeSeries, t: usize) -> Result<()> {
    if t < net.window() || t >= series.len() {
        return Err(Error::InvalidArgument(format!(
            "time index {t} outside scoreable range {}..{}",
            net.window(),
            series.len()
        )));
    }
    Ok(())
}

/// Forecast noise used at index `t` under `key`.
pub fn index_noise(key: StreamKey, t: usize, m: usize, noise_dim: usize) -> Vec<f64> {
    standard_normals(&mut key.with(t as u64).rng(), m * noise_dim)
}

/// Energy-score estimate for a single index.
pub fn index_score(
    net: &Network,
    params: &[f64],
    series: &TimeSeries,
    t: usize,
    cfg: &ScoreConfig,
    key: StreamKey,
) -> Result<f64> {
    check_index(net, series, t)?;
    let noise = index_noise(key, t, cfg.m, net.noise_dim());
    let flat = net.forecast_with_noise(params, series.window(t, net.window()), &noise)?;
    let samples: Vec<&[f64]> = flat.chunks_exact(net.obs_dim()).collect();
    energy_score_estimate(&samples, series.obs(t), cfg.beta)
}

/// `gamma * sum_{t in range} S(forecast ensemble at t, y_t)`.
pub fn prequential_loss(
    net: &Network,
    params: &[f64],
    series: &TimeSeries,
    range: std::ops::Range<usize>,
    cfg: &ScoreConfig,
    key: StreamKey,
) -> Result<f64> {
    if range.is_empty() {
        return Ok(0.0);
    }
    check_index(net, series, range.start)?;
    check_index(net, series, range.end - 1)?;
    let mut total = 0.0;
    for t in range {
        total += index_score(net, params, series, t, cfg, key)?;
    }
    Ok(cfg.gamma * total)
}

/// `sum_i weights[i] * grad S_{indices[i]}` (without `gamma`), together with
/// the matching weighted score. Gradients flow through the forecast samples
/// with the noise held fixed.
pub fn weighted_loss_and_gradient(
    net: &Network,
    params: &[f64],
    series: &TimeSeries,
    indices: &[usize],
    weights: &[f64],
    cfg: &ScoreConfig,
    key: StreamKey,
) -> Result<(f64, Vec<f64>)> {
    if indices.len() != weights.len() {
        return Err(Error::Dimension {
            what: "gradient weights",
            expected: indices.len(),
            got: weights.len(),
        });
    }
    if params.len() != net.param_count() {
        return Err(Error::Dimension {
            what: "parameter vector",
            expected: net.param_count(),
            got: params.len(),
        });
    }
    let mut tape = Tape::new(params);
    let mut grad = vec![0.0; params.len()];
    let mut scratch = vec![0.0; params.len()];
    let mut value = 0.0;
    let mut samples = Vec::with_capacity(cfg.m);
    for (&t, &w) in indices.iter().zip(weights) {
        check_index(net, series, t)?;
        if w == 0.0 {
            continue;
        }
        tape.clear();
        let noise = index_noise(key, t, cfg.m, net.noise_dim());
        let h = net.record_encoder(&mut tape, series.window(t, net.window()))?;
        samples.clear();
        for w in noise.chunks_exact(net.noise_dim()) {
            samples.push(net.record_decoder(&mut tape, h, w)?);
        }
        let y = tape.input(series.obs(t))?;
        let es = record_energy_score(&mut tape, &samples, y, cfg.beta)?;
        scratch.iter_mut().for_each(|g| *g = 0.0);
        tape.backward_into(es, w, &mut scratch);
        if let Some(i) = scratch.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient entry {i} at time index {t}"
            )));
        }
        value += w * tape.scalar(es);
        grad.iter_mut().zip(&scratch).for_each(|(g, s)| *g += s);
    }
    Ok((value, grad))
}

/// Weighted pathwise gradient of the energy-score terms at `indices`.
pub fn loss_gradient(
    net: &Network,
    params: &[f64],
    series: &TimeSeries,
    indices: &[usize],
    weights: &[f64],
    cfg: &ScoreConfig,
    key: StreamKey,
) -> Result<Vec<f64>> {
    weighted_loss_and_gradient(net, params, series, indices, weights, cfg, key).map(|(_, g)| g)
}
