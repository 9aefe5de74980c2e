use std::ops::Range;

use crate::dgfm::Network;
use crate::error::{Error, Result};
use crate::lorenz96::TimeSeries;
use crate::rng::StreamKey;
use crate::scoring::{index_score, weighted_loss_and_gradient, ScoreConfig};

/// A sum of per-index losses `l_t(theta)` over the time indices
/// `first_index()..len()`.
///
/// `key` fixes any simulation noise, so two calls with the same key evaluate
/// the same deterministic function of `theta`. The loss scale `gamma` is
/// applied by the sampler, not here.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// First index with a defined loss.
    fn first_index(&self) -> usize;

    /// One past the last index available for assimilation.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() <= self.first_index()
    }

    /// `sum_{t in range} l_t(theta)`.
    fn loss(&self, theta: &[f64], range: Range<usize>, key: StreamKey) -> Result<f64>;

    /// `sum_i weights[i] * grad l_{indices[i]}(theta)`.
    fn weighted_gradient(&self, theta: &[f64], indices: &[usize], weights: &[f64], key: StreamKey) -> Result<Vec<f64>>;
}

/// Energy-score prequential loss of a generative forecasting network on the
/// training part of a series.
pub struct ForecastTarget<'a> {
    pub net: &'a Network,
    pub series: &'a TimeSeries,
    pub score: ScoreConfig,
}

impl Target for ForecastTarget<'_> {
    fn dim(&self) -> usize {
        self.net.param_count()
    }

    fn first_index(&self) -> usize {
        self.net.window()
    }

    fn len(&self) -> usize {
        self.series.train_end
    }

    fn loss(&self, theta: &[f64], range: Range<usize>, key: StreamKey) -> Result<f64> {
        let mut total = 0.0;
        for t in range {
            total += index_score(self.net, theta, self.series, t, &self.score, key)?;
        }
        Ok(total)
    }

    fn weighted_gradient(&self, theta: &[f64], indices: &[usize], weights: &[f64], key: StreamKey) -> Result<Vec<f64>> {
        weighted_loss_and_gradient(self.net, theta, self.series, indices, weights, &self.score, key).map(|(_, g)| g)
    }
}

/// Negative log-likelihood of i.i.d. observations `y_t ~ N(theta, s^2 I)`.
/// With a standard Gaussian prior and unit loss scale the posterior is
/// Gaussian with precision `1 + n / s^2` per coordinate.
pub struct GaussianMeanTarget {
    pub observations: Vec<Vec<f64>>,
    pub noise_var: f64,
}

impl GaussianMeanTarget {
    pub fn new(observations: Vec<Vec<f64>>, noise_var: f64) -> Result<Self> {
        let d = observations.first().map_or(0, Vec::len);
        if d == 0 || observations.iter().any(|y| y.len() != d) {
            return Err(Error::InvalidArgument("observations must share a positive dimension".into()));
        }
        if !(noise_var > 0.0) {
            return Err(Error::InvalidArgument("noise variance must be positive".into()));
        }
        Ok(GaussianMeanTarget { observations, noise_var })
    }

    /// Exact posterior mean and per-coordinate variance after the first `n`
    /// observations under a standard Gaussian prior and unit loss scale.
    pub fn posterior(&self, n: usize) -> (Vec<f64>, f64) {
        let precision = 1.0 + n as f64 / self.noise_var;
        let mut mean = vec![0.0; self.dim()];
        for y in &self.observations[..n] {
            mean.iter_mut().zip(y).for_each(|(m, v)| *m += v / self.noise_var);
        }
        mean.iter_mut().for_each(|m| *m /= precision);
        (mean, 1.0 / precision)
    }
}

impl Target for GaussianMeanTarget {
    fn dim(&self) -> usize {
        self.observations[0].len()
    }

    fn first_index(&self) -> usize {
        0
    }

    fn len(&self) -> usize {
        self.observations.len()
    }

    fn loss(&self, theta: &[f64], range: Range<usize>, _key: StreamKey) -> Result<f64> {
        let log_norm = 0.5 * self.dim() as f64 * (2.0 * std::f64::consts::PI * self.noise_var).ln();
        Ok(self.observations[range]
            .iter()
            .map(|y| {
                let sq: f64 = theta.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                0.5 * sq / self.noise_var + log_norm
            })
            .sum())
    }

    fn weighted_gradient(&self, theta: &[f64], indices: &[usize], weights: &[f64], _key: StreamKey) -> Result<Vec<f64>> {
        let mut g = vec![0.0; theta.len()];
        for (&t, &w) in indices.iter().zip(weights) {
            for ((gi, th), y) in g.iter_mut().zip(theta).zip(&self.observations[t]) {
                *gi += w * (th - y) / self.noise_var;
            }
        }
        Ok(g)
    }
}
