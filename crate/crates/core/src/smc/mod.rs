//! Episodic waste-free sequential Monte Carlo over parameter vectors.
//!
//! Each episode moves the particle system from the posterior given all
//! earlier data to the posterior that also includes the episode's data,
//! through an adaptively chosen ladder of temperatures. Every rung applies
//! importance reweighting followed by a waste-free move: `M` starting points
//! are resampled and each runs a chain of length `P` under the preconditioned
//! kernel, and all `M * P` visited states become the new, equally weighted,
//! particles.

mod assimilation;
mod prior;
mod resample;
mod target;
mod wastefree;
mod weights;

pub use assimilation::{episode_count, episode_window, run_assimilation, Assimilator, EpisodeWindow};
pub use prior::{prior_logpdf, prior_neg_log_grad, prior_sample, PriorSpec};
pub use resample::{offspring_counts, systematic_resample, systematic_resample_with_offset};
pub use target::{ForecastTarget, GaussianMeanTarget, Target};
pub use wastefree::{wastefree_move, MoveSpec};
pub use weights::{cess, ess, find_next_temperature, normalize, TEMPERATURE_TOL};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernel::KernelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmcConfig {
    /// Number of particles; must equal `m * p`.
    pub n: usize,
    /// Number of chains per move.
    pub m: usize,
    /// Length of each chain, counting its starting point.
    pub p: usize,
    /// Episode length in time indices.
    pub tau: usize,
    pub cess_threshold: f64,
    /// Past time indices subsampled per history-gradient estimate.
    pub grad_batch: usize,
    /// Optional cap on the number of assimilated episodes.
    pub episodes: Option<usize>,
    pub prior: PriorSpec,
    pub kernel: KernelConfig,
    pub exec: Exec,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            n: 150,
            m: 30,
            p: 5,
            tau: 100,
            cess_threshold: 75.0,
            grad_batch: 100,
            episodes: None,
            prior: PriorSpec::Gaussian,
            kernel: KernelConfig::default(),
            exec: Exec::default(),
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.p == 0 || self.n != self.m * self.p {
            return Err(Error::Config(format!(
                "smc.n = {} must equal smc.m * smc.p = {} * {} with both positive",
                self.n, self.m, self.p
            )));
        }
        if !(self.cess_threshold > 0.0 && self.cess_threshold <= self.n as f64) {
            return Err(Error::Config(format!(
                "smc.cess_threshold = {} outside (0, {}]",
                self.cess_threshold, self.n
            )));
        }
        if self.tau == 0 || self.grad_batch == 0 {
            return Err(Error::Config("smc.tau and smc.grad_batch must be positive".into()));
        }
        self.prior.validate()?;
        self.kernel.validate()
    }
}

/// Weighted particle approximation of one episodic posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    /// Number of episodes assimilated so far.
    pub episode_index: usize,
}

impl ParticleEnsemble {
    pub fn equally_weighted(particles: Vec<Vec<f64>>, episode_index: usize) -> Self {
        let n = particles.len();
        ParticleEnsemble {
            particles,
            log_weights: vec![-(n as f64).ln(); n],
            episode_index,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        normalize(&self.log_weights).map(|(w, _)| w)
    }

    /// Adds `-scale * delta_alpha * losses[i]` to each log-weight and
    /// renormalises. Returns the log normalising increment
    /// `log sum_i W_i exp(-scale * delta_alpha * losses[i])`.
    pub fn reweight(&mut self, losses: &[f64], delta_alpha: f64, scale: f64) -> Result<f64> {
        if losses.len() != self.len() {
            return Err(Error::Dimension {
                what: "loss increments",
                expected: self.len(),
                got: losses.len(),
            });
        }
        if !(delta_alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("delta_alpha = {delta_alpha} is negative")));
        }
        let (_, base) = normalize(&self.log_weights)?;
        let shifted: Vec<f64> = self
            .log_weights
            .iter()
            .zip(losses)
            .map(|(lw, l)| lw - base - scale * delta_alpha * l)
            .collect();
        let (w, log_z) = normalize(&shifted)?;
        self.log_weights = w.iter().map(|x| x.ln()).collect();
        Ok(log_z)
    }

    /// Weighted mean and (biased) variance of each coordinate.
    pub fn moments(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let w = self.weights()?;
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (wi, x) in w.iter().zip(&self.particles) {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += wi * v);
        }
        let mut var = vec![0.0; d];
        for (wi, x) in w.iter().zip(&self.particles) {
            var.iter_mut().zip(x.iter().zip(&mean)).for_each(|(s, (v, m))| *s += wi * (v - m) * (v - m));
        }
        Ok((mean, var))
    }
}

/// Temperatures and CESS values visited during one episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemperingRecord {
    pub alphas: Vec<f64>,
    pub cess_values: Vec<f64>,
}
