//! Preconditioned thermostat kernel used to move particles.
//!
//! One step applies, in order: the RMSprop-style accumulator and
//! preconditioner update, a half drift of `theta`, a thermostat update, the
//! split momentum update (friction, gradient kick plus injected noise,
//! friction), a second thermostat update and the second half drift. All
//! operations are elementwise. There is no accept/reject correction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgfm::standard_normals;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Learning rate.
    pub eta: f64,
    /// Decay of the squared-gradient average, in (0, 1).
    pub sigma: f64,
    /// Preconditioner regulariser.
    pub lambda: f64,
    /// Initial thermostat value (every coordinate).
    pub alpha0: f64,
    /// Gradient-scale normaliser. `None` lets the sampler use the number of
    /// time indices contributing to the current loss.
    pub t_scale: Option<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            eta: 1e-6,
            sigma: 0.99,
            lambda: 1e-8,
            alpha0: 1e-2,
            t_scale: None,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.lambda > 0.0) {
            return Err(Error::Config("kernel.eta and kernel.lambda must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::Config(format!("kernel.sigma = {} outside (0, 1)", self.sigma)));
        }
        if !self.alpha0.is_finite() {
            return Err(Error::Config("kernel.alpha0 must be finite".into()));
        }
        if let Some(t) = self.t_scale {
            if !(t > 0.0) {
                return Err(Error::Config("kernel.t_scale must be positive".into()));
            }
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.t_scale.unwrap_or(1.0)
    }
}

/// Per-chain state.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelState {
    pub theta: Vec<f64>,
    /// Momentum.
    pub u: Vec<f64>,
    /// Thermostat.
    pub alpha: Vec<f64>,
    /// Squared-gradient moving average.
    pub v: Vec<f64>,
    /// Preconditioner from the previous step.
    pub g_prev: Vec<f64>,
}

pub fn kernel_init<R: Rng + ?Sized>(theta: Vec<f64>, cfg: &KernelConfig, rng: &mut R) -> KernelState {
    let p = theta.len();
    let sd = cfg.eta.sqrt();
    let u = standard_normals(rng, p).into_iter().map(|z| sd * z).collect();
    KernelState {
        theta,
        u,
        alpha: vec![cfg.alpha0; p],
        v: vec![0.0; p],
        g_prev: vec![1.0 / cfg.lambda.sqrt(); p],
    }
}

/// One kernel step with explicit injected noise `zeta`.
pub fn kernel_step_with_noise(state: &mut KernelState, grad: &[f64], cfg: &KernelConfig, zeta: &[f64]) -> Result<()> {
    let p = state.theta.len();
    if grad.len() != p || zeta.len() != p {
        return Err(Error::Dimension {
            what: "kernel gradient/noise",
            expected: p,
            got: if grad.len() != p { grad.len() } else { zeta.len() },
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient coordinate {i}")));
    }
    let KernelConfig { eta, sigma, lambda, .. } = *cfg;
    let t = cfg.scale();
    let decay = (1.0 - sigma) / (t * t);
    let noise_coef = 2.0 * eta.powf(1.5);
    for i in 0..p {
        let f = grad[i];
        let v = sigma * state.v[i] + decay * f * f;
        let g = 1.0 / (lambda + v.sqrt()).sqrt();
        let mut theta = state.theta[i] + 0.5 * g * state.u[i];
        let mut alpha = state.alpha[i] + 0.5 * (state.u[i] * state.u[i] - eta);
        let friction = (-alpha / 2.0).exp();
        let mut u = friction * state.u[i];
        u = u - eta * g * f + (noise_coef * state.g_prev[i]).sqrt() * zeta[i];
        u *= friction;
        alpha += 0.5 * (u * u - eta);
        theta += 0.5 * g * u;
        if !(theta.is_finite() && u.is_finite() && alpha.is_finite()) {
            return Err(Error::Numerical(format!(
                "kernel step produced non-finite state at coordinate {i}"
            )));
        }
        state.v[i] = v;
        state.theta[i] = theta;
        state.alpha[i] = alpha;
        state.u[i] = u;
        state.g_prev[i] = g;
    }
    Ok(())
}

/// One kernel step with `zeta ~ N(0, I)` drawn from `rng`.
pub fn kernel_step<R: Rng + ?Sized>(state: &mut KernelState, grad: &[f64], cfg: &KernelConfig, rng: &mut R) -> Result<()> {
    let zeta = standard_normals(rng, state.theta.len());
    kernel_step_with_noise(state, grad, cfg, &zeta)
}

/// Runs `steps` kernel steps from `start`; returns the start followed by
/// every post-step position. `gradient(theta, rng)` must return a
/// (stochastic) gradient of the potential at `theta`.
pub fn run_chain<R, G>(start: Vec<f64>, mut gradient: G, steps: usize, cfg: &KernelConfig, rng: &mut R) -> Result<Vec<Vec<f64>>>
where
    R: Rng + ?Sized,
    G: FnMut(&[f64], &mut R) -> Result<Vec<f64>>,
{
    let mut visited = Vec::with_capacity(steps + 1);
    visited.push(start.clone());
    if steps == 0 {
        return Ok(visited);
    }
    let mut state = kernel_init(start, cfg, rng);
    for step in 0..steps {
        let wrap = |e: Error| match e {
            Error::Numerical(m) => Error::Numerical(format!("step {step}: {m}")),
            other => other,
        };
        let grad = gradient(&state.theta, rng).map_err(wrap)?;
        kernel_step(&mut state, &grad, cfg, rng).map_err(wrap)?;
        visited.push(state.theta.clone());
    }
    Ok(visited)
}
