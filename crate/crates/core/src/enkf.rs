//! Stochastic (perturbed-observation) ensemble Kalman filter with an
//! identity observation operator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lorenz96::{drift_misspecified_into, whole_multiple, Rk4};
use crate::rng::{Domain, StreamKey, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnkfConfig {
    pub ensemble_size: usize,
    /// Observation noise variance (same for every component).
    pub obs_noise_var: f64,
    pub forcing_mean: f64,
    pub forcing_var: f64,
    /// RK4 step of the forecast model.
    pub dt: f64,
    /// Time between observations.
    pub delta_t: f64,
    pub exec: Exec,
}

impl Default for EnkfConfig {
    fn default() -> Self {
        EnkfConfig {
            ensemble_size: 100,
            obs_noise_var: 1.0,
            forcing_mean: 20.0,
            forcing_var: 1.0,
            dt: 0.001,
            delta_t: 0.2,
            exec: Exec::default(),
        }
    }
}

impl EnkfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::Config(format!("enkf.ensemble_size = {} is below 2", self.ensemble_size)));
        }
        if !(self.obs_noise_var > 0.0) || !(self.forcing_var >= 0.0) {
            return Err(Error::Config("enkf variances must be positive".into()));
        }
        if !(self.dt > 0.0 && self.delta_t > 0.0) || whole_multiple(self.delta_t, self.dt).is_none() {
            return Err(Error::Config(format!(
                "enkf.delta_t = {} is not a positive whole multiple of enkf.dt = {}",
                self.delta_t, self.dt
            )));
        }
        Ok(())
    }

    /// The misspecified single-scale model described by this configuration.
    pub fn dynamics(&self) -> Result<MisspecifiedL96> {
        self.validate()?;
        Ok(MisspecifiedL96 {
            forcing: Normal::new(self.forcing_mean, self.forcing_var.sqrt()).map_err(|e| Error::Config(e.to_string()))?,
            dt: self.dt,
            substeps: whole_multiple(self.delta_t, self.dt).unwrap_or(1),
        })
    }
}

/// Ensemble members, each a state vector of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Vec<f64>>,
}

impl Ensemble {
    pub fn new(members: Vec<Vec<f64>>) -> Result<Self> {
        let d = members.first().map_or(0, Vec::len);
        if members.len() < 2 || d == 0 || members.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidArgument(
                "ensemble needs at least 2 members of equal positive dimension".into(),
            ));
        }
        Ok(Ensemble { members })
    }

    /// `n` members drawn from `N(center, var I)`, member `i` from `key.with(i)`.
    pub fn gaussian(center: &[f64], var: f64, n: usize, key: StreamKey) -> Result<Self> {
        let sd = var.sqrt();
        Ensemble::new(
            (0..n)
                .map(|i| {
                    let mut rng = key.with(i as u64).rng();
                    center.iter().map(|c| c + sd * rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for x in &self.members {
            m.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Sample covariance with the `1 / (n - 1)` normalisation.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let (d, n) = (self.dim(), self.len());
        let anomalies = DMatrix::from_fn(d, n, |r, c| self.members[c][r] - mean[r]);
        &anomalies * anomalies.transpose() / (n as f64 - 1.0)
    }
}

/// Stochastic state transition over one observation interval.
pub trait Dynamics: Sync {
    fn propagate(&self, state: &mut [f64], rng: &mut StreamRng) -> Result<()>;
}

/// Single-scale Lorenz-96 drift with a Gaussian forcing vector redrawn once
/// per observation interval, integrated by RK4.
#[derive(Clone, Debug)]
pub struct MisspecifiedL96 {
    forcing: Normal<f64>,
    dt: f64,
    substeps: usize,
}

impl Dynamics for MisspecifiedL96 {
    fn propagate(&self, state: &mut [f64], rng: &mut StreamRng) -> Result<()> {
        let forcing: Vec<f64> = (0..state.len()).map(|_| self.forcing.sample(rng)).collect();
        let mut rk = Rk4::new(state.len());
        for _ in 0..self.substeps {
            rk.step(state, self.dt, |y, out| drift_misspecified_into(y, &forcing, out))?;
        }
        Ok(())
    }
}

/// `x <- a x + sqrt(q) w` componentwise, `w ~ N(0, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct LinearGaussian {
    pub a: f64,
    pub q: f64,
}

impl Dynamics for LinearGaussian {
    fn propagate(&self, state: &mut [f64], rng: &mut StreamRng) -> Result<()> {
        let sd = self.q.sqrt();
        for x in state.iter_mut() {
            *x = self.a * *x + sd * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(())
    }
}

/// Propagates every member over one interval; member `i` draws from `key.with(i)`.
pub fn forecast_step<D: Dynamics + ?Sized>(ens: &Ensemble, dynamics: &D, key: StreamKey, exec: Exec) -> Result<Ensemble> {
    let members = exec.try_map(ens.len(), |i| {
        let mut x = ens.members[i].clone();
        dynamics
            .propagate(&mut x, &mut key.with(i as u64).rng())
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("ensemble member {i}: {m}")),
                other => other,
            })?;
        Ok::<_, Error>(x)
    })?;
    Ok(Ensemble { members })
}

/// Perturbed-observation analysis: `x_i <- x_i + G (y + e_i - x_i)` with
/// `G = C (C + R)^-1`, `R = obs_noise_var I` and `e_i ~ N(0, R)` drawn from
/// `key.with(i)`.
pub fn analysis_step(ens: &Ensemble, y_obs: &[f64], obs_noise_var: f64, key: StreamKey) -> Result<Ensemble> {
    if ens.len() < 2 {
        return Err(Error::InvalidArgument("analysis needs at least 2 members".into()));
    }
    if !(obs_noise_var > 0.0) {
        return Err(Error::InvalidArgument(format!("observation noise variance {obs_noise_var} must be positive")));
    }
    let d = ens.dim();
    if y_obs.len() != d {
        return Err(Error::Dimension {
            what: "observation",
            expected: d,
            got: y_obs.len(),
        });
    }
    let c = ens.covariance();
    let s = &c + DMatrix::identity(d, d) * obs_noise_var;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    // C and S are symmetric, so G^T = S^-1 C.
    let gain = chol.solve(&c).transpose();
    let sd = obs_noise_var.sqrt();
    let members = ens
        .members
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = key.with(i as u64).rng();
            let innov = DVector::from_fn(d, |r, _| y_obs[r] + sd * rng.sample::<f64, _>(StandardNormal) - x[r]);
            let upd = &gain * innov;
            x.iter().zip(upd.iter()).map(|(a, b)| a + b).collect()
        })
        .collect();
    Ok(Ensemble { members })
}

/// Filters `observations` (row-major, `dim` per row) starting from the
/// ensemble `initial` one interval before the first row. After each
/// analysis `on_step(t, predictive, filtered)` is called with the row index.
/// Returns the final filtered ensemble.
pub fn run_filter<D, F>(
    initial: Ensemble,
    observations: &[f64],
    dynamics: &D,
    obs_noise_var: f64,
    seed: u64,
    exec: Exec,
    mut on_step: F,
) -> Result<Ensemble>
where
    D: Dynamics + ?Sized,
    F: FnMut(usize, &Ensemble, &Ensemble) -> Result<()>,
{
    let dim = initial.dim();
    if !observations.len().is_multiple_of(dim) {
        return Err(Error::Dimension {
            what: "observation rows",
            expected: dim,
            got: observations.len() % dim,
        });
    }
    let fkey = StreamKey::new(seed, Domain::EnkfForecast);
    let akey = StreamKey::new(seed, Domain::EnkfAnalysis);
    let mut ens = initial;
    for (t, y) in observations.chunks_exact(dim).enumerate() {
        let pred = forecast_step(&ens, dynamics, fkey.with(t as u64), exec).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("step {t}: {m}")),
            other => other,
        })?;
        ens = analysis_step(&pred, y, obs_noise_var, akey.with(t as u64))?;
        on_step(t, &pred, &ens)?;
    }
    Ok(ens)
}

/// Draws from the predictive distribution of the observation, `x + psi`,
/// one per forecast member.
pub fn predictive_observations(pred: &Ensemble, obs_noise_var: f64, key: StreamKey) -> Vec<Vec<f64>> {
    let sd = obs_noise_var.sqrt();
    let mut rng = key.rng();
    pred.members
        .iter()
        .map(|x| x.iter().map(|v| v + sd * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}
