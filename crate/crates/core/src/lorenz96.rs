//! Two-scale Lorenz-96 truth model, the single-scale drift used by the EnKF,
//! a classical RK4 integrator and the recorded observation series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Any state component beyond this magnitude is treated as a blow-up.
pub const BLOW_UP_BOUND: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L96Params {
    /// Number of slow variables.
    pub k: usize,
    /// Fast variables per slow variable.
    pub j: usize,
    pub h: f64,
    pub b: f64,
    pub c: f64,
    pub f: f64,
}

impl Default for L96Params {
    fn default() -> Self {
        L96Params {
            k: 8,
            j: 32,
            h: 1.0,
            b: 10.0,
            c: 10.0,
            f: 20.0,
        }
    }
}

impl L96Params {
    pub fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(Error::Config(format!("lorenz.k = {} must be >= 4", self.k)));
        }
        if self.j < 1 {
            return Err(Error::Config("lorenz.j must be >= 1".into()));
        }
        if self.b == 0.0 {
            return Err(Error::Config("lorenz.b must be non-zero".into()));
        }
        Ok(())
    }

    /// Length of the flattened `[y, x]` state.
    pub fn state_len(&self) -> usize {
        self.k * (1 + self.j)
    }
}

/// Slow variables `y` (K) and fast variables `x` (J*K).
#[derive(Clone, Debug, PartialEq)]
pub struct L96State {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
}

impl L96State {
    /// `y_1 = x_1 = 1`, everything else zero.
    pub fn initial(p: &L96Params) -> Self {
        let mut y = vec![0.0; p.k];
        let mut x = vec![0.0; p.k * p.j];
        y[0] = 1.0;
        x[0] = 1.0;
        L96State { y, x }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.y.iter().chain(&self.x).copied().collect()
    }

    pub fn from_flat(flat: &[f64], k: usize) -> Self {
        L96State {
            y: flat[..k].to_vec(),
            x: flat[k..].to_vec(),
        }
    }
}

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Two-scale drift on a flattened `[y, x]` state.
pub fn drift_full_flat(p: &L96Params, s: &[f64], out: &mut [f64]) {
    let (k_n, j_n) = (p.k, p.j);
    let (y, x) = s.split_at(k_n);
    let (dy, dx) = out.split_at_mut(k_n);
    let coupling = p.h * p.c / p.b;
    let nx = k_n * j_n;
    for k in 0..k_n {
        let ki = k as isize;
        let fast: f64 = x[k * j_n..(k + 1) * j_n].iter().sum();
        dy[k] = -y[wrap(ki - 1, k_n)] * (y[wrap(ki - 2, k_n)] - y[wrap(ki + 1, k_n)]) - y[k] + p.f
            - coupling * fast;
    }
    let cb = p.c * p.b;
    for j in 0..nx {
        let ji = j as isize;
        dx[j] = -cb * x[wrap(ji + 1, nx)] * (x[wrap(ji + 2, nx)] - x[wrap(ji - 1, nx)]) - p.c * x[j]
            + coupling * y[j / j_n];
    }
}

pub fn drift_full(state: &L96State, p: &L96Params) -> L96State {
    let flat = state.to_flat();
    let mut out = vec![0.0; flat.len()];
    drift_full_flat(p, &flat, &mut out);
    L96State::from_flat(&out, p.k)
}

/// Single-scale drift `(y_{k+1} - y_{k-2}) y_{k-1} - y_k + F_k`, cyclic.
pub fn drift_misspecified_into(y: &[f64], forcing: &[f64], out: &mut [f64]) {
    let n = y.len();
    for k in 0..n {
        let ki = k as isize;
        out[k] = (y[wrap(ki + 1, n)] - y[wrap(ki - 2, n)]) * y[wrap(ki - 1, n)] - y[k] + forcing[k];
    }
}

pub fn drift_misspecified(y: &[f64], forcing: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    drift_misspecified_into(y, forcing, &mut out);
    out
}

/// Reusable stage buffers for classical fourth-order Runge-Kutta.
#[derive(Clone, Debug, Default)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// Advances `state` by `dt` in place.
    pub fn step<F>(&mut self, state: &mut [f64], dt: f64, mut drift: F) -> Result<()>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let n = state.len();
        if self.k1.len() != n {
            *self = Rk4::new(n);
        }
        drift(state, &mut self.k1);
        shifted(&mut self.tmp, state, 0.5 * dt, &self.k1);
        drift(&self.tmp, &mut self.k2);
        shifted(&mut self.tmp, state, 0.5 * dt, &self.k2);
        drift(&self.tmp, &mut self.k3);
        shifted(&mut self.tmp, state, dt, &self.k3);
        drift(&self.tmp, &mut self.k4);
        let ks = self.k1.iter().zip(&self.k2).zip(self.k3.iter().zip(&self.k4));
        for (s, ((a, b), (c, d))) in state.iter_mut().zip(ks) {
            *s += dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);
        }
        if let Some(i) = state.iter().position(|v| !v.is_finite() || v.abs() > BLOW_UP_BOUND) {
            return Err(Error::Numerical(format!(
                "RK4 blow-up: component {i} = {} (dt = {dt})",
                state[i]
            )));
        }
        Ok(())
    }
}

/// `out = x + h k`.
fn shifted(out: &mut [f64], x: &[f64], h: f64, k: &[f64]) {
    for ((o, x), k) in out.iter_mut().zip(x).zip(k) {
        *o = x + h * k;
    }
}

/// One classical RK4 step.
pub fn rk4_step<F>(state: &[f64], dt: f64, drift: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    let mut s = state.to_vec();
    Rk4::new(s.len()).step(&mut s, dt, drift)?;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub delta_t: f64,
    pub burn_in: f64,
    pub duration: f64,
    pub split: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.001,
            delta_t: 0.2,
            burn_in: 2.0,
            duration: 4000.0,
            split: 0.8,
        }
    }
}

/// `x / unit` as an integer, if it is one (relative tolerance 1e-9).
pub(crate) fn whole_multiple(x: f64, unit: f64) -> Option<usize> {
    let r = x / unit;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * n.max(1.0) && n >= 0.0).then_some(n as usize)
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.delta_t > 0.0) {
            return Err(Error::Config("sim.dt and sim.delta_t must be positive".into()));
        }
        if whole_multiple(self.delta_t, self.dt).filter(|&n| n > 0).is_none() {
            return Err(Error::Config(format!(
                "sim.delta_t = {} is not an integer multiple of sim.dt = {}",
                self.delta_t, self.dt
            )));
        }
        if whole_multiple(self.burn_in, self.dt).is_none() {
            return Err(Error::Config("sim.burn_in must be a multiple of sim.dt".into()));
        }
        if whole_multiple(self.duration, self.delta_t).is_none() {
            return Err(Error::Config("sim.duration must be a multiple of sim.delta_t".into()));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Config(format!("sim.split = {} outside (0, 1)", self.split)));
        }
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        whole_multiple(self.duration, self.delta_t).unwrap_or(0)
    }
}

/// Ordered multivariate observations, stored row-major (`T x dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    obs: Vec<f64>,
    dim: usize,
    pub delta_t: f64,
    /// Time stamp of the first observation.
    pub start_time: f64,
    /// Observations `0..train_end` are training data.
    pub train_end: usize,
}

impl TimeSeries {
    pub fn new(obs: Vec<f64>, dim: usize, delta_t: f64, train_end: usize) -> Result<Self> {
        if dim == 0 || !obs.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of width {dim}",
                obs.len()
            )));
        }
        let t = obs.len() / dim;
        if !(0 < train_end && train_end < t) {
            return Err(Error::InvalidArgument(format!(
                "train_end {train_end} must lie strictly inside 0..{t}"
            )));
        }
        if let Some(i) = obs.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("observation value {i} is not finite")));
        }
        Ok(TimeSeries {
            obs,
            dim,
            delta_t,
            start_time: delta_t,
            train_end,
        })
    }

    pub fn len(&self) -> usize {
        self.obs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn obs(&self, t: usize) -> &[f64] {
        &self.obs[t * self.dim..(t + 1) * self.dim]
    }

    /// Observations `t-k .. t`, flattened.
    pub fn window(&self, t: usize, k: usize) -> &[f64] {
        &self.obs[(t - k) * self.dim..t * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.obs
    }

    pub fn time(&self, t: usize) -> f64 {
        self.start_time + t as f64 * self.delta_t
    }

    /// Scalar mean and standard deviation over all training entries.
    pub fn training_scale(&self) -> Standardizer {
        let train = &self.obs[..self.train_end * self.dim];
        let n = train.len() as f64;
        let mean = train.iter().sum::<f64>() / n;
        let var = train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Standardizer {
            mean,
            scale: if var > 0.0 { var.sqrt() } else { 1.0 },
        }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> TimeSeries {
        TimeSeries {
            obs: self.obs.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// One affine map `(v - mean) / scale` applied to every component. Because it
/// is the same for all components, calibration error, NRMSE and R^2 are
/// unchanged by it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: 0.0, scale: 1.0 };

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.scale + self.mean
    }

    pub fn apply(&self, s: &TimeSeries) -> TimeSeries {
        s.map_values(|v| self.forward(v))
    }
}

/// Integrates the two-scale system and records the slow variables.
pub fn generate_dataset(p: &L96Params, sim: &SimConfig) -> Result<TimeSeries> {
    p.validate()?;
    sim.validate()?;
    let per_record = whole_multiple(sim.delta_t, sim.dt).expect("validated");
    let burn_steps = whole_multiple(sim.burn_in, sim.dt).expect("validated");
    let records = sim.record_count();
    if records < 2 {
        return Err(Error::Config(format!(
            "sim.duration = {} yields {records} records; need at least 2",
            sim.duration
        )));
    }
    let mut state = L96State::initial(p).to_flat();
    let mut rk = Rk4::new(state.len());
    let drift = |s: &[f64], o: &mut [f64]| drift_full_flat(p, s, o);
    for _ in 0..burn_steps {
        rk.step(&mut state, sim.dt, drift)?;
    }
    let mut obs = Vec::with_capacity(records * p.k);
    for _ in 0..records {
        for _ in 0..per_record {
            rk.step(&mut state, sim.dt, drift)?;
        }
        obs.extend_from_slice(&state[..p.k]);
    }
    let train_end = ((sim.split * records as f64).floor() as usize).clamp(1, records - 1);
    let mut series = TimeSeries::new(obs, p.k, sim.delta_t, train_end)?;
    series.start_time = sim.burn_in + sim.delta_t;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_drift_is_forcing() {
        let p = L96Params::default();
        let s = L96State {
            y: vec![0.0; 8],
            x: vec![0.0; 256],
        };
        let d = drift_full(&s, &p);
        assert!(d.y.iter().all(|v| *v == 20.0));
        assert!(d.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn no_fast_activity_leaves_single_scale_slow_drift() {
        let p = L96Params::default();
        let y: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).sin() * 4.0).collect();
        let s = L96State {
            y: y.clone(),
            x: vec![0.0; 256],
        };
        let d = drift_full(&s, &p);
        let single = drift_misspecified(&y, &[20.0; 8]);
        for (a, b) in d.y.iter().zip(&single) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// K = 4, J = 1, h = b = c = 1, F = 2, y = (1,2,3,4), x = (1,0,2,1),
    /// evaluated by hand from the two-scale equations.
    #[test]
    fn hand_evaluated_small_system() {
        let p = L96Params {
            k: 4,
            j: 1,
            h: 1.0,
            b: 1.0,
            c: 1.0,
            f: 2.0,
        };
        let s = L96State {
            y: vec![1.0, 2.0, 3.0, 4.0],
            x: vec![1.0, 0.0, 2.0, 1.0],
        };
        let d = drift_full(&s, &p);
        // dy1 = -y4 (y3 - y2) - y1 + F - x1 = -4*1 - 1 + 2 - 1 = -4
        // dy2 = -y1 (y4 - y3) - y2 + F - x2 = -1 - 2 + 2 - 0 = -1
        // dy3 = -y2 (y1 - y4) - y3 + F - x3 = 6 - 3 + 2 - 2 = 3
        // dy4 = -y3 (y2 - y1) - y4 + F - x4 = -3 - 4 + 2 - 1 = -6
        assert_eq!(d.y, vec![-4.0, -1.0, 3.0, -6.0]);
        // dx1 = -x2 (x3 - x4) - x1 + y1 = 0 - 1 + 1 = 0
        // dx2 = -x3 (x4 - x1) - x2 + y2 = 0 - 0 + 2 = 2
        // dx3 = -x4 (x1 - x2) - x3 + y3 = -1 - 2 + 3 = 0
        // dx4 = -x1 (x2 - x3) - x4 + y4 = 2 - 1 + 4 = 5
        assert_eq!(d.x, vec![0.0, 2.0, 0.0, 5.0]);
    }

    #[test]
    fn misspecified_drift_cases() {
        assert_eq!(drift_misspecified(&[0.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(drift_misspecified(&[2.5; 6], &[0.0; 6]), vec![-2.5; 6]);
    }

    #[test]
    fn decoupled_limit_matches() {
        let p = L96Params {
            h: 0.0,
            ..L96Params::default()
        };
        let flat: Vec<f64> = (0..p.state_len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let mut out = vec![0.0; flat.len()];
        drift_full_flat(&p, &flat, &mut out);
        let single = drift_misspecified(&flat[..8], &[20.0; 8]);
        assert_eq!(&out[..8], &single[..]);
    }

    #[test]
    fn drift_is_cyclic_shift_equivariant() {
        let p = L96Params {
            j: 3,
            ..L96Params::default()
        };
        let s = L96State {
            y: (0..8).map(|i| (i as f64).cos() * 3.0).collect(),
            x: (0..24).map(|i| (i as f64 * 0.37).sin()).collect(),
        };
        let rot = |v: &[f64], by: usize| -> Vec<f64> {
            let n = v.len();
            (0..n).map(|i| v[(i + n - by) % n]).collect()
        };
        let shifted = L96State {
            y: rot(&s.y, 1),
            x: rot(&s.x, 3),
        };
        let d = drift_full(&s, &p);
        let ds = drift_full(&shifted, &p);
        for (a, b) in ds.y.iter().zip(rot(&d.y, 1)) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in ds.x.iter().zip(rot(&d.x, 3)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rk4_zero_drift_and_decay() {
        let s = rk4_step(&[1.0, -2.0], 0.1, |_, o| o.fill(0.0)).unwrap();
        assert_eq!(s, vec![1.0, -2.0]);
        let s = rk4_step(&[1.0], 0.1, |y, o| o[0] = -y[0]).unwrap();
        // 1 - h + h^2/2 - h^3/6 + h^4/24 at h = 0.1
        assert!((s[0] - 0.9048375).abs() < 1e-12);
        assert!((s[0] - (-0.1f64).exp()).abs() < 1e-7);
        assert!(rk4_step(&[1.0], 0.0, |_, o| o.fill(0.0)).is_err());
    }

    #[test]
    fn rk4_reports_blow_up() {
        let err = rk4_step(&[1e5], 1.0, |y, o| o[0] = y[0] * y[0]).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn short_dataset_shape_and_determinism() {
        let p = L96Params::default();
        let sim = SimConfig {
            duration: 2.0,
            ..SimConfig::default()
        };
        let a = generate_dataset(&p, &sim).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.dim(), 8);
        assert_eq!(a.train_end, 8);
        assert!((a.time(0) - 2.2).abs() < 1e-12);
        let b = generate_dataset(&p, &sim).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn sim_config_validation() {
        assert_eq!(SimConfig::default().record_count(), 20000);
        let bad = SimConfig {
            delta_t: 0.2005,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SimConfig { split: 1.0, ..SimConfig::default() }.validate().is_err());
    }

    #[test]
    fn standardizer_round_trip() {
        let s = TimeSeries::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 0.2, 2).unwrap();
        let z = s.training_scale();
        assert!((z.mean - 2.5).abs() < 1e-15);
        let back = z.apply(&s).map_values(|v| z.inverse(v));
        for (a, b) in back.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
