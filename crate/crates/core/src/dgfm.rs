//! Deep generative forecasting model.
//!
//! A window of `k` past observations is run through a single-layer GRU
//! (zero initial state). The final hidden state is concatenated with
//! auxiliary standard-Gaussian noise and decoded by a dense chain (tanh on
//! hidden layers, identity on the output) into one forecast sample.
//!
//! Parameter layout, in order:
//! `W_ir, W_iz, W_in` (`H x l` each), `W_hr, W_hz, W_hn` (`H x H` each),
//! `b_ir, b_iz, b_in, b_hr, b_hz, b_hn` (`H` each), then for every dense
//! layer its row-major weight matrix followed by its bias.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{Domain, StreamKey};

pub type ParamVector = Vec<f64>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    /// Markov order `k`: number of past observations fed to the encoder.
    pub window: usize,
    pub obs_dim: usize,
    pub gru_hidden: usize,
    pub dense_widths: Vec<usize>,
    pub noise_dim: usize,
}

impl Default for NetworkSpec {
    /// Lorenz-96 architecture: 8 observed components, order 10, GRU(16),
    /// one noise coordinate and a 45-44-8 dense head (4442 parameters).
    fn default() -> Self {
        NetworkSpec {
            window: 10,
            obs_dim: 8,
            gru_hidden: 16,
            dense_widths: vec![45, 44, 8],
            noise_dim: 1,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("network: {m}")));
        if self.window == 0 || self.obs_dim == 0 || self.gru_hidden == 0 || self.noise_dim == 0 {
            return bad("window, obs_dim, gru_hidden and noise_dim must be >= 1");
        }
        match self.dense_widths.last() {
            None => bad("dense_widths must not be empty"),
            Some(&w) if w != self.obs_dim => bad("last dense width must equal obs_dim"),
            _ if self.dense_widths.contains(&0) => bad("dense widths must be >= 1"),
            _ => Ok(()),
        }
    }
}

/// Exact number of trainable parameters for `spec`.
pub fn param_count(spec: &NetworkSpec) -> usize {
    let h = spec.gru_hidden;
    let gru = 3 * (h * spec.obs_dim + h * h + 2 * h);
    let mut fan_in = h + spec.noise_dim;
    let mut dense = 0;
    for &w in &spec.dense_widths {
        dense += w * fan_in + w;
        fan_in = w;
    }
    gru + dense
}

/// I.i.d. `N(0, scale^2)` parameters, deterministic in `seed`.
pub fn init_params(spec: &NetworkSpec, seed: u64, scale: f64) -> ParamVector {
    assert!(scale > 0.0, "init scale must be positive");
    let mut rng = StreamKey::new(seed, Domain::Prior).rng();
    (0..param_count(spec))
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct DenseLayer {
    w: usize,
    b: usize,
    fan_in: usize,
    width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct GruOffsets {
    w_i: [usize; 3],
    w_h: [usize; 3],
    b_i: [usize; 3],
    b_h: [usize; 3],
}

/// Architecture with its resolved parameter layout. Stateless and cheap to
/// share; every method takes the parameter slice explicitly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    spec: NetworkSpec,
    gru: GruOffsets,
    dense: Vec<DenseLayer>,
    n_params: usize,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let (h, l) = (spec.gru_hidden, spec.obs_dim);
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let w_i = [take(h * l), take(h * l), take(h * l)];
        let w_h = [take(h * h), take(h * h), take(h * h)];
        let b_i = [take(h), take(h), take(h)];
        let b_h = [take(h), take(h), take(h)];
        let mut dense = Vec::with_capacity(spec.dense_widths.len());
        let mut fan_in = h + spec.noise_dim;
        for &width in &spec.dense_widths {
            let w = take(width * fan_in);
            let b = take(width);
            dense.push(DenseLayer { w, b, fan_in, width });
            fan_in = width;
        }
        debug_assert_eq!(off, param_count(&spec));
        Ok(Network {
            gru: GruOffsets { w_i, w_h, b_i, b_h },
            dense,
            n_params: off,
            spec,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    pub fn window(&self) -> usize {
        self.spec.window
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.obs_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.spec.noise_dim
    }

    fn check(&self, params: &[f64], history: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: self.n_params,
                got: params.len(),
            });
        }
        let want = self.spec.window * self.spec.obs_dim;
        if history.len() != want {
            return Err(Error::Dimension {
                what: "history window",
                expected: want,
                got: history.len(),
            });
        }
        Ok(())
    }

    /// Final GRU hidden state for a flattened `k x l` history window.
    pub fn encode(&self, params: &[f64], history: &[f64]) -> Result<Vec<f64>> {
        self.check(params, history)?;
        let (h_dim, l) = (self.spec.gru_hidden, self.spec.obs_dim);
        let g = &self.gru;
        let mut h = vec![0.0; h_dim];
        let mut gi = [vec![0.0; h_dim], vec![0.0; h_dim], vec![0.0; h_dim]];
        let mut gh = [vec![0.0; h_dim], vec![0.0; h_dim], vec![0.0; h_dim]];
        for x in history.chunks_exact(l) {
            for gate in 0..3 {
                affine(params, g.w_i[gate], g.b_i[gate], x, &mut gi[gate]);
                affine(params, g.w_h[gate], g.b_h[gate], &h, &mut gh[gate]);
            }
            for j in 0..h_dim {
                let r = crate::autodiff::sigmoid(gi[0][j] + gh[0][j]);
                let z = crate::autodiff::sigmoid(gi[1][j] + gh[1][j]);
                let n = (gi[2][j] + r * gh[2][j]).tanh();
                h[j] = n + z * (h[j] - n);
            }
        }
        Ok(h)
    }

    /// Decodes `[hidden, noise]` into one forecast written to `out`.
    pub fn decode(&self, params: &[f64], hidden: &[f64], noise: &[f64], out: &mut [f64]) -> Result<()> {
        if noise.len() != self.spec.noise_dim {
            return Err(Error::Dimension {
                what: "noise vector",
                expected: self.spec.noise_dim,
                got: noise.len(),
            });
        }
        if out.len() != self.spec.obs_dim {
            return Err(Error::Dimension {
                what: "forecast buffer",
                expected: self.spec.obs_dim,
                got: out.len(),
            });
        }
        let mut cur: Vec<f64> = hidden.iter().chain(noise).copied().collect();
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate() {
            let mut next = vec![0.0; layer.width];
            affine(params, layer.w, layer.b, &cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            cur = next;
        }
        out.copy_from_slice(&cur);
        Ok(())
    }

    pub fn simulate_forecast(&self, params: &[f64], history: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        let h = self.encode(params, history)?;
        let mut out = vec![0.0; self.spec.obs_dim];
        self.decode(params, &h, noise, &mut out)?;
        Ok(out)
    }

    /// `m` forecasts pushed through caller-supplied noise (`m * noise_dim`
    /// values); returns a flat `m x obs_dim` buffer.
    pub fn forecast_with_noise(&self, params: &[f64], history: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        let q = self.spec.noise_dim;
        if noise.is_empty() || !noise.len().is_multiple_of(q) {
            return Err(Error::Dimension {
                what: "ensemble noise",
                expected: q,
                got: noise.len(),
            });
        }
        let h = self.encode(params, history)?;
        let l = self.spec.obs_dim;
        let mut out = vec![0.0; noise.len() / q * l];
        for (w, o) in noise.chunks_exact(q).zip(out.chunks_exact_mut(l)) {
            self.decode(params, &h, w, o)?;
        }
        Ok(out)
    }

    /// `m >= 2` forecasts from fresh standard-Gaussian noise drawn from `rng`.
    pub fn forecast_ensemble<R: Rng + ?Sized>(
        &self,
        params: &[f64],
        history: &[f64],
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "forecast ensemble needs at least 2 members, got {m}"
            )));
        }
        let noise = standard_normals(rng, m * self.spec.noise_dim);
        let flat = self.forecast_with_noise(params, history, &noise)?;
        Ok(flat.chunks_exact(self.spec.obs_dim).map(<[f64]>::to_vec).collect())
    }

    /// Records the encoder on `tape`; the tape must borrow this network's parameters.
    pub fn record_encoder(&self, tape: &mut Tape<'_>, history: &[f64]) -> Result<Var, AdError> {
        let (h_dim, l) = (self.spec.gru_hidden, self.spec.obs_dim);
        let g = &self.gru;
        let mut h = tape.input(&vec![0.0; h_dim])?;
        for x in history.chunks_exact(l) {
            let x = tape.input(x)?;
            let ir = tape.affine(x, g.w_i[0], h_dim, Some(g.b_i[0]))?;
            let hr = tape.affine(h, g.w_h[0], h_dim, Some(g.b_h[0]))?;
            let r = tape.add(ir, hr)?;
            let r = tape.sigmoid(r)?;
            let iz = tape.affine(x, g.w_i[1], h_dim, Some(g.b_i[1]))?;
            let hz = tape.affine(h, g.w_h[1], h_dim, Some(g.b_h[1]))?;
            let z = tape.add(iz, hz)?;
            let z = tape.sigmoid(z)?;
            let inn = tape.affine(x, g.w_i[2], h_dim, Some(g.b_i[2]))?;
            let hn = tape.affine(h, g.w_h[2], h_dim, Some(g.b_h[2]))?;
            let rn = tape.mul(r, hn)?;
            let n = tape.add(inn, rn)?;
            let n = tape.tanh(n)?;
            let d = tape.sub(h, n)?;
            let zd = tape.mul(z, d)?;
            h = tape.add(n, zd)?;
        }
        Ok(h)
    }

    pub fn record_decoder(&self, tape: &mut Tape<'_>, hidden: Var, noise: &[f64]) -> Result<Var, AdError> {
        let w = tape.input(noise)?;
        let mut cur = tape.concat(hidden, w)?;
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate() {
            cur = tape.affine(cur, layer.w, layer.width, Some(layer.b))?;
            if i < last {
                cur = tape.tanh(cur)?;
            }
        }
        Ok(cur)
    }
}

/// `out = W x + b` with the matrix and bias read from `params`.
#[inline]
fn affine(params: &[f64], w: usize, b: usize, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = params[b + i] + crate::autodiff::dot(&params[w + i * cols..w + (i + 1) * cols], x);
    }
}

pub(crate) fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// A network together with one parameter vector.
#[derive(Clone, Debug)]
pub struct ForecastModel {
    net: Network,
    params: ParamVector,
}

impl ForecastModel {
    pub fn new(spec: NetworkSpec, params: ParamVector) -> Result<Self> {
        let net = Network::new(spec)?;
        if params.len() != net.param_count() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: net.param_count(),
                got: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("parameter {i} is not finite")));
        }
        Ok(ForecastModel { net, params })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn simulate_forecast(&self, history: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        self.net.simulate_forecast(&self.params, history, noise)
    }

    pub fn forecast_ensemble<R: Rng + ?Sized>(&self, history: &[f64], m: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        self.net.forecast_ensemble(&self.params, history, m, rng)
    }
}
