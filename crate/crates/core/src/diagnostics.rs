//! Forecast diagnostics: calibration error of central credible intervals,
//! range-normalised RMSE and the coefficient of determination.

use std::ops::Range;

use rand::Rng;

use crate::dgfm::{standard_normals, Network};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lorenz96::TimeSeries;
use crate::rng::StreamKey;
use crate::smc::{systematic_resample_with_offset, ParticleEnsemble};

/// Number of credible levels in the calibration grid.
pub const ALPHA_GRID: usize = 100;

/// Predictive draws for one time index and the value that was observed.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRecord {
    /// `m_pred` draws of dimension `K`.
    pub draws: Vec<Vec<f64>>,
    pub observation: Vec<f64>,
}

impl ForecastRecord {
    /// Componentwise mean of the draws.
    pub fn point_forecast(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.observation.len()];
        for d in &self.draws {
            m.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= self.draws.len() as f64);
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub episode_index: usize,
    pub calibration_error: f64,
    pub nrmse: f64,
    pub r2: f64,
    pub evaluation_range: Range<usize>,
}

/// `ALPHA_GRID` equally spaced levels strictly inside (0, 1).
pub fn alpha_grid() -> Vec<f64> {
    (1..=ALPHA_GRID).map(|j| j as f64 / (ALPHA_GRID + 1) as f64).collect()
}

/// Quantile of sorted data with linear interpolation between order
/// statistics (position `q (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_records(records: &[ForecastRecord]) -> Result<(usize, usize)> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("no forecast records".into()))?;
    let (m, k) = (first.draws.len(), first.observation.len());
    if m < 2 {
        return Err(Error::InvalidArgument(format!("forecast records need at least 2 draws, got {m}")));
    }
    for (t, r) in records.iter().enumerate() {
        if r.draws.len() != m || r.observation.len() != k || r.draws.iter().any(|d| d.len() != k) {
            return Err(Error::InvalidArgument(format!("forecast record {t} has inconsistent shape")));
        }
    }
    Ok((m, k))
}

/// Mean over components of the median over the alpha grid of
/// `|coverage(alpha) - alpha|`, where coverage is the fraction of records
/// whose observation lies in the central alpha interval of the draws.
pub fn calibration_error(records: &[ForecastRecord]) -> Result<f64> {
    let (m, k) = check_records(records)?;
    if records.len() < 2 {
        return Err(Error::InvalidArgument("calibration error needs at least 2 records".into()));
    }
    let alphas = alpha_grid();
    let mut hits = vec![vec![0usize; alphas.len()]; k];
    let mut col = vec![0.0; m];
    for r in records {
        for (i, hit) in hits.iter_mut().enumerate() {
            col.iter_mut().zip(&r.draws).for_each(|(c, d)| *c = d[i]);
            col.sort_by(f64::total_cmp);
            let y = r.observation[i];
            for (h, &a) in hit.iter_mut().zip(&alphas) {
                let lo = quantile_sorted(&col, 0.5 * (1.0 - a));
                let hi = quantile_sorted(&col, 0.5 * (1.0 + a));
                if lo <= y && y <= hi {
                    *h += 1;
                }
            }
        }
    }
    let n = records.len() as f64;
    let per_component: Vec<f64> = hits
        .iter()
        .map(|hit| {
            let mut gaps: Vec<f64> = hit.iter().zip(&alphas).map(|(&h, a)| (h as f64 / n - a).abs()).collect();
            median(&mut gaps)
        })
        .collect();
    Ok(per_component.iter().sum::<f64>() / k as f64)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_pairs(forecasts: &[Vec<f64>], observations: &[Vec<f64>]) -> Result<usize> {
    if forecasts.len() != observations.len() || observations.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need equal, non-zero numbers of forecasts and observations ({} vs {})",
            forecasts.len(),
            observations.len()
        )));
    }
    let k = observations[0].len();
    if forecasts.iter().chain(observations).any(|v| v.len() != k) {
        return Err(Error::InvalidArgument("forecast and observation dimensions differ".into()));
    }
    Ok(k)
}

/// Per-component `RMSE / (max y - min y)`, averaged over components.
pub fn nrmse(forecasts: &[Vec<f64>], observations: &[Vec<f64>]) -> Result<f64> {
    let k = check_pairs(forecasts, observations)?;
    let n = observations.len() as f64;
    let mut total = 0.0;
    for i in 0..k {
        let (lo, hi) = observations
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y[i]), hi.max(y[i])));
        let range = hi - lo;
        if !(range > 0.0) {
            return Err(Error::InvalidArgument(format!("component {i} of the observations is constant")));
        }
        let mse = forecasts.iter().zip(observations).map(|(f, y)| (f[i] - y[i]).powi(2)).sum::<f64>() / n;
        total += mse.sqrt() / range;
    }
    Ok(total / k as f64)
}

/// `1 - SS_res / SS_tot` with both sums pooled over components; each
/// component is centred at its own mean.
pub fn r2(forecasts: &[Vec<f64>], observations: &[Vec<f64>]) -> Result<f64> {
    let k = check_pairs(forecasts, observations)?;
    let n = observations.len() as f64;
    let (mut res, mut tot) = (0.0, 0.0);
    for i in 0..k {
        let mean = observations.iter().map(|y| y[i]).sum::<f64>() / n;
        tot += observations.iter().map(|y| (y[i] - mean).powi(2)).sum::<f64>();
        res += forecasts.iter().zip(observations).map(|(f, y)| (y[i] - f[i]).powi(2)).sum::<f64>();
    }
    if !(tot > 0.0) {
        return Err(Error::InvalidArgument("observations have zero total variation".into()));
    }
    Ok(1.0 - res / tot)
}

/// All three metrics for a set of records; point forecasts are the
/// predictive means.
pub fn evaluate_records(records: &[ForecastRecord], episode_index: usize, range: Range<usize>) -> Result<MetricsReport> {
    check_records(records)?;
    let points: Vec<Vec<f64>> = records.iter().map(ForecastRecord::point_forecast).collect();
    let obs: Vec<Vec<f64>> = records.iter().map(|r| r.observation.clone()).collect();
    Ok(MetricsReport {
        episode_index,
        calibration_error: calibration_error(records)?,
        nrmse: nrmse(&points, &obs)?,
        r2: r2(&points, &obs)?,
        evaluation_range: range,
    })
}

/// Posterior-predictive records for every index in `range`: each of the
/// `m_pred` draws picks a particle in proportion to its weight and runs one
/// forecast with fresh noise. Index `t` draws from `key.with(t)`.
pub fn posterior_predictive(
    ensemble: &ParticleEnsemble,
    net: &Network,
    series: &TimeSeries,
    range: Range<usize>,
    m_pred: usize,
    key: StreamKey,
    exec: Exec,
) -> Result<Vec<ForecastRecord>> {
    if m_pred < 2 {
        return Err(Error::InvalidArgument(format!("m_pred = {m_pred} is below 2")));
    }
    if range.start < net.window() || range.end > series.len() {
        return Err(Error::InvalidArgument(format!(
            "evaluation range {range:?} outside {}..{}",
            net.window(),
            series.len()
        )));
    }
    let w = ensemble.weights()?;
    let ts: Vec<usize> = range.collect();
    exec.try_map(ts.len(), |j| {
        let t = ts[j];
        let mut rng = key.with(t as u64).rng();
        let u: f64 = rng.random();
        // Particles are selected systematically and sorted so that each
        // distinct particle is encoded once.
        let mut picks = systematic_resample_with_offset(&w, m_pred, u);
        picks.sort_unstable();
        let history = series.window(t, net.window());
        let mut draws = Vec::with_capacity(m_pred);
        let mut i = 0;
        while i < picks.len() {
            let p = picks[i];
            let run = picks[i..].iter().take_while(|&&q| q == p).count();
            let hidden = net.encode(&ensemble.particles[p], history)?;
            for _ in 0..run {
                let noise = standard_normals(&mut rng, net.noise_dim());
                let mut out = vec![0.0; net.obs_dim()];
                net.decode(&ensemble.particles[p], &hidden, &noise, &mut out)?;
                draws.push(out);
            }
            i += run;
        }
        Ok(ForecastRecord {
            draws,
            observation: series.obs(t).to_vec(),
        })
    })
}

/// Posterior-predictive diagnostics of `ensemble` on `range`.
pub fn evaluate_posterior(
    ensemble: &ParticleEnsemble,
    net: &Network,
    series: &TimeSeries,
    range: Range<usize>,
    m_pred: usize,
    key: StreamKey,
    exec: Exec,
) -> Result<MetricsReport> {
    let records = posterior_predictive(ensemble, net, series, range.clone(), m_pred, key, exec)?;
    evaluate_records(&records, ensemble.episode_index, range)
}
