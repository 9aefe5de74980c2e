use std::ops::Range;

use rand::seq::index::sample;
use rand::Rng;

use super::prior::{prior_neg_log_grad, PriorSpec};
use super::resample::systematic_resample;
use super::target::Target;
use super::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernel::{run_chain, KernelConfig};
use crate::rng::{StreamKey, StreamRng};

/// The tempered potential
/// `U(theta) = -log prior(theta) + gamma * (L_history(theta) + alpha * L_current(theta))`
/// together with everything a chain needs to move under it.
pub struct MoveSpec<'a, T: Target + ?Sized> {
    pub target: &'a T,
    pub prior: PriorSpec,
    pub gamma: f64,
    pub history: Range<usize>,
    pub current: Range<usize>,
    pub alpha: f64,
    pub grad_batch: usize,
    pub kernel: KernelConfig,
    /// Chain `j` draws from `key.with(j)`.
    pub key: StreamKey,
    pub exec: Exec,
}

impl<T: Target + ?Sized> MoveSpec<'_, T> {
    /// Kernel configuration with the gradient-scale normaliser filled in.
    pub fn kernel_config(&self) -> KernelConfig {
        let count = (self.history.len() + self.current.len()).max(1) as f64;
        KernelConfig {
            t_scale: Some(self.kernel.t_scale.unwrap_or(count)),
            ..self.kernel.clone()
        }
    }

    /// Unbiased estimate of `grad U(theta)`: the history term is estimated
    /// from a uniform subsample of `grad_batch` indices drawn without
    /// replacement, the current episode is summed in full.
    pub fn gradient<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R, noise: StreamKey) -> Result<Vec<f64>> {
        let h = self.history.len();
        let mut indices: Vec<usize>;
        let mut weights: Vec<f64>;
        if h <= self.grad_batch {
            indices = self.history.clone().collect();
            weights = vec![1.0; h];
        } else {
            indices = sample(rng, h, self.grad_batch)
                .into_iter()
                .map(|i| self.history.start + i)
                .collect();
            weights = vec![h as f64 / self.grad_batch as f64; self.grad_batch];
        }
        if self.alpha > 0.0 {
            indices.extend(self.current.clone());
            weights.extend(std::iter::repeat_n(self.alpha, self.current.len()));
        }
        let mut g = self.target.weighted_gradient(theta, &indices, &weights, noise)?;
        let prior = prior_neg_log_grad(&self.prior, theta);
        g.iter_mut().zip(prior).for_each(|(gi, p)| *gi = self.gamma * *gi + p);
        Ok(g)
    }

    /// Runs chain `j` for `steps` kernel steps from `start`.
    pub fn chain(&self, j: usize, start: Vec<f64>, steps: usize) -> Result<Vec<Vec<f64>>> {
        let key = self.key.with(j as u64);
        let mut rng = key.rng();
        let cfg = self.kernel_config();
        let mut step = 0u64;
        let oracle = |theta: &[f64], rng: &mut StreamRng| {
            step += 1;
            self.gradient(theta, rng, key.with(step))
        };
        run_chain(start, oracle, steps, &cfg, &mut rng).map_err(|e| {
            if e.is_numerical() {
                Error::Numerical(format!("chain {j}: {e}"))
            } else {
                e
            }
        })
    }
}

/// Resamples `m` starting points by weight, runs each through a chain of
/// length `p` and pools all `m * p` states with equal weights.
pub fn wastefree_move<T, R>(ensemble: &ParticleEnsemble, spec: &MoveSpec<'_, T>, m: usize, p: usize, rng: &mut R) -> Result<ParticleEnsemble>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
{
    if m == 0 || p == 0 {
        return Err(Error::InvalidArgument(format!("waste-free move needs m, p > 0 (got {m}, {p})")));
    }
    let w = ensemble.weights()?;
    let starts = systematic_resample(&w, m, rng);
    let chains = spec
        .exec
        .try_map(m, |j| spec.chain(j, ensemble.particles[starts[j]].clone(), p - 1))?;
    let particles = chains.into_iter().flatten().collect();
    Ok(ParticleEnsemble::equally_weighted(particles, ensemble.episode_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;
    use crate::smc::target::GaussianMeanTarget;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec<'a>(target: &'a GaussianMeanTarget, history: Range<usize>, alpha: f64, grad_batch: usize) -> MoveSpec<'a, GaussianMeanTarget> {
        MoveSpec {
            target,
            prior: PriorSpec::Gaussian,
            gamma: 1.0,
            history,
            current: 0..0,
            alpha,
            grad_batch,
            kernel: KernelConfig::default(),
            key: StreamKey::new(1, Domain::Test),
            exec: Exec::Sequential,
        }
    }

    #[test]
    fn single_point_chains_only_resample() {
        let target = GaussianMeanTarget::new(vec![vec![0.0]], 1.0).unwrap();
        let s = spec(&target, 0..1, 1.0, 10);
        let ens = ParticleEnsemble {
            particles: vec![vec![1.0], vec![2.0], vec![3.0]],
            log_weights: vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY],
            episode_index: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = wastefree_move(&ens, &s, 5, 1, &mut rng).unwrap();
        assert_eq!(out.particles, vec![vec![2.0]; 5]);
        assert_eq!(out.episode_index, 4);
    }

    #[test]
    fn pooled_size_is_m_times_p() {
        let target = GaussianMeanTarget::new(vec![vec![0.5, 0.1]; 4], 1.0).unwrap();
        let s = spec(&target, 0..4, 1.0, 10);
        let ens = ParticleEnsemble::equally_weighted(vec![vec![0.0, 0.0]; 6], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (m, p) in [(1, 1), (3, 4), (6, 2)] {
            let out = wastefree_move(&ens, &s, m, p, &mut rng).unwrap();
            assert_eq!(out.len(), m * p);
            assert!((out.weights().unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn subsampled_history_gradient_is_unbiased() {
        let obs: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.37).sin() * 3.0]).collect();
        let target = GaussianMeanTarget::new(obs, 0.5).unwrap();
        let theta = [0.2];
        let exact = spec(&target, 0..50, 0.0, 50).gradient(&theta, &mut ChaCha8Rng::seed_from_u64(0), StreamKey::new(0, Domain::Test)).unwrap()[0];
        let sub = spec(&target, 0..50, 0.0, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let reps = 20_000;
        let draws: Vec<f64> = (0..reps)
            .map(|_| sub.gradient(&theta, &mut rng, StreamKey::new(0, Domain::Test)).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * sd / (reps as f64).sqrt(), "{mean} vs {exact}");
    }

    #[test]
    fn current_episode_enters_with_temperature() {
        let target = GaussianMeanTarget::new(vec![vec![1.0], vec![3.0]], 1.0).unwrap();
        let mut s = spec(&target, 0..1, 0.25, 10);
        s.current = 1..2;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = s.gradient(&[0.0], &mut rng, StreamKey::new(0, Domain::Test)).unwrap();
        // prior 0 + history (0 - 1) + 0.25 * (0 - 3)
        assert!((g[0] - (-1.75)).abs() < 1e-15);
        assert_eq!(s.kernel_config().t_scale, Some(2.0));
    }
}
