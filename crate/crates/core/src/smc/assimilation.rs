use std::ops::Range;

use super::prior::prior_sample;
use super::target::Target;
use super::wastefree::{wastefree_move, MoveSpec};
use super::weights::{cess, find_next_temperature};
use super::{ParticleEnsemble, SmcConfig, TemperingRecord};
use crate::error::{Error, Result};
use crate::rng::{Domain, StreamKey};

/// Index ranges of one episode. `current` is the episode's own data and
/// `history` everything assimilated before it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodeWindow {
    /// One-based episode number.
    pub episode: usize,
    pub history: Range<usize>,
    pub current: Range<usize>,
}

/// Episode `i >= 1` covers indices `[tau (i-1), tau i)`, clipped below at
/// the first scoreable index.
pub fn episode_window(episode: usize, tau: usize, first: usize) -> EpisodeWindow {
    let start = (tau * (episode - 1)).max(first);
    let end = (tau * episode).max(first);
    EpisodeWindow {
        episode,
        history: first..start,
        current: start..end,
    }
}

/// Number of complete episodes in `len` indices, optionally capped.
pub fn episode_count(cfg: &SmcConfig, len: usize) -> usize {
    let full = len / cfg.tau;
    cfg.episodes.map_or(full, |cap| cap.min(full))
}

/// Episodic sampler for one target. All randomness is keyed by
/// `(seed, episode, tempering step, particle or chain)`, so an episode is a
/// pure function of the incoming ensemble.
pub struct Assimilator<'a, T: Target + ?Sized> {
    pub cfg: &'a SmcConfig,
    pub target: &'a T,
    pub gamma: f64,
    pub seed: u64,
}

impl<T: Target + ?Sized> Assimilator<'_, T> {
    pub fn episode_count(&self) -> usize {
        episode_count(self.cfg, self.target.len())
    }

    pub fn initial_ensemble(&self) -> Result<ParticleEnsemble> {
        self.cfg.validate()?;
        let key = StreamKey::new(self.seed, Domain::Prior);
        let dim = self.target.dim();
        let particles = self.cfg.exec.try_map(self.cfg.n, |i| {
            let mut rng = key.with(i as u64).rng();
            prior_sample(&self.cfg.prior, dim, 1, &mut rng).map(|mut v| v.remove(0))
        })?;
        Ok(ParticleEnsemble::equally_weighted(particles, 0))
    }

    /// Per-particle loss of the window's current range under common noise.
    fn losses(&self, ens: &ParticleEnsemble, window: &EpisodeWindow, noise: StreamKey) -> Result<Vec<f64>> {
        self.cfg.exec.try_map(ens.len(), |i| {
            self.target
                .loss(&ens.particles[i], window.current.clone(), noise)
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("particle {i}: {m}")),
                    other => other,
                })
        })
    }

    /// Assimilates the episode following `ens.episode_index`.
    pub fn run_episode(&self, ens: &ParticleEnsemble) -> Result<(ParticleEnsemble, TemperingRecord)> {
        let cfg = self.cfg;
        if ens.len() != cfg.n {
            return Err(Error::Dimension {
                what: "ensemble size",
                expected: cfg.n,
                got: ens.len(),
            });
        }
        let episode = ens.episode_index + 1;
        let window = episode_window(episode, cfg.tau, self.target.first_index());
        if window.current.end > self.target.len() {
            return Err(Error::InvalidArgument(format!(
                "episode {episode} needs indices up to {} but only {} are available",
                window.current.end,
                self.target.len()
            )));
        }
        let noise_root = StreamKey::new(self.seed, Domain::EpisodeNoise).with(episode as u64);
        let chain_root = StreamKey::new(self.seed, Domain::Chain).with(episode as u64);
        let resample_root = StreamKey::new(self.seed, Domain::Resample).with(episode as u64);

        let mut ens = ens.clone();
        let mut record = TemperingRecord::default();
        let mut alpha = 0.0;
        let mut step = 0u64;
        while alpha < 1.0 {
            let losses = self.losses(&ens, &window, noise_root.with(step))?;
            let scaled: Vec<f64> = losses.iter().map(|l| self.gamma * l).collect();
            let w = ens.weights()?;
            let next = find_next_temperature(&w, &scaled, alpha, cfg.cess_threshold)?;
            let incr: Vec<f64> = scaled.iter().map(|l| -(next - alpha) * l).collect();
            record.cess_values.push(cess(&w, &incr));
            record.alphas.push(next);
            ens.reweight(&losses, next - alpha, self.gamma)?;

            let spec = MoveSpec {
                target: self.target,
                prior: cfg.prior,
                gamma: self.gamma,
                history: window.history.clone(),
                current: window.current.clone(),
                alpha: next,
                grad_batch: cfg.grad_batch,
                kernel: cfg.kernel.clone(),
                key: chain_root.with(step),
                exec: cfg.exec,
            };
            let mut rng = resample_root.with(step).rng();
            ens = wastefree_move(&ens, &spec, cfg.m, cfg.p, &mut rng)
                .map_err(|e| annotate(e, episode, step))?;
            alpha = next;
            step += 1;
        }
        ens.episode_index = episode;
        Ok((ens, record))
    }
}

fn annotate(e: Error, episode: usize, step: u64) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("episode {episode}, tempering step {step}: {m}")),
        other => other,
    }
}

/// Runs every remaining episode starting from `start`, calling `on_episode`
/// after each one. Returns the final ensemble.
pub fn run_assimilation<T, F>(asm: &Assimilator<'_, T>, start: ParticleEnsemble, mut on_episode: F) -> Result<ParticleEnsemble>
where
    T: Target + ?Sized,
    F: FnMut(&ParticleEnsemble, &TemperingRecord) -> Result<()>,
{
    let total = asm.episode_count();
    let mut ens = start;
    while ens.episode_index < total {
        let (next, record) = asm.run_episode(&ens)?;
        on_episode(&next, &record)?;
        ens = next;
    }
    Ok(ens)
}
