use std::ops::Range;
use std::path::{Path, PathBuf};

use prequential::diagnostics::{evaluate_posterior, evaluate_records, ForecastRecord};
use prequential::dgfm::Network;
use prequential::enkf::{predictive_observations, run_filter, Ensemble};
use prequential::lorenz96::{generate_dataset, TimeSeries};
use prequential::rng::{Domain, StreamKey};
use prequential::smc::{Assimilator, ForecastTarget, ParticleEnsemble, TemperingRecord};

use crate::config::{ExperimentConfig, TestRange};
use crate::container::Container;
use crate::csvio::{metrics_row, read_series, read_table, write_metrics, write_series, write_table, Meta};
use crate::error::{CliError, Result};
use crate::lock::DirLock;
use crate::plot::{render_panels, Series};

pub const DATA_CSV: &str = "data.csv";
pub const DATA_BIN: &str = "data.pqda";
pub const CHECKPOINT: &str = "checkpoint.pqda";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TEMPERING_CSV: &str = "tempering.csv";
pub const ENKF_CSV: &str = "enkf_metrics.csv";
pub const ENKF_BIN: &str = "enkf_predictive.pqda";
pub const EVALUATION_CSV: &str = "evaluation.csv";
pub const FIGURE_SVG: &str = "metrics.svg";

const TEMPERING_HEADER: [&str; 4] = ["episode_index", "step", "alpha", "cess"];

/// Command-line switches shared by every subcommand.
#[derive(Clone, Copy, Debug, Default)]
pub struct Flags {
    pub force: bool,
    pub resume: bool,
}

/// An output directory held for the lifetime of one command.
struct Workspace {
    dir: PathBuf,
    hash: String,
    _lock: DirLock,
}

impl Workspace {
    fn open(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.output.dir.clone();
        let lock = DirLock::acquire(&dir)?;
        Ok(Workspace {
            dir,
            hash: cfg.hash(),
            _lock: lock,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn meta(&self) -> Meta {
        Meta::new(&self.hash)
    }

    /// Refuses to clobber existing outputs unless `force` is set, in which
    /// case they are removed.
    fn claim(&self, names: &[&str], force: bool) -> Result<()> {
        for name in names {
            let p = self.path(name);
            if p.exists() {
                if !force {
                    return Err(CliError::Usage(format!(
                        "{} already exists; pass --force to overwrite",
                        p.display()
                    )));
                }
                std::fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
            }
        }
        Ok(())
    }

    /// Records the resolved configuration next to the outputs.
    fn write_config(&self, cfg: &ExperimentConfig, command: &str) -> Result<()> {
        let path = self.path(&format!("{command}.config.toml"));
        let text = format!(
            "# pqda format_version={} config_hash={}\n{}",
            crate::container::FORMAT_VERSION,
            self.hash,
            cfg.to_flat()
        );
        crate::container::write_atomic(&path, text.as_bytes())
    }
}

/// Generates the Lorenz-96 dataset and writes it as CSV and container.
pub fn simulate(cfg: &ExperimentConfig, flags: Flags) -> Result<TimeSeries> {
    cfg.validate()?;
    let ws = Workspace::open(cfg)?;
    ws.claim(&[DATA_CSV, DATA_BIN], flags.force)?;
    let series = generate_dataset(&cfg.lorenz, &cfg.sim)?;
    let mut c = Container::new();
    c.push_text("config_hash", &ws.hash)
        .push_f64("observations", &[series.len(), series.dim()], series.values().to_vec())
        .push_f64("delta_t", &[1], vec![series.delta_t])
        .push_f64("start_time", &[1], vec![series.start_time])
        .push_f64("train_end", &[1], vec![series.train_end as f64]);
    c.write_atomic(&ws.path(DATA_BIN))?;
    write_series(&ws.path(DATA_CSV), &series, &ws.hash)?;
    ws.write_config(cfg, "simulate")?;
    Ok(series)
}

/// Reads a dataset written by [`simulate`], either form.
pub fn load_series(path: &Path) -> Result<TimeSeries> {
    if path.extension().is_some_and(|e| e == "pqda") {
        let c = Container::read(path)?;
        let (shape, obs) = c.f64s("observations", path)?;
        let [_, k] = shape else {
            return Err(CliError::format(path, "observations must be a matrix"));
        };
        let train_end = c.scalar("train_end", path)? as usize;
        let mut s = TimeSeries::new(obs.to_vec(), *k, c.scalar("delta_t", path)?, train_end)
            .map_err(|e| CliError::format(path, e.to_string()))?;
        s.start_time = c.scalar("start_time", path)?;
        Ok(s)
    } else {
        read_series(path).map(|(s, _)| s)
    }
}

/// Evaluation indices for the posterior after `episode` episodes.
pub fn evaluation_range(cfg: &ExperimentConfig, series: &TimeSeries, episode: usize) -> Range<usize> {
    let (start, end) = match cfg.diagnostics.test_range {
        TestRange::NextEpisode => (cfg.smc.tau * episode, cfg.smc.tau * (episode + 1)),
        TestRange::Holdout => {
            let len = cfg.diagnostics.holdout_len.unwrap_or(series.len() - series.train_end);
            (series.train_end, series.train_end + len)
        }
    };
    start.max(cfg.network.window)..end.min(series.len())
}

fn check_ranges(cfg: &ExperimentConfig, series: &TimeSeries, episodes: usize) -> Result<()> {
    for i in 1..=episodes {
        let r = evaluation_range(cfg, series, i);
        if r.len() < 2 {
            return Err(CliError::Usage(format!(
                "evaluation range {r:?} for episode {i} holds fewer than two indices"
            )));
        }
    }
    Ok(())
}

fn check_dim(cfg: &ExperimentConfig, series: &TimeSeries, data: &Path) -> Result<()> {
    if series.dim() != cfg.network.obs_dim {
        return Err(CliError::Config(format!(
            "{} has {} components but network.obs_dim = {}",
            data.display(),
            series.dim(),
            cfg.network.obs_dim
        )));
    }
    Ok(())
}

/// Everything an assimilation run has produced so far.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub ensemble: ParticleEnsemble,
    pub metrics: Vec<Vec<f64>>,
    pub tempering: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let e = &self.ensemble;
        let rows = |t: &[Vec<f64>]| -> (usize, Vec<f64>) { (t.len(), t.iter().flatten().copied().collect()) };
        let (nm, m) = rows(&self.metrics);
        let (nt, t) = rows(&self.tempering);
        let mut c = Container::new();
        c.push_text("config_hash", &self.config_hash)
            .push_f64("episode_index", &[1], vec![e.episode_index as f64])
            .push_f64("particles", &[e.len(), e.dim()], e.particles.iter().flatten().copied().collect())
            .push_f64("log_weights", &[e.len()], e.log_weights.clone())
            .push_f64("metrics", &[nm, 4], m)
            .push_f64("tempering", &[nt, 4], t);
        c
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let table = |name: &str| -> Result<Vec<Vec<f64>>> {
            let (shape, v) = c.f64s(name, path)?;
            match shape {
                [_, w] if *w > 0 => Ok(v.chunks_exact(*w).map(<[f64]>::to_vec).collect()),
                _ => Err(CliError::format(path, format!("{name} must be a matrix"))),
            }
        };
        let (shape, flat) = c.f64s("particles", path)?;
        let particles: Vec<Vec<f64>> = match shape {
            [n, d] if *d > 0 => flat.chunks_exact(*d).take(*n).map(<[f64]>::to_vec).collect(),
            _ => return Err(CliError::format(path, "particles must be a non-empty matrix")),
        };
        let (_, lw) = c.f64s("log_weights", path)?;
        if lw.len() != particles.len() {
            return Err(CliError::format(path, "log_weights and particles differ in length"));
        }
        Ok(Checkpoint {
            config_hash: c.text("config_hash", path)?.to_string(),
            ensemble: ParticleEnsemble {
                particles,
                log_weights: lw.to_vec(),
                episode_index: c.scalar("episode_index", path)? as usize,
            },
            metrics: table("metrics")?,
            tempering: table("tempering")?,
        })
    }
}

/// Per-episode progress reported by [`assimilate`].
pub struct EpisodeSummary<'a> {
    pub episode: usize,
    pub total: usize,
    pub record: &'a TemperingRecord,
    pub metrics: &'a [f64],
}

/// Runs (or resumes) the episodic sampler on the data at `data`.
///
/// The checkpoint is rewritten after every episode, before the next one
/// starts, and the CSVs are regenerated from it, so a killed run resumed with
/// `flags.resume` produces the same files as an uninterrupted one.
pub fn assimilate(
    cfg: &ExperimentConfig,
    data: &Path,
    flags: Flags,
    mut progress: impl FnMut(&EpisodeSummary<'_>),
) -> Result<Checkpoint> {
    cfg.validate()?;
    let raw = load_series(data)?;
    check_dim(cfg, &raw, data)?;
    let series = raw.training_scale().apply(&raw);
    let ws = Workspace::open(cfg)?;
    let net = Network::new(cfg.network.clone())?;
    let target = ForecastTarget {
        net: &net,
        series: &series,
        score: cfg.score.clone(),
    };
    let asm = Assimilator {
        cfg: &cfg.smc,
        target: &target,
        gamma: cfg.score.gamma,
        seed: cfg.seed,
    };
    let total = asm.episode_count();
    check_ranges(cfg, &series, total)?;

    let ckpt_path = ws.path(CHECKPOINT);
    let outputs = [CHECKPOINT, METRICS_CSV, TEMPERING_CSV];
    let mut ckpt = if flags.resume && ckpt_path.exists() {
        let c = Checkpoint::read(&ckpt_path)?;
        if c.config_hash != ws.hash {
            return Err(CliError::Usage(format!(
                "{} was written under config hash {}, not {}",
                ckpt_path.display(),
                c.config_hash,
                ws.hash
            )));
        }
        c
    } else {
        ws.claim(&outputs, flags.force || flags.resume)?;
        let c = Checkpoint {
            config_hash: ws.hash.clone(),
            ensemble: asm.initial_ensemble()?,
            metrics: Vec::new(),
            tempering: Vec::new(),
        };
        c.to_container().write_atomic(&ckpt_path)?;
        c
    };
    ws.write_config(cfg, "assimilate")?;
    let metrics_meta = ws.meta().with("test_range", cfg.diagnostics.test_range.as_str());
    let write_csvs = |c: &Checkpoint| -> Result<()> {
        write_metrics(&ws.path(METRICS_CSV), &metrics_meta, &c.metrics)?;
        write_table(&ws.path(TEMPERING_CSV), &ws.meta(), &TEMPERING_HEADER, &c.tempering)
    };
    write_csvs(&ckpt)?;

    let eval_key = StreamKey::new(cfg.seed, Domain::Evaluation);
    while ckpt.ensemble.episode_index < total {
        let (next, record) = asm.run_episode(&ckpt.ensemble)?;
        let episode = next.episode_index;
        let report = evaluate_posterior(
            &next,
            &net,
            &series,
            evaluation_range(cfg, &series, episode),
            cfg.diagnostics.m_pred,
            eval_key.with(episode as u64),
            cfg.smc.exec,
        )?;
        for (step, (a, c)) in record.alphas.iter().zip(&record.cess_values).enumerate() {
            ckpt.tempering.push(vec![episode as f64, step as f64, *a, *c]);
        }
        ckpt.metrics.push(metrics_row(&report));
        ckpt.ensemble = next;
        ckpt.to_container().write_atomic(&ckpt_path)?;
        write_csvs(&ckpt)?;
        progress(&EpisodeSummary {
            episode,
            total,
            record: &record,
            metrics: ckpt.metrics.last().expect("just pushed"),
        });
    }
    Ok(ckpt)
}

/// Diagnostics of a stored posterior on the range belonging to its episode.
pub fn evaluate(cfg: &ExperimentConfig, data: &Path, checkpoint: &Path, flags: Flags) -> Result<Vec<f64>> {
    cfg.validate()?;
    let raw = load_series(data)?;
    check_dim(cfg, &raw, data)?;
    let series = raw.training_scale().apply(&raw);
    let ckpt = Checkpoint::read(checkpoint)?;
    let net = Network::new(cfg.network.clone())?;
    if ckpt.ensemble.dim() != net.param_count() {
        return Err(CliError::Config(format!(
            "checkpoint particles have {} coordinates but the network has {} parameters",
            ckpt.ensemble.dim(),
            net.param_count()
        )));
    }
    let ws = Workspace::open(cfg)?;
    ws.claim(&[EVALUATION_CSV], flags.force)?;
    let episode = ckpt.ensemble.episode_index;
    let range = evaluation_range(cfg, &series, episode);
    let report = evaluate_posterior(
        &ckpt.ensemble,
        &net,
        &series,
        range.clone(),
        cfg.diagnostics.m_pred,
        StreamKey::new(cfg.seed, Domain::Evaluation).with(episode as u64),
        cfg.smc.exec,
    )?;
    let meta = ws
        .meta()
        .with("test_range", cfg.diagnostics.test_range.as_str())
        .with("checkpoint_hash", &ckpt.config_hash)
        .with("range", format!("{}..{}", range.start, range.end));
    let row = metrics_row(&report);
    write_metrics(&ws.path(EVALUATION_CSV), &meta, std::slice::from_ref(&row))?;
    Ok(row)
}

/// Runs the ensemble Kalman filter over the data and scores its one-step
/// predictive ensembles on the same per-episode ranges as [`assimilate`].
///
/// The filter starts from `N(y_0, R)` and assimilates rows `1..`; the
/// predictive draw for member `j` at row `t` is the forecast state plus
/// observation noise.
pub fn enkf(cfg: &ExperimentConfig, data: &Path, flags: Flags) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let series = load_series(data)?;
    let episodes = prequential::smc::episode_count(&cfg.smc, series.train_end);
    check_ranges(cfg, &series, episodes)?;
    let ws = Workspace::open(cfg)?;
    ws.claim(&[ENKF_CSV, ENKF_BIN], flags.force)?;

    let ranges: Vec<Range<usize>> = (1..=episodes).map(|i| evaluation_range(cfg, &series, i)).collect();
    let last = ranges.iter().map(|r| r.end).max().unwrap_or(0);
    let mut wanted = vec![false; last];
    for r in &ranges {
        wanted[r.clone()].iter_mut().for_each(|w| *w = true);
    }
    let k = series.dim();
    let mut records: Vec<Option<ForecastRecord>> = vec![None; last];
    if last > 1 {
        let e = &cfg.enkf;
        let dynamics = e.dynamics()?;
        let initial = Ensemble::gaussian(
            series.obs(0),
            e.obs_noise_var,
            e.ensemble_size,
            StreamKey::new(cfg.seed, Domain::EnkfInit),
        )?;
        let pkey = StreamKey::new(cfg.seed, Domain::EnkfPredictive);
        let rows = &series.values()[k..last * k];
        run_filter(initial, rows, &dynamics, e.obs_noise_var, cfg.seed, e.exec, |i, pred, _| {
            let t = i + 1;
            if wanted[t] {
                records[t] = Some(ForecastRecord {
                    draws: predictive_observations(pred, e.obs_noise_var, pkey.with(t as u64)),
                    observation: series.obs(t).to_vec(),
                });
            }
            Ok(())
        })?;
    }

    let mut rows = Vec::with_capacity(episodes);
    for (i, r) in ranges.iter().enumerate() {
        let recs: Vec<ForecastRecord> = records[r.clone()].iter().map(|x| x.clone().expect("filtered")).collect();
        rows.push(metrics_row(&evaluate_records(&recs, i + 1, r.clone())?));
    }

    let kept: Vec<(usize, &ForecastRecord)> =
        records.iter().enumerate().filter_map(|(t, r)| r.as_ref().map(|r| (t, r))).collect();
    let m = cfg.enkf.ensemble_size;
    let mut c = Container::new();
    c.push_text("config_hash", &ws.hash)
        .push_f64("time_index", &[kept.len()], kept.iter().map(|(t, _)| *t as f64).collect())
        .push_f64(
            "draws",
            &[kept.len(), m, k],
            kept.iter().flat_map(|(_, r)| r.draws.iter().flatten().copied()).collect(),
        )
        .push_f64(
            "observations",
            &[kept.len(), k],
            kept.iter().flat_map(|(_, r)| r.observation.iter().copied()).collect(),
        );
    c.write_atomic(&ws.path(ENKF_BIN))?;
    let meta = ws.meta().with("test_range", cfg.diagnostics.test_range.as_str());
    write_metrics(&ws.path(ENKF_CSV), &meta, &rows)?;
    ws.write_config(cfg, "enkf")?;
    Ok(rows)
}

/// Draws the three metric panels for one or more metrics CSVs.
pub fn plot(cfg: &ExperimentConfig, inputs: &[PathBuf], flags: Flags) -> Result<PathBuf> {
    if inputs.is_empty() {
        return Err(CliError::Usage("plot needs at least one metrics CSV".into()));
    }
    let mut series = Vec::with_capacity(inputs.len());
    let mut sources = Vec::with_capacity(inputs.len());
    for path in inputs {
        let t = read_table(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        sources.push(t.meta.get("config_hash").unwrap_or("unknown").to_string());
        series.push(Series {
            label,
            episode: t.column("episode_index", path)?,
            panels: [
                t.column("calibration_error", path)?,
                t.column("nrmse", path)?,
                t.column("r2", path)?,
            ],
        });
    }
    let ws = Workspace::open(cfg)?;
    ws.claim(&[FIGURE_SVG], flags.force)?;
    let meta = ws.meta().with("sources", sources.join(","));
    let svg = render_panels(&series, &["calibration error", "NRMSE", "R\u{b2}"], &meta);
    let out = ws.path(FIGURE_SVG);
    crate::container::write_atomic(&out, svg.as_bytes())?;
    Ok(out)
}
