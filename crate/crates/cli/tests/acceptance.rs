//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.
//!
//! Criteria can be selected by number:
//! `cargo test -p pqda --test acceptance -- 1 2 5`. Criteria 9 and 10 drive
//! the `pqda` binary through a full 20-episode Lorenz-96 run twice and take
//! hours on a single core; their working directory is kept under the cargo
//! target directory for inspection.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use prequential::dgfm::{init_params, Network, NetworkSpec};
use prequential::diagnostics::{calibration_error, nrmse, r2, ForecastRecord};
use prequential::enkf::{run_filter, Ensemble, LinearGaussian};
use prequential::exec::Exec;
use prequential::kernel::{kernel_step_with_noise, KernelConfig, KernelState};
use prequential::lorenz96::{rk4_step, TimeSeries};
use prequential::rng::{Domain, StreamKey};
use prequential::scoring::{energy_score_estimate, index_score, loss_gradient, ScoreConfig};
use prequential::smc::{
    offspring_counts, run_assimilation, systematic_resample, Assimilator, GaussianMeanTarget, SmcConfig,
};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Least-squares slope of `y` on `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, _) = mean_sd(x);
    let (my, _) = mean_sd(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn energy_score_unbiased() -> Outcome {
    let truth = 2.0 * (2.0 / std::f64::consts::PI).sqrt() - 2.0 / std::f64::consts::PI.sqrt();
    let mut rng = StreamKey::new(1, Domain::Test).rng();
    let scores: Vec<f64> = (0..100_000)
        .map(|_| {
            let ens: Vec<[f64; 1]> = (0..5).map(|_| [normal(&mut rng)]).collect();
            energy_score_estimate(&ens, &[0.0], 1.0).unwrap()
        })
        .collect();
    let (m, sd) = mean_sd(&scores);
    let se = sd / (scores.len() as f64).sqrt();
    Outcome::new(
        (m - truth).abs() < 3.0 * se,
        format!("mean {m:.5}, exact {truth:.5}, |diff| {:.2} SE", (m - truth).abs() / se),
    )
}

fn random_spec(rng: &mut impl Rng) -> NetworkSpec {
    let obs_dim = rng.random_range(1..=3);
    let mut dense_widths: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(2..=6)).collect();
    dense_widths.push(obs_dim);
    NetworkSpec {
        window: rng.random_range(1..=4),
        obs_dim,
        gru_hidden: rng.random_range(1..=5),
        dense_widths,
        noise_dim: rng.random_range(1..=2),
    }
}

fn gradient_matches_finite_differences() -> Outcome {
    let mut rng = StreamKey::new(2, Domain::Test).rng();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for trial in 0..50u64 {
        let spec = random_spec(&mut rng);
        let (k, d) = (spec.window, spec.obs_dim);
        let net = Network::new(spec.clone()).unwrap();
        let obs: Vec<f64> = (0..(k + 2) * d).map(|_| 2.0 * normal(&mut rng)).collect();
        let series = TimeSeries::new(obs, d, 0.2, k + 1).unwrap();
        let params = init_params(&spec, 100 + trial, 0.6);
        let score = ScoreConfig {
            m: rng.random_range(2..=6),
            ..ScoreConfig::default()
        };
        let key = StreamKey::new(trial, Domain::Test);
        let t = k;
        let g = loss_gradient(&net, &params, &series, &[t], &[1.0], &score, key).unwrap();
        let mut probe = params.clone();
        for i in 0..params.len() {
            probe[i] = params[i] + eps;
            let up = index_score(&net, &probe, &series, t, &score, key).unwrap();
            probe[i] = params[i] - eps;
            let dn = index_score(&net, &probe, &series, t, &score, key).unwrap();
            probe[i] = params[i];
            let fd = (up - dn) / (2.0 * eps);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(1.0));
            coords += 1;
        }
    }
    Outcome::new(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over {coords} coordinates of 50 random models"),
    )
}

fn kernel_golden_trace() -> Outcome {
    let cfg = KernelConfig {
        eta: 0.01,
        sigma: 0.99,
        lambda: 1.0,
        alpha0: 0.05,
        t_scale: None,
    };
    let mut s = KernelState {
        theta: vec![0.0],
        u: vec![0.1],
        alpha: vec![0.05],
        v: vec![0.0],
        g_prev: vec![1.0],
    };
    if let Err(e) = kernel_step_with_noise(&mut s, &[0.0], &cfg, &[0.0]) {
        return Outcome::new(false, format!("kernel step failed: {e}"));
    }
    let u1 = 0.1 * (-0.05f64).exp();
    let exact = [0.05 + 0.5 * u1, u1, 0.05 + 0.5 * (u1 * u1 - 0.01), 0.0, 1.0];
    let got = [s.theta[0], s.u[0], s.alpha[0], s.v[0], s.g_prev[0]];
    let quoted = [0.0975615, 0.0951229, 0.0495242];
    let err = got.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let quoted_err = got.iter().zip(&quoted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Outcome::new(
        err < 1e-10 && quoted_err < 5e-8,
        format!(
            "theta {:.7} u {:.7} alpha {:.7} v {} g {}; max error {err:.1e} (closed form), {quoted_err:.1e} (7 digits)",
            got[0], got[1], got[2], got[3], got[4]
        ),
    )
}

fn rk4_order() -> Outcome {
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for n in [10, 20, 40, 80, 160] {
        let dt = 1.0 / n as f64;
        let mut y = vec![1.0];
        for _ in 0..n {
            y = rk4_step(&y, dt, |s, out| out[0] = -s[0]).unwrap();
        }
        lx.push(dt.ln());
        ly.push((y[0] - (-1.0f64).exp()).abs().ln());
    }
    let s = slope(&lx, &ly);
    Outcome::new((s - 4.0).abs() <= 0.2, format!("slope {s:.4}"))
}

fn smc_conjugate_oracle() -> Outcome {
    let (nobs, noise_var, replicates) = (500, 50.0f64, 20);
    let truth = [1.0, -0.5];
    let mut rng = StreamKey::new(77, Domain::Test).rng();
    let obs: Vec<Vec<f64>> = (0..nobs)
        .map(|_| truth.iter().map(|m| m + noise_var.sqrt() * normal(&mut rng)).collect())
        .collect();
    let target = GaussianMeanTarget::new(obs, noise_var).unwrap();
    let (post_mean, post_var) = target.posterior(nobs);
    let cfg = SmcConfig {
        tau: 100,
        grad_batch: nobs,
        kernel: KernelConfig {
            eta: 1e-2,
            lambda: 1.0,
            alpha0: 0.1,
            ..KernelConfig::default()
        },
        ..SmcConfig::default()
    };
    let mut means = vec![Vec::new(); 2];
    let mut vars = vec![Vec::new(); 2];
    for seed in 0..replicates {
        let asm = Assimilator {
            cfg: &cfg,
            target: &target,
            gamma: 1.0,
            seed,
        };
        let end = asm
            .initial_ensemble()
            .and_then(|e| run_assimilation(&asm, e, |_, _| Ok(())))
            .and_then(|e| e.moments());
        let (m, v) = match end {
            Ok(mv) => mv,
            Err(e) => return Outcome::new(false, format!("seed {seed}: {e}")),
        };
        for i in 0..2 {
            means[i].push(m[i]);
            vars[i].push(v[i]);
        }
    }
    let mut pass = true;
    let mut detail = String::new();
    for i in 0..2 {
        let (m, sd) = mean_sd(&means[i]);
        let se = sd / (replicates as f64).sqrt();
        let (v, _) = mean_sd(&vars[i]);
        let z = (m - post_mean[i]).abs() / se;
        let ratio = v / post_var;
        pass &= z < 3.0 && (ratio - 1.0).abs() < 0.15;
        write!(
            detail,
            "coord {i}: mean {m:.4} vs {:.4} ({z:.2} SE), variance ratio {ratio:.3}; ",
            post_mean[i]
        )
        .unwrap();
    }
    Outcome::new(pass, format!("{detail}{replicates} replicates"))
}

fn enkf_matches_kalman() -> Outcome {
    let (a, q, r, m0, p0): (f64, f64, f64, f64, f64) = (0.9, 0.5, 1.0, 0.0, 1.0);
    let dynamics = LinearGaussian { a, q };
    let mut rng = StreamKey::new(6, Domain::Test).rng();
    let mut x = m0 + p0.sqrt() * normal(&mut rng);
    let ys: Vec<f64> = (0..50)
        .map(|_| {
            x = a * x + q.sqrt() * normal(&mut rng);
            x + r.sqrt() * normal(&mut rng)
        })
        .collect();
    let initial = Ensemble::gaussian(&[m0], p0, 10_000, StreamKey::new(6, Domain::EnkfInit)).unwrap();
    let (mut m, mut p) = (m0, p0);
    let (mut worst_mean, mut worst_var): (f64, f64) = (0.0, 0.0);
    let result = run_filter(initial, &ys, &dynamics, r, 6, Exec::default(), |t, _, filtered| {
        m *= a;
        p = a * a * p + q;
        let gain = p / (p + r);
        m += gain * (ys[t] - m);
        p *= 1.0 - gain;
        worst_mean = worst_mean.max((filtered.mean()[0] - m).abs());
        worst_var = worst_var.max((filtered.covariance()[(0, 0)] / p - 1.0).abs());
        Ok(())
    });
    if let Err(e) = result {
        return Outcome::new(false, format!("filter failed: {e}"));
    }
    Outcome::new(
        worst_mean < 0.05 && worst_var < 0.1,
        format!("max |mean error| {worst_mean:.4}, max relative variance error {worst_var:.4} over 50 steps"),
    )
}

fn resampling_counts() -> Outcome {
    let mut rng = StreamKey::new(7, Domain::Test).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=300);
        let n = rng.random_range(1..=500);
        let power = rng.random_range(1..=6);
        let w: Vec<f64> = (0..len)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                if rng.random_bool(0.1) { 0.0 } else { e.powi(power) }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total == 0.0 {
            continue;
        }
        let counts = offspring_counts(&systematic_resample(&w, n, &mut rng), len);
        for (c, wi) in counts.iter().zip(&w) {
            worst = worst.max((*c as f64 - n as f64 * wi / total).abs());
        }
    }
    Outcome::new(worst < 1.0, format!("max |c_i - N W_i| = {worst:.4}"))
}

fn metric_identities() -> Outcome {
    let mut rng = StreamKey::new(8, Domain::Test).rng();
    let ys: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| normal(&mut rng)).collect()).collect();
    let (e, r) = (nrmse(&ys, &ys).unwrap(), r2(&ys, &ys).unwrap());

    let records: Vec<ForecastRecord> = (0..2000)
        .map(|_| {
            let mu: Vec<f64> = (0..3).map(|_| 2.0 * normal(&mut rng)).collect();
            let mut draw = || mu.iter().map(|m| m + normal(&mut rng)).collect::<Vec<f64>>();
            ForecastRecord {
                draws: (0..100).map(|_| draw()).collect(),
                observation: draw(),
            }
        })
        .collect();
    let ce = calibration_error(&records).unwrap();
    Outcome::new(
        e == 0.0 && r == 1.0 && ce < 0.03,
        format!("perfect fit: NRMSE {e}, R2 {r}; calibrated forecaster: calibration error {ce:.4}"),
    )
}

// End-to-end runs through the binary.

const EPISODES: usize = 20;

fn desk_config(dir: &Path) -> PathBuf {
    let path = dir.join("desk.toml");
    std::fs::write(&path, format!("seed = 1\nsmc.episodes = {EPISODES}\n")).unwrap();
    path
}

fn pqda(config: &Path, args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pqda"));
    cmd.arg("--config").arg(config).args(args).stdin(Stdio::null());
    cmd
}

fn run_ok(mut cmd: Command, what: &str) -> Result<(), String> {
    let started = Instant::now();
    let out = cmd.stdout(Stdio::null()).stderr(Stdio::piped()).output().map_err(|e| format!("{what}: {e}"))?;
    if !out.status.success() {
        return Err(format!("{what} exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
    }
    eprintln!("  {what} finished in {:.0?}", started.elapsed());
    Ok(())
}

/// Data rows of a metrics CSV as `[episode, calibration, nrmse, r2]`.
fn metrics_rows(path: &Path) -> Result<Vec<[f64; 4]>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|c| c.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
            v.try_into().map_err(|_| format!("bad row in {}: {l}", path.display()))
        })
        .collect()
}

struct DeskRun {
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

impl DeskRun {
    fn prepare() -> Result<Self, String> {
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk");
        if root.exists() {
            std::fs::remove_dir_all(&root).map_err(|e| e.to_string())?;
        }
        std::fs::create_dir_all(&root).map_err(|e| e.to_string())?;
        let config = desk_config(&root);
        let data_dir = root.join("data");
        run_ok(pqda(&config, &["--out", data_dir.to_str().unwrap(), "simulate"]), "simulate")?;
        Ok(DeskRun {
            data: data_dir.join("data.pqda"),
            root,
            config,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn assimilate(&self, name: &str, extra: &[&str]) -> Command {
        let out = self.out(name);
        let mut args = vec!["--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        args.extend(["assimilate", self.data.to_str().unwrap()]);
        pqda(&self.config, &args)
    }
}

fn figure_trend(desk: &DeskRun) -> Outcome {
    let result = (|| -> Result<Outcome, String> {
        run_ok(desk.assimilate("run-a", &[]), "assimilate (uninterrupted)")?;
        let enkf_dir = desk.out("enkf");
        run_ok(
            pqda(&desk.config, &["--out", enkf_dir.to_str().unwrap(), "enkf", desk.data.to_str().unwrap()]),
            "enkf",
        )?;
        let pp = metrics_rows(&desk.out("run-a").join("metrics.csv"))?;
        let en = metrics_rows(&enkf_dir.join("enkf_metrics.csv"))?;
        if pp.len() != EPISODES || en.len() != EPISODES {
            return Ok(Outcome::new(false, format!("expected {EPISODES} rows, got {} and {}", pp.len(), en.len())));
        }
        let plot_dir = desk.out("figure");
        run_ok(
            pqda(
                &desk.config,
                &[
                    "--out",
                    plot_dir.to_str().unwrap(),
                    "plot",
                    desk.out("run-a").join("metrics.csv").to_str().unwrap(),
                    enkf_dir.join("enkf_metrics.csv").to_str().unwrap(),
                ],
            ),
            "plot",
        )?;

        let block = |rows: &[[f64; 4]], col: usize, range: std::ops::Range<usize>| {
            rows[range.clone()].iter().map(|r| r[col]).sum::<f64>() / range.len() as f64
        };
        let (early, late) = (0..5, 15..20);
        let ce = (block(&pp, 1, early.clone()), block(&pp, 1, late.clone()));
        let nr = (block(&pp, 2, early.clone()), block(&pp, 2, late.clone()));
        let rr = (block(&pp, 3, early.clone()), block(&pp, 3, late.clone()));
        let improves = ce.1 < ce.0 && nr.1 < nr.0 && rr.1 > rr.0;

        let episode: Vec<f64> = (1..=EPISODES).map(|e| e as f64).collect();
        let mut slopes = [0.0; 3];
        for (s, col) in slopes.iter_mut().zip(1..4) {
            let v: Vec<f64> = en.iter().map(|r| r[col]).collect();
            let (m, sd) = mean_sd(&v);
            let z: Vec<f64> = v.iter().map(|x| if sd > 0.0 { (x - m) / sd } else { 0.0 }).collect();
            *s = slope(&episode, &z);
        }
        let flat = slopes.iter().all(|s| s.abs() <= 0.1);
        Ok(Outcome::new(
            improves && flat,
            format!(
                "episodes 1-5 -> 16-20: calibration {:.4} -> {:.4}, nrmse {:.4} -> {:.4}, r2 {:.4} -> {:.4}; \
                 EnKF standardized slopes per episode (calibration, nrmse, r2) {:.3}, {:.3}, {:.3}",
                ce.0, ce.1, nr.0, nr.1, rr.0, rr.1, slopes[0], slopes[1], slopes[2]
            ),
        ))
    })();
    result.unwrap_or_else(|e| Outcome::new(false, e))
}

fn resumed_run_is_identical(desk: &DeskRun) -> Outcome {
    let result = (|| -> Result<Outcome, String> {
        let reference = desk.out("run-a").join("metrics.csv");
        if !reference.exists() {
            return Ok(Outcome::new(false, "uninterrupted run missing"));
        }
        let metrics = desk.out("run-b").join("metrics.csv");
        let mut child = desk
            .assimilate("run-b", &[])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let rows_at_kill = loop {
            std::thread::sleep(Duration::from_secs(2));
            if let Some(status) = child.try_wait().map_err(|e| e.to_string())? {
                return Ok(Outcome::new(false, format!("run finished ({status}) before it could be interrupted")));
            }
            let rows = metrics_rows(&metrics).map(|r| r.len()).unwrap_or(0);
            if rows >= 2 {
                child.kill().map_err(|e| e.to_string())?;
                child.wait().map_err(|e| e.to_string())?;
                break rows;
            }
        };
        eprintln!("  interrupted after {rows_at_kill} episodes");
        run_ok(desk.assimilate("run-b", &["--resume"]), "assimilate (resumed)")?;
        let a = std::fs::read(&reference).map_err(|e| e.to_string())?;
        let b = std::fs::read(&metrics).map_err(|e| e.to_string())?;
        Ok(Outcome::new(
            a == b,
            format!(
                "interrupted after {rows_at_kill} episodes; metrics.csv {} ({} vs {} bytes)",
                if a == b { "identical" } else { "differs" },
                a.len(),
                b.len()
            ),
        ))
    })();
    result.unwrap_or_else(|e| Outcome::new(false, e))
}

type Check = (usize, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let quick: [Check; 8] = [
        (1, "energy-score unbiasedness", energy_score_unbiased),
        (2, "gradient vs finite differences", gradient_matches_finite_differences),
        (3, "kernel golden trace", kernel_golden_trace),
        (4, "RK4 order", rk4_order),
        (5, "SMC conjugate oracle", smc_conjugate_oracle),
        (6, "EnKF vs Kalman filter", enkf_matches_kalman),
        (7, "systematic resampling counts", resampling_counts),
        (8, "metric identities", metric_identities),
    ];
    let mut failed = 0;
    let mut report = |n: usize, name: &str, started: Instant, o: Outcome| {
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {} [{:.1?}]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed()
        );
        std::io::stdout().flush().ok();
    };
    for (n, name, check) in quick {
        if selected(n) {
            let started = Instant::now();
            report(n, name, started, check());
        }
    }
    if selected(9) || selected(10) {
        let started = Instant::now();
        match DeskRun::prepare() {
            Err(e) => {
                for n in [9, 10].into_iter().filter(|n| selected(*n)) {
                    report(n, "desk-scale run", started, Outcome::new(false, e.clone()));
                }
            }
            Ok(desk) => {
                let mut ran_a = false;
                if selected(9) {
                    report(9, "desk-scale metric trends", started, figure_trend(&desk));
                    ran_a = true;
                }
                if selected(10) {
                    let started = Instant::now();
                    if !ran_a {
                        if let Err(e) = run_ok(desk.assimilate("run-a", &[]), "assimilate (uninterrupted)") {
                            report(10, "resume determinism", started, Outcome::new(false, e));
                            return ExitCode::FAILURE;
                        }
                    }
                    report(10, "resume determinism", started, resumed_run_is_identical(&desk));
                }
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
