use prequential::dgfm::{Network, NetworkSpec};
use prequential::diagnostics::evaluate_posterior;
use prequential::enkf::{run_filter, Ensemble, EnkfConfig};
use prequential::exec::Exec;
use prequential::kernel::KernelConfig;
use prequential::lorenz96::{generate_dataset, L96Params, SimConfig, TimeSeries};
use prequential::rng::{Domain, StreamKey};
use prequential::scoring::ScoreConfig;
use prequential::smc::{run_assimilation, Assimilator, ForecastTarget, GaussianMeanTarget, ParticleEnsemble, SmcConfig};
use rand_distr::{Distribution, StandardNormal};

fn small_series() -> TimeSeries {
    let sim = SimConfig {
        duration: 40.0,
        burn_in: 1.0,
        ..SimConfig::default()
    };
    let raw = generate_dataset(&L96Params::default(), &sim).unwrap();
    raw.training_scale().apply(&raw)
}

fn small_net() -> Network {
    Network::new(NetworkSpec {
        window: 3,
        obs_dim: 8,
        gru_hidden: 4,
        dense_widths: vec![6, 8],
        noise_dim: 1,
    })
    .unwrap()
}

fn small_smc(exec: Exec) -> SmcConfig {
    SmcConfig {
        n: 12,
        m: 4,
        p: 3,
        tau: 20,
        cess_threshold: 6.0,
        grad_batch: 10,
        episodes: Some(3),
        exec,
        ..SmcConfig::default()
    }
}

fn run(series: &TimeSeries, net: &Network, cfg: &SmcConfig, start: Option<ParticleEnsemble>) -> ParticleEnsemble {
    let target = ForecastTarget {
        net,
        series,
        score: ScoreConfig::default(),
    };
    let asm = Assimilator {
        cfg,
        target: &target,
        gamma: 1.0,
        seed: 11,
    };
    let start = start.unwrap_or_else(|| asm.initial_ensemble().unwrap());
    run_assimilation(&asm, start, |_, _| Ok(())).unwrap()
}

#[test]
fn sequential_and_parallel_runs_agree_bitwise() {
    let (series, net) = (small_series(), small_net());
    let a = run(&series, &net, &small_smc(Exec::Sequential), None);
    let b = run(&series, &net, &small_smc(Exec::Parallel), None);
    assert_eq!(a.episode_index, 3);
    assert_eq!(a, b);
}

#[test]
fn stopping_and_continuing_matches_an_uninterrupted_run() {
    let (series, net) = (small_series(), small_net());
    let full = run(&series, &net, &small_smc(Exec::Parallel), None);
    let first = run(
        &series,
        &net,
        &SmcConfig {
            episodes: Some(1),
            ..small_smc(Exec::Parallel)
        },
        None,
    );
    assert_eq!(first.episode_index, 1);
    let resumed = run(&series, &net, &small_smc(Exec::Parallel), Some(first));
    assert_eq!(full, resumed);
}

#[test]
fn posterior_diagnostics_are_finite_and_reproducible() {
    let (series, net) = (small_series(), small_net());
    let ens = run(&series, &net, &small_smc(Exec::Parallel), None);
    let key = StreamKey::new(11, Domain::Evaluation);
    let a = evaluate_posterior(&ens, &net, &series, 60..80, 20, key, Exec::Sequential).unwrap();
    let b = evaluate_posterior(&ens, &net, &series, 60..80, 20, key, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    assert!(a.calibration_error.is_finite() && a.nrmse.is_finite() && a.r2.is_finite());
    assert!((0.0..=1.0).contains(&a.calibration_error));
}

#[test]
fn conjugate_posterior_is_recovered_by_one_run() {
    let mut rng = StreamKey::new(5, Domain::Test).rng();
    let obs: Vec<Vec<f64>> = (0..300)
        .map(|_| vec![0.7 + 4.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)])
        .collect();
    let target = GaussianMeanTarget::new(obs, 16.0).unwrap();
    let cfg = SmcConfig {
        tau: 100,
        grad_batch: 300,
        kernel: KernelConfig {
            eta: 1e-2,
            lambda: 1.0,
            alpha0: 0.1,
            ..KernelConfig::default()
        },
        ..SmcConfig::default()
    };
    let asm = Assimilator {
        cfg: &cfg,
        target: &target,
        gamma: 1.0,
        seed: 3,
    };
    let end = run_assimilation(&asm, asm.initial_ensemble().unwrap(), |_, _| Ok(())).unwrap();
    let (mean, var) = end.moments().unwrap();
    let (pm, pv) = target.posterior(300);
    assert!((mean[0] - pm[0]).abs() < 0.5 * pv.sqrt(), "{mean:?} vs {pm:?}");
    assert!((var[0] / pv - 1.0).abs() < 0.5, "{var:?} vs {pv}");
}

#[test]
fn enkf_on_lorenz96_is_schedule_independent() {
    let series = small_series();
    let cfg = EnkfConfig {
        ensemble_size: 20,
        ..EnkfConfig::default()
    };
    let dynamics = cfg.dynamics().unwrap();
    let rows = &series.values()[8..8 * 30];
    let filter = |exec| {
        let init = Ensemble::gaussian(series.obs(0), cfg.obs_noise_var, cfg.ensemble_size, StreamKey::new(2, Domain::EnkfInit)).unwrap();
        let mut means = Vec::new();
        let end = run_filter(init, rows, &dynamics, cfg.obs_noise_var, 2, exec, |_, _, f| {
            means.push(f.mean());
            Ok(())
        })
        .unwrap();
        (end, means)
    };
    let (a, means) = filter(Exec::Sequential);
    let (b, _) = filter(Exec::Parallel);
    assert_eq!(a, b);
    assert_eq!(means.len(), 29);
    assert!(a.members.iter().flatten().all(|v| v.is_finite()));
}
