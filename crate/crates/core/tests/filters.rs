use mmda::enkf::{enkf_init, Ensemble};
use mmda::harness::experiment::{compare_bma, prepare, run_experiment, run_setup};
use mmda::harness::metrics::{mean_std, median};
use mmda::harness::monte_carlo::draw_soil_constants;
use mmda::harness::scenario::{FilterKind, Scenario};
use mmda::infiltration::SoilParams;
use mmda::mm_kalman::run_mm_kf;
use mmda::oscillator::{make_oscillator_models, OscillatorParams};
use mmda::pf::{resample, run_mm_pf, ParticleCloud, WeightVector};
use mmda::problem::AssimilationProblem;
use mmda::{Dynamics, ForecastModel, GaussianBelief, LinearModel, NoiseSchedule, Observation};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

fn bundled(name: &str) -> Scenario {
    Scenario::load(format!("{}/../cli/scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn scalar_problem() -> AssimilationProblem {
    let model = LinearModel::new(DMatrix::from_element(1, 1, 0.9), NoiseSchedule::isotropic(1, 0.04).unwrap()).unwrap();
    let obs = (1..=10)
        .map(|t| Observation::scalar(t, 1.0 + 0.1 * (t as f64).sin(), 0.09).unwrap())
        .collect();
    AssimilationProblem::new(
        vec![ForecastModel::new("m", Dynamics::Linear(model))],
        GaussianBelief::scalar(0.5, 0.25).unwrap(),
        10,
        obs,
    )
    .unwrap()
}

#[test]
fn single_model_pf_is_a_sir_filter_matching_kf() {
    let problem = scalar_problem();
    let kf = run_mm_kf(&problem).unwrap();
    let pf = run_mm_pf(&problem, 10_000, 0, 3).unwrap();
    for (p, k) in pf.steps.iter().zip(&kf.steps).skip(1) {
        let (mp, mk) = (p.analyzed.mean()[0], k.analyzed.mean()[0]);
        assert!((mp - mk).abs() < 0.05 * mk.abs(), "step {}: pf {mp}, kf {mk}", p.step);
    }
}

#[test]
fn single_model_pf_without_noise_or_data_is_deterministic() {
    let model = LinearModel::new(DMatrix::from_element(1, 1, 0.8), NoiseSchedule::zero(1)).unwrap();
    let problem = AssimilationProblem::new(
        vec![ForecastModel::new("m", Dynamics::Linear(model))],
        GaussianBelief::scalar(2.0, 0.0).unwrap(),
        5,
        vec![],
    )
    .unwrap();
    let run = run_mm_pf(&problem, 16, 0, 1).unwrap();
    for s in &run.steps {
        assert!((s.analyzed.mean()[0] - 2.0 * 0.8f64.powi(s.step as i32)).abs() < 1e-14);
    }
}

#[test]
fn resampling_frequency_matches_weights() {
    let members = vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)];
    let cloud = ParticleCloud::new(vec![Ensemble::new(members, 0, 1).unwrap()], 0, 1).unwrap();
    let w = WeightVector::from_weights(&[0.2, 0.8]).unwrap();
    let trials = 100_000u64;
    let second: usize = (0..trials)
        .into_par_iter()
        .map(|seed| {
            let out = resample(&cloud, &w, seed).unwrap();
            out.ensembles[0].members().iter().filter(|m| m[0] == 1.0).count()
        })
        .sum();
    let freq = second as f64 / (2 * trials) as f64;
    assert!((freq - 0.8).abs() < 0.005, "frequency {freq}");
}

#[test]
fn fused_oscillator_beats_each_model_at_observations() {
    for (filter, n) in [(FilterKind::Ekf, None), (FilterKind::Enkf, Some(1000))] {
        let mut s = bundled("oscillator_pf_rk4_ref");
        s.filter = filter;
        s.ensemble_size = n.or(s.ensemble_size);
        let m = run_experiment(&s).unwrap().metrics;
        let best = m.models.iter().map(|x| x.rmse_free_obs).fold(f64::INFINITY, f64::min);
        assert!(m.rmse_analyzed_obs < best, "{filter:?}: {} vs {best}", m.rmse_analyzed_obs);
    }
}

#[test]
fn oscillator_models_have_the_documented_setup() {
    let setup = make_oscillator_models();
    assert_eq!(setup.truth, OscillatorParams::default());
    assert_eq!((setup.cn.dt, setup.cn.w, setup.cn.pollution), (0.3, 2.0, 0.1));
    assert_eq!((setup.rk4.dt, setup.rk4.w, setup.rk4.pollution), (0.02, 2.1, 0.1));
    assert_eq!((setup.observation_every, setup.observation_variance), (0.6, 0.01));
}

#[test]
fn sharper_data_gives_a_better_ekf() {
    let base = bundled("bma_compare");
    let pairs: Vec<(f64, f64)> = (1..=20u64)
        .into_par_iter()
        .map(|seed| {
            let mut s = base.clone();
            s.seed = seed;
            let c = compare_bma(&s, &[0.002, 0.01]).unwrap();
            (c.rmse_ekf[0], c.rmse_ekf[1])
        })
        .collect();
    let sharp = median(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let loose = median(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    assert!(sharp <= loose, "{sharp} vs {loose}");
}

#[test]
fn bma_column_does_not_depend_on_the_data() {
    let s = bundled("bma_compare");
    let a = compare_bma(&s, &[0.002]).unwrap();
    let b = compare_bma(&s, &[0.01, 0.05]).unwrap();
    assert_eq!(a.bma, b.bma);
}

#[test]
fn identical_scenarios_give_identical_records() {
    for name in ["infil_enkf", "oscillator_pf_cn_ref"] {
        let s = bundled(name);
        let a = run_experiment(&s).unwrap();
        let b = run_experiment(&s).unwrap();
        assert_eq!(
            mmda::harness::output::results_rows(&a),
            mmda::harness::output::results_rows(&b),
            "{name}"
        );
    }
}

#[test]
fn data_free_mmkf_equals_bma_on_infiltration() {
    let mut s = bundled("bma_compare");
    s.observations = None;
    s.filter = FilterKind::Mmkf;
    let kf = run_experiment(&s).unwrap();
    s.filter = FilterKind::Bma;
    let bma = run_experiment(&s).unwrap();
    for (a, b) in kf.analyzed_mean.iter().zip(&bma.analyzed_mean) {
        assert!((a - b).amax() < 1e-10);
    }
}

#[test]
fn time_dependent_calibration_is_used_per_step() {
    let setup = prepare(&bundled("infil_ekf_timedep")).unwrap();
    let schedule = setup.problem.models[0].dynamics.noise();
    let k = 4;
    let expected = (&setup.free_runs[0][k] - &setup.truth[k])[0].powi(2);
    assert!((schedule.at(k)[(0, 0)] - expected).abs() < 1e-15);
    let rec = run_setup(&setup).unwrap();
    assert_eq!(rec.times.len(), 61);
}

#[test]
fn lognormal_draws_match_moments() {
    let p = SoilParams::default();
    let n = 20_000;
    let (ks, alpha): (Vec<f64>, Vec<f64>) = (0..n).map(|k| draw_soil_constants(&p, k, 5)).unzip();
    let logs = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    for (v, mu, var) in [(logs(&ks), p.ln_ks_mean, p.ln_ks_var), (logs(&alpha), p.ln_alpha_mean, p.ln_alpha_var)] {
        let (m, s) = mean_std(&v);
        let se = (var / n as f64).sqrt();
        assert!((m - mu).abs() < 4.0 * se, "mean {m} vs {mu}");
        let se_var = var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((s * s - var).abs() < 4.0 * se_var, "var {} vs {var}", s * s);
    }
}

#[test]
fn initial_ensemble_spread_matches_prior() {
    let prior = GaussianBelief::scalar(1.0, 0.04).unwrap();
    let e = enkf_init(&prior, 50_000, 9).unwrap();
    let (m, s) = mean_std(&e.members().iter().map(|x| x[0]).collect::<Vec<_>>());
    assert!((m - 1.0).abs() < 4.0 * 0.2 / (50_000f64).sqrt());
    assert!((s * s - 0.04).abs() < 0.002);
}

#[test]
fn runtime_errors_name_the_step() {
    let mut s = bundled("infil_ekf");
    s.initial.mean = Some(vec![f64::NAN]);
    let err = run_experiment(&s).unwrap_err().to_string();
    assert!(err.contains("step") || err.contains("finite"), "{err}");
}
