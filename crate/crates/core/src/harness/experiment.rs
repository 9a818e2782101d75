//! Scenario → problem → filter run → record.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::algebra::{pseudo_inverse, PSEUDO_INVERSE_TOL};
use crate::belief::{GaussianBelief, NoiseSchedule, Observation};
use crate::bma::run_bma;
use crate::enkf::{run_mm_enkf, Ensemble};
use crate::error::{Error, Result};
use crate::harness::calibrate::{calibrate_model_errors, ErrorCalibration};
use crate::harness::metrics::{mean_std, rmse, PdfEstimate};
use crate::harness::monte_carlo::{monte_carlo_infiltration, McModel, McSamples};
use crate::harness::observe::{generate_observations, ObservationSchedule};
use crate::harness::scenario::{ErrorMode, FilterKind, ModelKind, ModelSpec, Scenario, SystemSpec, TruthSpec};
use crate::harness::truth::{oscillator_truth, surrogate_truth, TruthSeries};
use crate::infiltration::{InfiltrationSystem, Soil};
use crate::mm_kalman::run_mm_kf;
use crate::model::{DifferentiableModel, Dynamics, ForecastModel, JacobianSpec};
use crate::ode::Rk4Flow;
use crate::oscillator::{whole_multiple, IntegratorSpec, OscillatorParams, Scheme};
use crate::pf::{cloud_weights, resample, run_mm_pf, ParticleCloud};
use crate::problem::AssimilationProblem;
use crate::rng::{keyed_rng, stream};

/// Everything a filter run needs, built from a scenario.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scenario: Scenario,
    pub times: Vec<f64>,
    pub truth: Vec<DVector<f64>>,
    pub problem: AssimilationProblem,
    /// Noise-free model trajectories from the initial mean, `[model][step]`.
    pub free_runs: Vec<Vec<DVector<f64>>>,
    pub calibrations: Vec<Option<ErrorCalibration>>,
}

impl Setup {
    pub fn observation_steps(&self) -> Vec<usize> {
        self.problem.observations().map(|o| o.time).collect()
    }
}

pub fn load_truth(scenario: &Scenario, times: &[f64]) -> Result<TruthSeries> {
    match (&scenario.truth, &scenario.system) {
        (TruthSpec::Exact, SystemSpec::Oscillator { w, y0, y0p }) => {
            oscillator_truth(&OscillatorParams::new(*w, *y0, *y0p)?, times)
        }
        (TruthSpec::Table { path }, _) => {
            let table = TruthSeries::read_csv(scenario.resolve(path))?;
            if table.dim() != scenario.system.dim() {
                return Err(Error::config(format!(
                    "truth table {} has {} state columns, the system has {}",
                    path.display(),
                    table.dim(),
                    scenario.system.dim()
                )));
            }
            TruthSeries::new(times.to_vec(), table.sample(times)?)
        }
        (
            TruthSpec::Surrogate {
                model,
                ks_scale,
                alpha_scale,
                dt,
            },
            SystemSpec::Infiltration { soil, .. },
        ) => surrogate_truth(soil, *model, *ks_scale, *alpha_scale, *dt, times),
        _ => Err(Error::config("truth source does not match the system")),
    }
}

fn build_model(scenario: &Scenario, spec: &ModelSpec) -> Result<ForecastModel> {
    match (&scenario.system, spec.kind) {
        (SystemSpec::Oscillator { .. }, ModelKind::Cn | ModelKind::Rk4) => IntegratorSpec {
            scheme: if spec.kind == ModelKind::Cn { Scheme::CrankNicolson } else { Scheme::Rk4 },
            dt: spec.dt,
            w: spec.w.unwrap_or(2.0),
            pollution: spec.pollution.unwrap_or(0.0),
        }
        .forecast_model(spec.id.clone(), scenario.step),
        (SystemSpec::Infiltration { soil, .. }, kind) => {
            let model = kind
                .infiltration()
                .ok_or_else(|| Error::config(format!("model '{}' is not an infiltration model", spec.id)))?;
            let soil = Soil::new(*soil)?;
            let substeps = whole_multiple(scenario.step, spec.dt)?;
            let flow = Rk4Flow::new(InfiltrationSystem { model, soil }, spec.dt, substeps);
            let noise = match &spec.error {
                Some(e) if e.mode == ErrorMode::Fixed => NoiseSchedule::isotropic(1, e.variance.unwrap_or(0.0))?,
                _ => NoiseSchedule::zero(1),
            };
            let m = DifferentiableModel::new(Arc::new(flow), JacobianSpec::Analytic, noise)?;
            Ok(ForecastModel::new(spec.id.clone(), Dynamics::Differentiable(m)))
        }
        _ => Err(Error::config(format!("model '{}' does not belong to this system", spec.id))),
    }
}

fn free_run(model: &ForecastModel, x0: &DVector<f64>, steps: usize) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    for t in 1..=steps {
        let next = model.advance(&out[t - 1]).map_err(|e| e.at_step(t))?;
        out.push(next);
    }
    Ok(out)
}

/// Builds models, truth, observations and calibrated model errors.
pub fn prepare(scenario: &Scenario) -> Result<Setup> {
    scenario.validate()?;
    let times = scenario.times()?;
    let steps = times.len() - 1;
    let truth = load_truth(scenario, &times)?.values;
    let dim = scenario.system.dim();
    let mean = match &scenario.initial.mean {
        Some(m) => DVector::from_column_slice(m),
        None => truth[0].clone(),
    };
    let initial = GaussianBelief::isotropic(mean, scenario.initial.variance)?;

    let mut models = Vec::new();
    let mut free_runs = Vec::new();
    let mut calibrations = Vec::new();
    for spec in &scenario.models {
        let mut model = build_model(scenario, spec)?;
        let run = free_run(&model, initial.mean(), steps)?;
        let calibration = match &spec.error {
            Some(e) if e.mode != ErrorMode::Fixed => {
                let window: Vec<usize> = match e.window {
                    Some([a, b]) => (1..=steps).filter(|&k| times[k] >= a && times[k] <= b).collect(),
                    None => (1..=steps).collect(),
                };
                let c = calibrate_model_errors(&run, &truth, e.mode, Some(&window), e.floor)?;
                model.dynamics = model.dynamics.with_noise(c.noise()?);
                Some(c)
            }
            _ => None,
        };
        models.push(model);
        free_runs.push(run);
        calibrations.push(calibration);
    }

    let observations = match (&scenario.observations, scenario.observation_stride()?) {
        (Some(o), Some(stride)) => {
            let schedule = ObservationSchedule {
                stride,
                variance: o.variance,
            };
            generate_observations(&truth, &schedule, scenario.seed)?
        }
        _ => Vec::new(),
    };
    debug_assert!(observations.iter().all(|o| o.value().len() == dim));
    let problem = AssimilationProblem::new(models, initial, steps, observations)?;
    Ok(Setup {
        scenario: scenario.clone(),
        times,
        truth,
        problem,
        free_runs,
        calibrations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelMetrics {
    pub id: String,
    /// Free run against the truth, all steps.
    pub rmse_free: f64,
    /// Free run against the truth, observation steps only.
    pub rmse_free_obs: f64,
    pub error: Option<ErrorCalibration>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub scenario: String,
    pub filter: &'static str,
    pub seed: u64,
    pub steps: usize,
    pub observations: usize,
    pub ensemble_size: Option<usize>,
    pub reference: Option<String>,
    pub rmse_analyzed: f64,
    pub rmse_analyzed_obs: f64,
    pub models: Vec<ModelMetrics>,
    /// Smallest effective sample size over the observation steps (pf only).
    pub min_ess: Option<f64>,
    /// Observation steps where the particle weights degenerated (pf only).
    pub uniform_fallbacks: usize,
}

/// Per-step output of a run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub labels: Vec<&'static str>,
    pub model_ids: Vec<String>,
    pub times: Vec<f64>,
    pub truth: Vec<DVector<f64>>,
    pub observations: Vec<Option<DVector<f64>>>,
    /// `[step][model]` forecast means and variances.
    pub forecast_means: Vec<Vec<DVector<f64>>>,
    pub forecast_vars: Vec<Vec<DVector<f64>>>,
    /// `[model][step]`.
    pub free_runs: Vec<Vec<DVector<f64>>>,
    pub analyzed_mean: Vec<DVector<f64>>,
    pub analyzed_var: Vec<DVector<f64>>,
    /// `[step][model]` gain-derived weights, NaN where undefined.
    pub model_weights: Vec<Vec<f64>>,
    pub data_weight: Vec<f64>,
    pub ess: Vec<f64>,
    pub metrics: Metrics,
}

fn mean_diag(m: &DMatrix<f64>) -> f64 {
    m.diagonal().mean()
}

/// `mean diag(W U_m†)` and `mean diag(W Hᵀ D† H)`.
fn gain_weights(analyzed: &GaussianBelief, forecasts: &[GaussianBelief], data: Option<&Observation>) -> Result<(Vec<f64>, f64)> {
    let w = analyzed.cov();
    let models = forecasts
        .iter()
        .map(|u| Ok(mean_diag(&(w * pseudo_inverse(u.cov(), PSEUDO_INVERSE_TOL)?))))
        .collect::<Result<Vec<_>>>()?;
    let data = match data {
        Some(d) => mean_diag(&(w * d.operator().transpose() * pseudo_inverse(d.noise(), PSEUDO_INVERSE_TOL)? * d.operator())),
        None => f64::NAN,
    };
    Ok((models, data))
}

struct Trace {
    forecasts: Vec<Vec<GaussianBelief>>,
    analyzed: Vec<GaussianBelief>,
    model_weights: Vec<Vec<f64>>,
    data_weight: Vec<f64>,
    ess: Vec<f64>,
    fallbacks: usize,
}

fn run_filter(setup: &Setup) -> Result<Trace> {
    let s = &setup.scenario;
    let problem = &setup.problem;
    let m = problem.models.len();
    let nan_weights = || vec![f64::NAN; m];
    match s.filter {
        FilterKind::Mmkf | FilterKind::Ekf => {
            let trace = run_mm_kf(problem)?;
            Ok(Trace {
                forecasts: trace.steps.iter().map(|st| st.forecasts.clone()).collect(),
                analyzed: trace.steps.iter().map(|st| st.analyzed.clone()).collect(),
                model_weights: trace.steps.iter().map(|st| st.model_weights.clone()).collect(),
                data_weight: trace.steps.iter().map(|st| st.data_weight.unwrap_or(f64::NAN)).collect(),
                ess: vec![f64::NAN; trace.steps.len()],
                fallbacks: 0,
            })
        }
        FilterKind::Enkf => {
            let run = run_mm_enkf(problem, s.ensemble_size()?, s.seed)?;
            let mut out = Trace {
                forecasts: vec![],
                analyzed: vec![],
                model_weights: vec![],
                data_weight: vec![],
                ess: vec![f64::NAN; run.steps.len()],
                fallbacks: 0,
            };
            for st in &run.steps {
                let forecasts = if st.forecasts.is_empty() {
                    vec![problem.initial.clone(); m]
                } else {
                    st.forecasts.clone()
                };
                let (w, d) = if st.step == 0 {
                    (nan_weights(), f64::NAN)
                } else {
                    gain_weights(&st.analyzed, &forecasts, problem.observation(st.step))?
                };
                out.forecasts.push(forecasts);
                out.analyzed.push(st.analyzed.clone());
                out.model_weights.push(w);
                out.data_weight.push(d);
            }
            Ok(out)
        }
        FilterKind::Pf => {
            let run = run_mm_pf(problem, s.ensemble_size()?, s.reference_index()?, s.seed)?;
            Ok(Trace {
                forecasts: run.steps.iter().map(|st| st.forecasts.clone()).collect(),
                analyzed: run.steps.iter().map(|st| st.analyzed.clone()).collect(),
                model_weights: run.steps.iter().map(|_| nan_weights()).collect(),
                data_weight: vec![f64::NAN; run.steps.len()],
                ess: run.steps.iter().map(|st| st.effective_sample_size.unwrap_or(f64::NAN)).collect(),
                fallbacks: run.steps.iter().filter(|st| st.fell_back_to_uniform).count(),
            })
        }
        FilterKind::Bma => {
            let run = run_bma(problem)?;
            Ok(Trace {
                forecasts: run.steps.iter().map(|st| st.forecasts.clone()).collect(),
                analyzed: run.steps.iter().map(|st| st.combination.combined.clone()).collect(),
                model_weights: run.steps.iter().map(|st| st.combination.weights.clone()).collect(),
                data_weight: vec![f64::NAN; run.steps.len()],
                ess: vec![f64::NAN; run.steps.len()],
                fallbacks: 0,
            })
        }
    }
}

/// Runs a prepared setup.
pub fn run_setup(setup: &Setup) -> Result<RunRecord> {
    let s = &setup.scenario;
    let trace = run_filter(setup)?;
    let obs_steps = setup.observation_steps();
    let rmse_obs = |a: &[DVector<f64>]| -> Result<f64> {
        if obs_steps.is_empty() {
            Ok(f64::NAN)
        } else {
            rmse(a, &setup.truth, Some(&obs_steps))
        }
    };
    let analyzed_mean: Vec<DVector<f64>> = trace.analyzed.iter().map(|b| b.mean().clone()).collect();
    let models = s
        .models
        .iter()
        .zip(&setup.free_runs)
        .zip(&setup.calibrations)
        .map(|((spec, run), cal)| {
            Ok(ModelMetrics {
                id: spec.id.clone(),
                rmse_free: rmse(run, &setup.truth, None)?,
                rmse_free_obs: rmse_obs(run)?,
                error: cal.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_ess = obs_steps
        .iter()
        .map(|&k| trace.ess[k])
        .filter(|x| !x.is_nan())
        .reduce(f64::min);
    let metrics = Metrics {
        scenario: s.name.clone(),
        filter: s.filter.name(),
        seed: s.seed,
        steps: setup.problem.steps,
        observations: obs_steps.len(),
        ensemble_size: s.filter.is_ensemble().then(|| s.ensemble_size).flatten(),
        reference: (s.filter == FilterKind::Pf).then(|| s.reference.clone()).flatten(),
        rmse_analyzed: rmse(&analyzed_mean, &setup.truth, None)?,
        rmse_analyzed_obs: rmse_obs(&analyzed_mean)?,
        models,
        min_ess,
        uniform_fallbacks: trace.fallbacks,
    };
    Ok(RunRecord {
        labels: s.system.column_labels(),
        model_ids: s.models.iter().map(|m| m.id.clone()).collect(),
        times: setup.times.clone(),
        truth: setup.truth.clone(),
        observations: (0..setup.times.len())
            .map(|k| setup.problem.observation(k).map(|o| o.value().clone()))
            .collect(),
        forecast_means: trace.forecasts.iter().map(|f| f.iter().map(|b| b.mean().clone()).collect()).collect(),
        forecast_vars: trace.forecasts.iter().map(|f| f.iter().map(|b| b.variances()).collect()).collect(),
        free_runs: setup.free_runs.clone(),
        analyzed_mean,
        analyzed_var: trace.analyzed.iter().map(|b| b.variances()).collect(),
        model_weights: trace.model_weights,
        data_weight: trace.data_weight,
        ess: trace.ess,
        metrics,
    })
}

pub fn run_experiment(scenario: &Scenario) -> Result<RunRecord> {
    run_setup(&prepare(scenario)?)
}

/// EKF runs at several observation noise levels (standard deviations) next
/// to one model-averaging run.
#[derive(Debug, Clone)]
pub struct BmaComparison {
    pub times: Vec<f64>,
    pub truth: Vec<f64>,
    pub levels: Vec<f64>,
    /// `[level][step]` analyzed means.
    pub ekf: Vec<Vec<f64>>,
    pub bma: Vec<f64>,
    pub rmse_ekf: Vec<f64>,
    pub rmse_bma: f64,
}

pub fn compare_bma(scenario: &Scenario, levels: &[f64]) -> Result<BmaComparison> {
    if scenario.system.dim() != 1 {
        return Err(Error::config("compare-bma needs a scalar system"));
    }
    let first = |v: &Vec<DVector<f64>>| v.iter().map(|x| x[0]).collect::<Vec<_>>();
    scenario.require_observations()?;
    let mut ekf = Vec::new();
    let mut rmse_ekf = Vec::new();
    let mut base = None;
    for &sigma in levels {
        let mut s = scenario.clone();
        s.filter = FilterKind::Ekf;
        s.observations.as_mut().expect("checked above").variance = sigma * sigma;
        let rec = run_experiment(&s)?;
        rmse_ekf.push(rec.metrics.rmse_analyzed);
        ekf.push(first(&rec.analyzed_mean));
        base.get_or_insert(rec);
    }
    let mut s = scenario.clone();
    s.filter = FilterKind::Bma;
    let bma = run_experiment(&s)?;
    let base = base.unwrap_or_else(|| bma.clone());
    Ok(BmaComparison {
        times: base.times.clone(),
        truth: first(&base.truth),
        levels: levels.to_vec(),
        ekf,
        bma: first(&bma.analyzed_mean),
        rmse_ekf,
        rmse_bma: bma.metrics.rmse_analyzed,
    })
}

/// Heterogeneous-soil density study at one time.
#[derive(Debug, Clone)]
pub struct PdfStudy {
    pub model_ids: Vec<String>,
    pub reference: String,
    pub t_eval: f64,
    pub samples: McSamples,
    /// Ensemble mean of the truth samples.
    pub truth_mean: f64,
    pub observation: f64,
    pub observation_variance: f64,
    /// Reference particles after weighting and resampling.
    pub assimilated: Vec<f64>,
    pub effective_sample_size: f64,
    /// Densities of each model, the truth, and the assimilated ensemble on
    /// one set of bins.
    pub pdfs: Vec<(String, PdfEstimate)>,
    pub std_models: Vec<f64>,
    pub std_truth: f64,
    pub std_assimilated: f64,
}

/// Draws `samples` soils, evaluates every model and the truth surrogate at
/// `t_eval`, and assimilates one noisy observation of the truth-ensemble
/// mean into the first `particles` draws with the particle filter.
pub fn run_pdf_study(scenario: &Scenario) -> Result<PdfStudy> {
    scenario.validate()?;
    let mc = scenario
        .monte_carlo
        .ok_or_else(|| Error::config("the density study needs a [monte_carlo] table"))?;
    let (soil, t0) = match &scenario.system {
        SystemSpec::Infiltration { soil, t0 } => (*soil, *t0),
        _ => return Err(Error::config("the density study needs an infiltration system")),
    };
    let truth_model = match scenario.truth {
        TruthSpec::Surrogate {
            model,
            ks_scale,
            alpha_scale,
            ..
        } => McModel {
            model,
            ks_scale,
            alpha_scale,
        },
        _ => return Err(Error::config("the density study needs a surrogate truth")),
    };
    let mut models = scenario
        .models
        .iter()
        .map(|m| {
            m.kind
                .infiltration()
                .map(McModel::plain)
                .ok_or_else(|| Error::config(format!("model '{}' is not an infiltration model", m.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    models.push(truth_model);
    let samples = monte_carlo_infiltration(&soil, &models, mc.samples, t0, mc.t_eval, mc.dt, scenario.seed)?;
    let m = scenario.models.len();
    let truth_values = &samples.values[m];
    let (truth_mean, std_truth) = mean_std(truth_values);
    let variance = scenario.require_observations()?.variance;
    let z: f64 = keyed_rng(scenario.seed, &[stream::OBSERVATION, 0]).sample(StandardNormal);
    let observation = truth_mean + variance.sqrt() * z;

    let n = mc.particles.min(samples.ks.len());
    let ensembles = (0..m)
        .map(|k| {
            let members = samples.values[k][..n].iter().map(|&x| DVector::from_element(1, x)).collect();
            Ensemble::new(members, k, 1)
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = scenario.reference_index()?;
    let cloud = ParticleCloud::new(ensembles, reference, 1)?;
    let obs = Observation::scalar(1, observation, variance)?;
    let weights = cloud_weights(&cloud, &obs)?;
    let ess = weights.effective_sample_size();
    let posterior = resample(&cloud, &weights, scenario.seed)?;
    let assimilated: Vec<f64> = posterior.reference_ensemble().members().iter().map(|x| x[0]).collect();

    let mut series: Vec<(String, &[f64])> = scenario
        .models
        .iter()
        .zip(&samples.values)
        .map(|(spec, v)| (spec.id.clone(), v.as_slice()))
        .collect();
    series.push(("truth".into(), truth_values.as_slice()));
    series.push(("pf".into(), assimilated.as_slice()));
    let pooled: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / mc.bins as f64 } else { 1.0 };
    let pdfs = series
        .iter()
        .map(|(id, v)| Ok((id.clone(), histogram_on(v, lo, width, mc.bins)?)))
        .collect::<Result<Vec<_>>>()?;
    let std_models = (0..m).map(|k| mean_std(&samples.values[k]).1).collect();
    Ok(PdfStudy {
        model_ids: scenario.models.iter().map(|s| s.id.clone()).collect(),
        reference: scenario.models[reference].id.clone(),
        t_eval: mc.t_eval,
        truth_mean,
        observation,
        observation_variance: variance,
        std_assimilated: mean_std(&assimilated).1,
        assimilated,
        effective_sample_size: ess,
        pdfs,
        std_models,
        std_truth,
        samples,
    })
}

/// Histogram on the fixed bins `lo + k·width`, `k < bins`.
fn histogram_on(samples: &[f64], lo: f64, width: f64, bins: usize) -> Result<PdfEstimate> {
    if samples.is_empty() || samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("density samples must be finite and non-empty"));
    }
    let mut heights = vec![0.0; bins.max(1)];
    let norm = 1.0 / (samples.len() as f64 * width);
    for &x in samples {
        let k = (((x - lo) / width).floor().max(0.0) as usize).min(heights.len() - 1);
        heights[k] += norm;
    }
    Ok(PdfEstimate {
        edges: (0..=heights.len()).map(|k| lo + k as f64 * width).collect(),
        heights,
        width,
    })
}
