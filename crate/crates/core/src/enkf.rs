//! Multi-model ensemble Kalman filter.
//!
//! Every model forecasts every analyzed member (plus a draw of its own
//! error), the per-model sample covariances replace `U_m`, and each member is
//! then assimilated with the multi-model update using its own model forecasts
//! and a perturbed copy of the data.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::algebra::{repair_psd, sample_gaussian, GaussianSampler};
use crate::belief::{GaussianBelief, Observation};
use crate::error::{Error, Result};
use crate::mm_kalman::FusionPlan;
use crate::model::ForecastModel;
use crate::problem::AssimilationProblem;
use crate::rng::{derive_seed, keyed_rng, stream};

/// `N_a` state vectors of one model (or of the analyzed state) at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<DVector<f64>>,
    pub model: usize,
    pub step: usize,
}

impl Ensemble {
    pub fn new(members: Vec<DVector<f64>>, model: usize, step: usize) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::invalid(format!("an ensemble needs at least 2 members, got {}", members.len())));
        }
        let n = members[0].len();
        if n == 0 || members.iter().any(|m| m.len() != n) {
            return Err(Error::invalid("ensemble members differ in dimension"));
        }
        Ok(Self { members, model, step })
    }

    pub fn members(&self) -> &[DVector<f64>] {
        &self.members
    }

    pub fn into_members(self) -> Vec<DVector<f64>> {
        self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].len()
    }

    pub fn mean(&self) -> DVector<f64> {
        let n = self.members.len() as f64;
        self.members.iter().fold(DVector::zeros(self.dim()), |acc, m| acc + m) / n
    }
}

/// Draws the initial analyzed ensemble from `initial`.
pub fn enkf_init(initial: &GaussianBelief, n: usize, seed: u64) -> Result<Ensemble> {
    if n < 2 {
        return Err(Error::invalid(format!("ensemble size must be at least 2, got {n}")));
    }
    let members = sample_gaussian(initial, n, derive_seed(seed, &[stream::INITIAL]))?;
    Ensemble::new(members, 0, 0)
}

/// `u_m^i = g_m(w^i) + ε_m^i`, repeated over the model's substeps. Member
/// noise comes from the stream keyed by `(seed, t, model_index, i)`.
pub fn enkf_forecast(
    model: &ForecastModel,
    model_index: usize,
    analyzed: &Ensemble,
    t: usize,
    seed: u64,
) -> Result<Ensemble> {
    if model.dim() != analyzed.dim() {
        return Err(Error::invalid(format!(
            "model '{}' has dimension {}, ensemble has {}",
            model.id,
            model.dim(),
            analyzed.dim()
        )));
    }
    let q = model.dynamics.noise().at(t);
    let noise = GaussianSampler::centered(q)?;
    let members = analyzed
        .members()
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rng = keyed_rng(seed, &[stream::MODEL_NOISE, t as u64, model_index as u64, i as u64]);
            let mut x = w.clone();
            for _ in 0..model.substeps {
                x = model.dynamics.apply(&x)?;
                noise.perturb(&mut x, &mut rng);
            }
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members, model_index, t)
}

/// Sample mean and unbiased (divisor `N_a − 1`) sample covariance, PSD
/// repaired.
pub fn ensemble_stats(e: &Ensemble) -> Result<GaussianBelief> {
    let n = e.len();
    if n < 2 {
        return Err(Error::invalid("ensemble statistics need at least 2 members"));
    }
    let mean = e.mean();
    let dim = e.dim();
    let mut cov = nalgebra::DMatrix::zeros(dim, dim);
    for m in e.members() {
        let r = m - &mean;
        cov += &r * r.transpose();
    }
    cov /= (n - 1) as f64;
    Ok(GaussianBelief::from_computed(mean, repair_psd(&cov)))
}

/// One step of the ensemble run.
#[derive(Debug, Clone)]
pub struct EnsembleStep {
    pub step: usize,
    /// Per-model forecast statistics (empty at step 0).
    pub forecasts: Vec<GaussianBelief>,
    pub analyzed: GaussianBelief,
    pub ensemble: Ensemble,
    pub used_data: bool,
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub steps: Vec<EnsembleStep>,
}

impl EnsembleRun {
    pub fn analyzed_means(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.analyzed.mean().clone()).collect()
    }
}

/// Assimilates member-wise forecasts with shared covariances and perturbed
/// data `d + η^i`, `η^i ~ N(0, D)`.
fn analyze(
    forecasts: &[Ensemble],
    data: Option<&Observation>,
    t: usize,
    seed: u64,
) -> Result<(Vec<DVector<f64>>, Vec<GaussianBelief>)> {
    let stats = forecasts.iter().map(ensemble_stats).collect::<Result<Vec<_>>>()?;
    let covs: Vec<_> = stats.iter().map(|s| s.cov().clone()).collect();
    let plan = FusionPlan::new(&covs, data.map(|d| (d.operator(), d.noise())))?;
    let perturb = match data {
        Some(d) => Some(GaussianSampler::new(d.value().clone(), d.noise())?),
        None => None,
    };
    let n = forecasts[0].len();
    let members = (0..n)
        .into_par_iter()
        .map(|i| {
            let means: Vec<&DVector<f64>> = forecasts.iter().map(|e| &e.members()[i]).collect();
            let value = perturb.as_ref().map(|p| {
                let mut rng = keyed_rng(seed, &[stream::DATA_PERTURBATION, t as u64, i as u64]);
                p.sample(&mut rng)
            });
            plan.apply(&means, value.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((members, stats))
}

/// Runs the multi-model EnKF with `n` members per model.
pub fn run_mm_enkf(problem: &AssimilationProblem, n: usize, seed: u64) -> Result<EnsembleRun> {
    let mut ensemble = enkf_init(&problem.initial, n, seed)?;
    let mut used_data = false;
    if let Some(d) = problem.observation(0) {
        let (members, _) = analyze(std::slice::from_ref(&ensemble), Some(d), 0, seed)?;
        ensemble = Ensemble::new(members, 0, 0)?;
        used_data = true;
    }
    let mut steps = vec![EnsembleStep {
        step: 0,
        forecasts: vec![],
        analyzed: ensemble_stats(&ensemble)?,
        ensemble,
        used_data,
    }];
    for t in 1..=problem.steps {
        let prev = &steps[t - 1].ensemble;
        let run = || -> Result<EnsembleStep> {
            let forecasts = problem
                .models
                .iter()
                .enumerate()
                .map(|(m, model)| enkf_forecast(model, m, prev, t, seed))
                .collect::<Result<Vec<_>>>()?;
            let data = problem.observation(t);
            let (members, stats) = analyze(&forecasts, data, t, seed)?;
            let ensemble = Ensemble::new(members, 0, t)?;
            Ok(EnsembleStep {
                step: t,
                forecasts: stats,
                analyzed: ensemble_stats(&ensemble)?,
                ensemble,
                used_data: data.is_some(),
            })
        };
        steps.push(run().map_err(|e| e.at_step(t))?);
    }
    Ok(EnsembleRun { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::NoiseSchedule;
    use crate::model::{DifferentiableModel, Dynamics, FnMap, JacobianSpec};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn fn_model(f: impl Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static, dim: usize, q: f64) -> ForecastModel {
        let m = DifferentiableModel::new(
            Arc::new(FnMap::new(dim, f)),
            JacobianSpec::DEFAULT_FD,
            NoiseSchedule::isotropic(dim, q).unwrap(),
        )
        .unwrap();
        ForecastModel::new("f", Dynamics::Differentiable(m))
    }

    #[test]
    fn init_checks_and_degenerate_cov() {
        let b = GaussianBelief::scalar(1.5, 0.0).unwrap();
        assert!(enkf_init(&b, 1, 0).is_err());
        let e = enkf_init(&b, 5, 0).unwrap();
        assert!(e.members().iter().all(|m| m[0] == 1.5));
        assert_eq!(enkf_init(&b, 5, 9).unwrap(), e);
    }

    #[test]
    fn init_sample_covariance() {
        let b = GaussianBelief::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        let e = enkf_init(&b, 10_000, 5).unwrap();
        let s = ensemble_stats(&e).unwrap();
        assert!((s.cov()[(0, 0)] - 1.0).abs() < 0.1);
        assert!((s.cov()[(1, 1)] - 4.0).abs() < 0.1);
    }

    #[test]
    fn deterministic_maps_without_noise() {
        let b = GaussianBelief::scalar(0.0, 1.0).unwrap();
        let e = enkf_init(&b, 20, 1).unwrap();
        let same = enkf_forecast(&fn_model(|x| Ok(x.clone()), 1, 0.0), 0, &e, 1, 3).unwrap();
        assert_eq!(same.members(), e.members());
        let shifted = enkf_forecast(&fn_model(|x| Ok(x.add_scalar(2.5)), 1, 0.0), 0, &e, 1, 3).unwrap();
        for (a, b) in shifted.members().iter().zip(e.members()) {
            assert_eq!(a[0], b[0] + 2.5);
        }
    }

    #[test]
    fn stats_examples() {
        let e = Ensemble::new(vec![DVector::from_element(1, 0.0), DVector::from_element(1, 2.0)], 0, 0).unwrap();
        let s = ensemble_stats(&e).unwrap();
        assert_eq!(s.mean()[0], 1.0);
        assert_eq!(s.cov()[(0, 0)], 2.0);
        let flat = Ensemble::new(vec![DVector::from_element(2, 3.0); 4], 0, 0).unwrap();
        assert_eq!(ensemble_stats(&flat).unwrap().cov().amax(), 0.0);
        assert!(Ensemble::new(vec![DVector::from_element(1, 0.0)], 0, 0).is_err());
    }

    #[test]
    fn stats_standard_normal() {
        let b = GaussianBelief::isotropic(DVector::zeros(2), 1.0).unwrap();
        let s = ensemble_stats(&enkf_init(&b, 100_000, 77).unwrap()).unwrap();
        assert_abs_diff_eq!(s.cov(), &DMatrix::identity(2, 2), epsilon = 0.02);
    }
}
