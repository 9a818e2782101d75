//! Multi-model particle filter with a reference model.
//!
//! Only the reference ensemble is weighted: each of its particles is scored
//! against the data and against the ensemble mean of every other model, the
//! scores are multiplied into one posterior weight per particle, and every
//! model's ensemble is then rebuilt by resampling the reference particles.
//! Weights are carried in log space so products of sharp likelihoods do not
//! underflow.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::algebra::GaussianDensity;
use crate::belief::{GaussianBelief, Observation};
use crate::enkf::{enkf_forecast, enkf_init, ensemble_stats, Ensemble};
use crate::error::{Error, Result};
use crate::model::ForecastModel;
use crate::problem::AssimilationProblem;
use crate::rng::{keyed_rng, stream};

/// Tolerance on `Σ w = 1` accepted by [`resample`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// One ensemble per model plus the index of the reference model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub ensembles: Vec<Ensemble>,
    pub reference: usize,
    pub step: usize,
}

impl ParticleCloud {
    pub fn new(ensembles: Vec<Ensemble>, reference: usize, step: usize) -> Result<Self> {
        let first = ensembles.first().ok_or_else(|| Error::invalid("particle cloud needs at least one ensemble"))?;
        if ensembles.iter().any(|e| e.len() != first.len() || e.dim() != first.dim()) {
            return Err(Error::invalid("ensembles in a cloud must share size and dimension"));
        }
        if reference >= ensembles.len() {
            return Err(Error::invalid(format!("reference index {reference} out of range")));
        }
        Ok(Self { ensembles, reference, step })
    }

    pub fn reference_ensemble(&self) -> &Ensemble {
        &self.ensembles[self.reference]
    }

    pub fn size(&self) -> usize {
        self.ensembles[0].len()
    }
}

/// Particle weights, stored as logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    log_weights: Vec<f64>,
}

impl WeightVector {
    /// From plain non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
        })
    }

    pub fn from_log_weights(log_weights: Vec<f64>) -> Self {
        Self { log_weights }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            log_weights: vec![-(n as f64).ln(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn is_normalized(&self) -> bool {
        let s: f64 = self.weights().iter().sum();
        (s - 1.0).abs() <= NORMALIZATION_TOL
    }

    /// Effective sample size `1 / Σ w̃²` of the normalized weights.
    pub fn effective_sample_size(&self) -> f64 {
        let w = self.weights();
        let s: f64 = w.iter().sum();
        1.0 / w.iter().map(|x| (x / s).powi(2)).sum::<f64>()
    }
}

/// Scores every particle `u^i` by `N(value | H u^i, cov)`.
fn likelihood_weights(
    particles: &[DVector<f64>],
    value: &DVector<f64>,
    operator: Option<&DMatrix<f64>>,
    cov: &DMatrix<f64>,
) -> Result<WeightVector> {
    let dens = GaussianDensity::new(cov)?;
    let log_weights = particles
        .par_iter()
        .map(|u| match operator {
            Some(h) => dens.log_density(value, &(h * u)),
            None => dens.log_density(value, u),
        })
        .collect();
    Ok(WeightVector::from_log_weights(log_weights))
}

/// `ω_1^i ∝ N(d | H u_1^i, D)`, unnormalized.
pub fn data_weight(reference: &Ensemble, d: &Observation) -> Result<WeightVector> {
    if d.state_dim() != reference.dim() {
        return Err(Error::invalid("observation and ensemble dimensions differ"));
    }
    likelihood_weights(reference.members(), d.value(), Some(d.operator()), d.noise())
}

/// `ω_m^i ∝ N(mean(u_m) | u_1^i, U_m)`, unnormalized.
pub fn model_weight(reference: &Ensemble, other: &Ensemble, u_m: &DMatrix<f64>) -> Result<WeightVector> {
    if other.dim() != reference.dim() || u_m.nrows() != reference.dim() {
        return Err(Error::invalid("ensemble dimensions differ"));
    }
    likelihood_weights(reference.members(), &other.mean(), None, u_m)
}

/// `ω_i = Π_m ω_m^i`, normalized to sum to one.
pub fn posterior_weights(parts: &[WeightVector]) -> Result<WeightVector> {
    let first = parts.first().ok_or_else(|| Error::invalid("no weight vectors to combine"))?;
    let n = first.len();
    if n == 0 || parts.iter().any(|p| p.len() != n) {
        return Err(Error::invalid("weight vectors differ in length"));
    }
    let combined: Vec<f64> = (0..n).map(|i| parts.iter().map(|p| p.log_weights[i]).sum()).collect();
    let max = combined.iter().copied().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || combined.iter().any(|x| x.is_nan()) {
        return Err(Error::DegenerateWeights(format!(
            "all {n} posterior weights are zero or non-finite"
        )));
    }
    let sum: f64 = combined.iter().map(|x| (x - max).exp()).sum();
    let log_norm = max + sum.ln();
    Ok(WeightVector {
        log_weights: combined.into_iter().map(|x| x - log_norm).collect(),
    })
}

/// Systematic resampling: positions `(offset + k)/N`, `offset ∈ [0, 1)`.
pub fn systematic_indices(weights: &[f64], offset: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0] / total;
    let mut j = 0;
    for k in 0..n {
        let u = (offset + k as f64) / n as f64;
        while u >= cumulative && j + 1 < n {
            j += 1;
            cumulative += weights[j] / total;
        }
        out.push(j);
    }
    out
}

/// Rebuilds every model's ensemble from the reference particles by
/// systematic resampling on `w`; model `m` uses its own offset drawn from
/// the stream keyed by `(seed, step, m)`.
pub fn resample(cloud: &ParticleCloud, w: &WeightVector, seed: u64) -> Result<ParticleCloud> {
    if w.len() != cloud.size() {
        return Err(Error::invalid("weight vector and cloud differ in size"));
    }
    if !w.is_normalized() {
        return Err(Error::invalid("resampling needs normalized weights"));
    }
    let weights = w.weights();
    let reference = cloud.reference_ensemble().members();
    let ensembles = (0..cloud.ensembles.len())
        .map(|m| {
            let mut rng = keyed_rng(seed, &[stream::RESAMPLE, cloud.step as u64, m as u64]);
            let offset: f64 = rng.random();
            let members = systematic_indices(&weights, offset)
                .into_iter()
                .map(|i| reference[i].clone())
                .collect();
            Ensemble::new(members, m, cloud.step)
        })
        .collect::<Result<Vec<_>>>()?;
    ParticleCloud::new(ensembles, cloud.reference, cloud.step)
}

/// Advances every model's ensemble one assimilation step.
pub fn pf_forecast(cloud: &ParticleCloud, models: &[ForecastModel], t: usize, seed: u64) -> Result<ParticleCloud> {
    if models.len() != cloud.ensembles.len() {
        return Err(Error::invalid("one model per ensemble is required"));
    }
    let ensembles = models
        .iter()
        .zip(&cloud.ensembles)
        .enumerate()
        .map(|(m, (model, e))| enkf_forecast(model, m, e, t, seed))
        .collect::<Result<Vec<_>>>()?;
    ParticleCloud::new(ensembles, cloud.reference, t)
}

/// Reference weights for one observation step.
pub fn cloud_weights(cloud: &ParticleCloud, d: &Observation) -> Result<WeightVector> {
    let reference = cloud.reference_ensemble();
    let mut parts = vec![data_weight(reference, d)?];
    for (m, e) in cloud.ensembles.iter().enumerate() {
        if m != cloud.reference {
            let stats = ensemble_stats(e)?;
            parts.push(model_weight(reference, e, stats.cov())?);
        }
    }
    posterior_weights(&parts)
}

#[derive(Debug, Clone)]
pub struct ParticleStep {
    pub step: usize,
    /// Per-model forecast statistics before resampling, in the problem's
    /// original model order.
    pub forecasts: Vec<GaussianBelief>,
    /// Reference-ensemble mean and spread after any resampling.
    pub analyzed: GaussianBelief,
    pub effective_sample_size: Option<f64>,
    pub fell_back_to_uniform: bool,
}

#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub reference: usize,
    pub steps: Vec<ParticleStep>,
}

impl ParticleRun {
    pub fn analyzed_means(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.analyzed.mean().clone()).collect()
    }
}

/// Runs the multi-model particle filter with model `reference` as the
/// reference. Steps with data weight and resample; the others only forecast.
pub fn run_mm_pf(problem: &AssimilationProblem, n: usize, reference: usize, seed: u64) -> Result<ParticleRun> {
    let m_count = problem.models.len();
    if reference >= m_count {
        return Err(Error::config(format!("reference model {reference} out of range ({m_count} models)")));
    }
    let initial = enkf_init(&problem.initial, n, seed)?;
    let ensembles = (0..m_count)
        .map(|m| Ensemble::new(initial.members().to_vec(), m, 0))
        .collect::<Result<Vec<_>>>()?;
    let mut cloud = ParticleCloud::new(ensembles, reference, 0)?;
    let mut steps = Vec::with_capacity(problem.steps + 1);

    let assimilate = |cloud: ParticleCloud, t: usize| -> Result<(ParticleCloud, Vec<GaussianBelief>, Option<f64>, bool)> {
        let forecasts = cloud.ensembles.iter().map(ensemble_stats).collect::<Result<Vec<_>>>()?;
        let Some(d) = problem.observation(t) else {
            return Ok((cloud, forecasts, None, false));
        };
        let (w, fallback) = match cloud_weights(&cloud, d) {
            Ok(w) => (w, false),
            Err(Error::DegenerateWeights(msg)) => {
                log::warn!("step {t}: {msg}; falling back to uniform weights");
                (WeightVector::uniform(n), true)
            }
            Err(e) => return Err(e),
        };
        let ess = w.effective_sample_size();
        Ok((resample(&cloud, &w, seed)?, forecasts, Some(ess), fallback))
    };

    for t in 0..=problem.steps {
        if t > 0 {
            cloud = pf_forecast(&cloud, &problem.models, t, seed).map_err(|e| e.at_step(t))?;
        }
        let (next, forecasts, ess, fallback) = assimilate(cloud, t).map_err(|e| e.at_step(t))?;
        cloud = next;
        steps.push(ParticleStep {
            step: t,
            forecasts,
            analyzed: ensemble_stats(cloud.reference_ensemble())?,
            effective_sample_size: ess,
            fell_back_to_uniform: fallback,
        });
    }
    Ok(ParticleRun { reference, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_ensemble(xs: &[f64]) -> Ensemble {
        Ensemble::new(xs.iter().map(|&x| DVector::from_element(1, x)).collect(), 0, 0).unwrap()
    }

    #[test]
    fn data_weight_examples() {
        let e = scalar_ensemble(&[0.0, 1.0, -1.0, 3.0]);
        let d = Observation::scalar(1, 0.0, 1.0).unwrap();
        let w = data_weight(&e, &d).unwrap().weights();
        assert!(w[0] > w[1] && w[0] > w[3]);
        assert_abs_diff_eq!(w[1], w[2], epsilon = 1e-15);
        assert_abs_diff_eq!(w[0] / w[1], 0.5f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn model_weight_examples() {
        let reference = scalar_ensemble(&[0.0, 2.0, 1.0]);
        let other = scalar_ensemble(&[0.5, 1.5]);
        let u = DMatrix::from_element(1, 1, 1.0);
        let w = model_weight(&reference, &other, &u).unwrap().weights();
        assert_abs_diff_eq!(w[0], w[1], epsilon = 1e-15);
        assert!(w[2] > w[0]);
        let flat = scalar_ensemble(&[0.3, 0.3, 0.3]);
        let w = posterior_weights(&[model_weight(&flat, &other, &u).unwrap()]).unwrap().weights();
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn posterior_examples() {
        let w = posterior_weights(&[WeightVector::uniform(4)]).unwrap().weights();
        assert!(w.iter().all(|x| (x - 0.25).abs() < 1e-15));
        let a = WeightVector::from_weights(&[1.0, 3.0]).unwrap();
        let b = WeightVector::from_weights(&[2.0, 1.0]).unwrap();
        let w = posterior_weights(&[a, b]).unwrap().weights();
        assert_abs_diff_eq!(w[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.6, epsilon = 1e-15);
        let zero = WeightVector::from_weights(&[0.0, 0.0]).unwrap();
        assert!(matches!(posterior_weights(&[zero]), Err(Error::DegenerateWeights(_))));
        assert!(posterior_weights(&[]).is_err());
    }

    #[test]
    fn systematic_strata() {
        // Uniform weights, offset 0.5: positions 1/8, 3/8, 5/8, 7/8 fall one per stratum.
        assert_eq!(systematic_indices(&[0.25; 4], 0.5), vec![0, 1, 2, 3]);
        assert_eq!(systematic_indices(&[1.0, 0.0, 0.0], 0.7), vec![0, 0, 0]);
        assert_eq!(systematic_indices(&[0.0, 0.0, 1.0], 0.0), vec![2, 2, 2]);
    }

    #[test]
    fn resample_rejects_unnormalized() {
        let e = scalar_ensemble(&[0.0, 1.0]);
        let cloud = ParticleCloud::new(vec![e], 0, 1).unwrap();
        let w = WeightVector::from_weights(&[1.0, 1.0]).unwrap();
        assert!(resample(&cloud, &w, 0).is_err());
    }

    #[test]
    fn resample_copies_reference_into_every_model() {
        let r = scalar_ensemble(&[10.0, 20.0, 30.0]);
        let o = scalar_ensemble(&[-1.0, -2.0, -3.0]);
        let cloud = ParticleCloud::new(vec![o, r], 1, 2).unwrap();
        let w = WeightVector::from_weights(&[0.0, 1.0, 0.0]).unwrap();
        let out = resample(&cloud, &w, 4).unwrap();
        for e in &out.ensembles {
            assert!(e.members().iter().all(|m| m[0] == 20.0));
        }
    }
}
