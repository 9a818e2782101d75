//! Precision-weighted Bayesian model averaging.
//!
//! Model `m` gets the matrix weight `Λ_m = W U_m†` with `W = (Σ U_k†)†`, so
//! the combination is the product of the model Gaussians. Without data this
//! is what the multi-model Kalman chain computes, one model at a time.

use nalgebra::{DMatrix, DVector};

use crate::algebra::{pseudo_inverse, PSEUDO_INVERSE_TOL};
use crate::belief::GaussianBelief;
use crate::error::{Error, Result};
use crate::mm_kalman::forecast_belief;
use crate::problem::AssimilationProblem;

#[derive(Debug, Clone)]
pub struct BmaCombination {
    /// Scalar model weights (mean diagonal of `Λ_m`), summing to one.
    pub weights: Vec<f64>,
    pub combined: GaussianBelief,
}

pub fn bma_combine(models: &[GaussianBelief]) -> Result<BmaCombination> {
    let first = models.first().ok_or_else(|| Error::invalid("BMA needs at least one model"))?;
    let n = first.dim();
    if models.iter().any(|m| m.dim() != n) {
        return Err(Error::invalid("BMA models differ in dimension"));
    }
    if models.len() == 1 {
        return Ok(BmaCombination {
            weights: vec![1.0],
            combined: first.clone(),
        });
    }
    let precisions = models
        .iter()
        .map(|m| pseudo_inverse(m.cov(), PSEUDO_INVERSE_TOL))
        .collect::<Result<Vec<_>>>()?;
    let total = precisions.iter().fold(DMatrix::zeros(n, n), |acc, p| acc + p);
    let cov = pseudo_inverse(&total, PSEUDO_INVERSE_TOL)?;
    let weighted = models
        .iter()
        .zip(&precisions)
        .fold(DVector::zeros(n), |acc, (m, p)| acc + p * m.mean());
    let mean = &cov * weighted;
    let raw: Vec<f64> = precisions.iter().map(|p| (&cov * p).diagonal().mean().max(0.0)).collect();
    let sum: f64 = raw.iter().sum();
    let weights = if sum > 0.0 && sum.is_finite() {
        raw.iter().map(|w| w / sum).collect()
    } else {
        vec![1.0 / models.len() as f64; models.len()]
    };
    Ok(BmaCombination {
        weights,
        combined: GaussianBelief::from_computed(mean, cov),
    })
}

#[derive(Debug, Clone)]
pub struct BmaStep {
    pub step: usize,
    pub forecasts: Vec<GaussianBelief>,
    pub combination: BmaCombination,
}

#[derive(Debug, Clone)]
pub struct BmaRun {
    pub steps: Vec<BmaStep>,
}

impl BmaRun {
    pub fn combined_means(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.combination.combined.mean().clone()).collect()
    }
}

/// Forecasts every model from the previous combined state and averages.
/// Observations in `problem` are never read.
pub fn run_bma(problem: &AssimilationProblem) -> Result<BmaRun> {
    let m = problem.models.len();
    let mut steps = vec![BmaStep {
        step: 0,
        forecasts: vec![problem.initial.clone(); m],
        combination: BmaCombination {
            weights: vec![1.0 / m as f64; m],
            combined: problem.initial.clone(),
        },
    }];
    for t in 1..=problem.steps {
        let prev = &steps[t - 1].combination.combined;
        let run = || -> Result<BmaStep> {
            let forecasts = problem
                .models
                .iter()
                .map(|model| forecast_belief(model, prev, t))
                .collect::<Result<Vec<_>>>()?;
            let combination = bma_combine(&forecasts)?;
            Ok(BmaStep {
                step: t,
                forecasts,
                combination,
            })
        };
        steps.push(run().map_err(|e| e.at_step(t))?);
    }
    Ok(BmaRun { steps })
}
