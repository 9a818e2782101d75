//! Heterogeneous-soil Monte Carlo: lognormal `K_s` and `α` drawn once per
//! realization and held constant in space and time.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::infiltration::{initial_rate, integrate_infiltration, InfiltrationModel, Soil, SoilParams};
use crate::rng::{keyed_rng, stream};

/// A model evaluated on every draw, with `K_s` and `α` rescaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McModel {
    pub model: InfiltrationModel,
    pub ks_scale: f64,
    pub alpha_scale: f64,
}

impl McModel {
    pub fn plain(model: InfiltrationModel) -> Self {
        Self {
            model,
            ks_scale: 1.0,
            alpha_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSamples {
    pub ks: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `values[m][k]`: rate of model `m` at `t_eval` for draw `k`.
    pub values: Vec<Vec<f64>>,
    /// Draws dropped because some model failed on them.
    pub failures: usize,
}

/// `(K_s, α)` for draw `k`: `ln K_s ~ N(μ_K, σ_K²)`, `ln α ~ N(μ_α, σ_α²)`,
/// independent.
pub fn draw_soil_constants(params: &SoilParams, k: usize, seed: u64) -> (f64, f64) {
    let mut rng = keyed_rng(seed, &[stream::PARAMETERS, k as u64]);
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    (
        (params.ln_ks_mean + params.ln_ks_var.sqrt() * z1).exp(),
        (params.ln_alpha_mean + params.ln_alpha_var.sqrt() * z2).exp(),
    )
}

fn rate_at(model: &McModel, params: &SoilParams, ks: f64, alpha: f64, t0: f64, t_eval: f64, dt: f64) -> Result<f64> {
    let soil = Soil::new(params.with_constants(ks * model.ks_scale, alpha * model.alpha_scale))?;
    let i0 = initial_rate(model.model, &soil, t0)?;
    let path = integrate_infiltration(model.model, &soil, i0, t0, dt, t_eval)?;
    Ok(path[path.len() - 1].i)
}

/// Integrates every model from `t0` to `t_eval` for `n` draws, in parallel;
/// sample order follows the draw index regardless of thread count.
pub fn monte_carlo_infiltration(
    params: &SoilParams,
    models: &[McModel],
    n: usize,
    t0: f64,
    t_eval: f64,
    dt: f64,
    seed: u64,
) -> Result<McSamples> {
    if n == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one draw"));
    }
    if models.is_empty() {
        return Err(Error::invalid("Monte Carlo needs at least one model"));
    }
    params.validate()?;
    let rows: Vec<Option<(f64, f64, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let (ks, alpha) = draw_soil_constants(params, k, seed);
            let values = models
                .iter()
                .map(|m| rate_at(m, params, ks, alpha, t0, t_eval, dt))
                .collect::<Result<Vec<_>>>();
            match values {
                Ok(v) => Some((ks, alpha, v)),
                Err(e) => {
                    log::debug!("draw {k} (K_s = {ks}, alpha = {alpha}) skipped: {e}");
                    None
                }
            }
        })
        .collect();
    let failures = rows.iter().filter(|r| r.is_none()).count();
    if failures > 0 {
        log::warn!("{failures} of {n} Monte Carlo draws failed and were skipped");
    }
    let mut out = McSamples {
        ks: Vec::new(),
        alpha: Vec::new(),
        values: vec![Vec::new(); models.len()],
        failures,
    };
    for (ks, alpha, v) in rows.into_iter().flatten() {
        out.ks.push(ks);
        out.alpha.push(alpha);
        for (m, x) in v.into_iter().enumerate() {
            out.values[m].push(x);
        }
    }
    if out.ks.is_empty() {
        return Err(Error::Numerical("every Monte Carlo draw failed".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_draws_are_identical() {
        let p = SoilParams {
            ln_ks_var: 0.0,
            ln_alpha_var: 0.0,
            ..SoilParams::default()
        };
        let out = monte_carlo_infiltration(&p, &[McModel::plain(InfiltrationModel::GreenAmpt)], 4, 0.1, 1.0, 1e-2, 5).unwrap();
        assert!(out.values[0].iter().all(|v| *v == out.values[0][0]));
        assert_eq!(out.failures, 0);
    }

    #[test]
    fn lognormal_mean() {
        let p = SoilParams::default();
        let n = 100_000;
        let mean = (0..n).map(|k| draw_soil_constants(&p, k, 11).0).sum::<f64>() / n as f64;
        let expected = (p.ln_ks_mean + 0.5 * p.ln_ks_var).exp();
        assert!((mean / expected - 1.0).abs() < 0.02, "{mean} vs {expected}");
    }
}
