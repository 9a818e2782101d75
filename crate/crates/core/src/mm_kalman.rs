//! Sequential multi-model Kalman filter and its extended-Kalman variant.
//!
//! At each assimilation step the first model forecast is updated against the
//! data with a standard Kalman update; every further model forecast is then
//! treated as a new "measurement" of the running analyzed state (with
//! `H_m = I`) and folded in with another update, using the pseudoinverse of
//! the innovation covariance. Without data the chain starts from model 1's
//! forecast. The resulting `(w_M, W_M)` is forecast by every model to the next
//! step, either through `A W Aᵀ + Q` (linear models) or through the
//! linearization `G W Gᵀ + Q`, `G = g'(w)` (differentiable models).

use nalgebra::{DMatrix, DVector};

use crate::algebra::{pseudo_inverse, repair_psd, PSEUDO_INVERSE_TOL};
use crate::belief::{GaussianBelief, Observation};
use crate::error::{Error, Result};
use crate::model::{DifferentiableModel, Dynamics, ForecastModel, LinearModel};
use crate::problem::AssimilationProblem;

fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    pseudo_inverse(m, PSEUDO_INVERSE_TOL)
}

/// Gain and posterior covariance of the data update of `U` through `H`, `D`.
fn data_update_cov(u: &DMatrix<f64>, h: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = u.nrows();
    let innovation = h * u * h.transpose() + d;
    let gain = u * h.transpose() * pinv(&innovation)?;
    let cov = (DMatrix::identity(n, n) - &gain * h) * u;
    Ok((gain, cov))
}

/// Gain and covariance of fusing a model with covariance `U` into `W`.
fn model_update_cov(w: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = w.nrows();
    let gain = w * pinv(&(w + u))?;
    let cov = (DMatrix::identity(n, n) - &gain) * w;
    Ok((gain, cov))
}

/// Standard Kalman update of the first model forecast against data:
/// `K = U Hᵀ(H U Hᵀ + D)†`, `w = u + K(d − H u)`, `W = (I − K H) U`.
pub fn kalman_init(u1: &GaussianBelief, d: &Observation) -> Result<GaussianBelief> {
    kalman_init_with_gain(u1, d).map(|(b, _)| b)
}

/// [`kalman_init`] also returning the gain.
pub fn kalman_init_with_gain(u1: &GaussianBelief, d: &Observation) -> Result<(GaussianBelief, DMatrix<f64>)> {
    if d.state_dim() != u1.dim() {
        return Err(Error::invalid(format!(
            "observation operator has {} columns, forecast has dimension {}",
            d.state_dim(),
            u1.dim()
        )));
    }
    let (gain, cov) = data_update_cov(u1.cov(), d.operator(), d.noise())?;
    let mean = u1.mean() + &gain * (d.value() - d.operator() * u1.mean());
    Ok((GaussianBelief::from_computed(mean, cov), gain))
}

/// Fuses model forecast `u_m` into the running analyzed state:
/// `K = W(W + U)†`, `w' = w + K(u − w)`, `W' = (I − K) W`.
pub fn fuse_model(w_prev: &GaussianBelief, u_m: &GaussianBelief) -> Result<(GaussianBelief, DMatrix<f64>)> {
    if w_prev.dim() != u_m.dim() {
        return Err(Error::invalid(format!(
            "cannot fuse a {}-dimensional forecast into a {}-dimensional state",
            u_m.dim(),
            w_prev.dim()
        )));
    }
    let (gain, cov) = model_update_cov(w_prev.cov(), u_m.cov())?;
    let mean = w_prev.mean() + &gain * (u_m.mean() - w_prev.mean());
    Ok((GaussianBelief::from_computed(mean, cov), gain))
}

/// Everything computed in one assimilation step.
#[derive(Debug, Clone)]
pub struct FusionStep {
    pub step: usize,
    /// Model forecasts `u_m` entering the step, in fusion order.
    pub forecasts: Vec<GaussianBelief>,
    /// `K_1` (data update) when data was used, then `K_2..K_M`.
    pub gains: Vec<DMatrix<f64>>,
    /// Running analyzed states `w_1..w_M`.
    pub intermediates: Vec<GaussianBelief>,
    pub analyzed: GaussianBelief,
    pub used_data: bool,
    /// Gain-derived per-model weights, mean diagonal of `W_M U_m†`.
    pub model_weights: Vec<f64>,
    /// Mean diagonal of `W_M Hᵀ D† H`, when data was used.
    pub data_weight: Option<f64>,
}

fn mean_diag(m: &DMatrix<f64>) -> f64 {
    m.diagonal().mean()
}

/// One multi-model assimilation step: `kalman_init` with model 1 and the data
/// (if any), then `fuse_model` for models 2..M. With no models the data
/// belief itself is returned.
pub fn assimilate_step(models: &[GaussianBelief], data: Option<&Observation>) -> Result<FusionStep> {
    let mut gains = Vec::new();
    let mut intermediates = Vec::new();
    let mut rest = models.iter();
    let mut current = match (rest.next(), data) {
        (None, None) => return Err(Error::invalid("nothing to assimilate: no models and no data")),
        (None, Some(d)) => {
            if !d.is_identity_operator() {
                return Err(Error::invalid("data-only assimilation needs H = I"));
            }
            d.as_belief()
        }
        (Some(u1), Some(d)) => {
            let (w1, k1) = kalman_init_with_gain(u1, d)?;
            gains.push(k1);
            w1
        }
        (Some(u1), None) => u1.clone(),
    };
    intermediates.push(current.clone());
    for u in rest {
        let (next, k) = fuse_model(&current, u)?;
        gains.push(k);
        current = next;
        intermediates.push(current.clone());
    }
    let model_weights = models
        .iter()
        .map(|u| Ok(mean_diag(&(current.cov() * pinv(u.cov())?))))
        .collect::<Result<Vec<_>>>()?;
    let data_weight = match data {
        Some(d) => Some(mean_diag(
            &(current.cov() * d.operator().transpose() * pinv(d.noise())? * d.operator()),
        )),
        None => None,
    };
    Ok(FusionStep {
        step: data.map(|d| d.time).unwrap_or(0),
        forecasts: models.to_vec(),
        gains,
        intermediates,
        analyzed: current,
        used_data: data.is_some(),
        model_weights,
        data_weight,
    })
}

/// The gains of one assimilation step, which depend only on the covariances.
/// Applying the plan to a set of means performs the same sequential update
/// as [`assimilate_step`]; the ensemble filter uses it to update every member
/// with one set of shared covariances.
#[derive(Debug, Clone)]
pub struct FusionPlan {
    data_gain: Option<(DMatrix<f64>, DMatrix<f64>)>,
    model_gains: Vec<DMatrix<f64>>,
    cov: DMatrix<f64>,
    n_models: usize,
}

impl FusionPlan {
    /// `covs` are the model covariances in fusion order; `data` is `(H, D)`.
    pub fn new(covs: &[DMatrix<f64>], data: Option<(&DMatrix<f64>, &DMatrix<f64>)>) -> Result<Self> {
        let (data_gain, mut w) = match (covs.first(), data) {
            (None, None) => return Err(Error::invalid("nothing to assimilate: no models and no data")),
            (None, Some((h, d))) => {
                if !h.is_square() || *h != DMatrix::identity(h.nrows(), h.nrows()) {
                    return Err(Error::invalid("data-only assimilation needs H = I"));
                }
                (None, d.clone())
            }
            (Some(u1), Some((h, d))) => {
                let (k, w) = data_update_cov(u1, h, d)?;
                (Some((k, h.clone())), w)
            }
            (Some(u1), None) => (None, u1.clone()),
        };
        let mut model_gains = Vec::with_capacity(covs.len().saturating_sub(1));
        for u in covs.iter().skip(1) {
            let (k, next) = model_update_cov(&w, u)?;
            model_gains.push(k);
            w = next;
        }
        Ok(Self {
            data_gain,
            model_gains,
            cov: crate::algebra::symmetrize(&w),
            n_models: covs.len(),
        })
    }

    /// Analyzed covariance `W_M`.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Analyzed mean for one set of model means (and data value).
    pub fn apply(&self, means: &[&DVector<f64>], data: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        if means.len() != self.n_models {
            return Err(Error::invalid("fusion plan applied to the wrong number of models"));
        }
        let mut w = match (means.first(), data, &self.data_gain) {
            (None, Some(d), _) => d.clone(),
            (Some(u1), Some(d), Some((k, h))) => *u1 + k * (d - h * *u1),
            (Some(u1), None, None) => (*u1).clone(),
            _ => return Err(Error::invalid("fusion plan and data availability disagree")),
        };
        for (u, k) in means.iter().skip(1).zip(&self.model_gains) {
            w = &w + k * (*u - &w);
        }
        Ok(w)
    }
}

/// Forecast covariance convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovariancePropagation {
    /// `A W Aᵀ + Q`.
    #[default]
    Standard,
    /// `A Aᵀ W + Q`; agrees with the standard form only when `A` and `W`
    /// commute (e.g. scalars).
    Printed,
}

/// Linear forecast `u = A w`, `U = A W Aᵀ + Q(t)`.
pub fn kf_forecast(model: &LinearModel, analyzed: &GaussianBelief, t: usize) -> Result<GaussianBelief> {
    kf_forecast_with(model, analyzed, t, CovariancePropagation::Standard)
}

pub fn kf_forecast_with(
    model: &LinearModel,
    analyzed: &GaussianBelief,
    t: usize,
    propagation: CovariancePropagation,
) -> Result<GaussianBelief> {
    if model.dim() != analyzed.dim() {
        return Err(Error::invalid("model and state dimensions differ"));
    }
    let a = &model.a;
    let mean = a * analyzed.mean();
    let cov = match propagation {
        CovariancePropagation::Standard => a * analyzed.cov() * a.transpose(),
        CovariancePropagation::Printed => a * a.transpose() * analyzed.cov(),
    } + model.noise.at(t);
    Ok(GaussianBelief::from_computed(mean, cov))
}

/// Linearized forecast `u = g(w)`, `U = G W Gᵀ + Q(t)` with `G = g'(w)`.
pub fn ekf_forecast(model: &DifferentiableModel, analyzed: &GaussianBelief, t: usize) -> Result<GaussianBelief> {
    if model.dim() != analyzed.dim() {
        return Err(Error::invalid("model and state dimensions differ"));
    }
    let g = model.jacobian_at(analyzed.mean())?;
    let mean = model.map.apply(analyzed.mean())?;
    let cov = &g * analyzed.cov() * g.transpose() + model.noise.at(t);
    Ok(GaussianBelief::from_computed(mean, repair_psd(&cov)))
}

/// Forecast over one assimilation step (all substeps, noise after each).
pub fn forecast_belief(model: &ForecastModel, analyzed: &GaussianBelief, t: usize) -> Result<GaussianBelief> {
    let mut belief = analyzed.clone();
    for _ in 0..model.substeps {
        belief = match &model.dynamics {
            Dynamics::Linear(m) => kf_forecast(m, &belief, t)?,
            Dynamics::Differentiable(m) => ekf_forecast(m, &belief, t)?,
        };
    }
    Ok(belief)
}

/// Per-step fusion records of a full run; entry `t` belongs to step `t`.
#[derive(Debug, Clone)]
pub struct FusionTrace {
    pub steps: Vec<FusionStep>,
}

impl FusionTrace {
    pub fn analyzed_means(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.analyzed.mean().clone()).collect()
    }
}

fn initial_step(problem: &AssimilationProblem) -> Result<FusionStep> {
    let m = problem.models.len();
    let init = &problem.initial;
    let mut step = match problem.observation(0) {
        Some(d) => assimilate_step(std::slice::from_ref(init), Some(d))?,
        None => FusionStep {
            step: 0,
            forecasts: vec![],
            gains: vec![],
            intermediates: vec![init.clone()],
            analyzed: init.clone(),
            used_data: false,
            model_weights: vec![],
            data_weight: None,
        },
    };
    step.step = 0;
    step.forecasts = vec![init.clone(); m];
    step.model_weights = vec![f64::NAN; m];
    Ok(step)
}

/// Runs the multi-model (extended) Kalman filter over the whole horizon.
/// Linear models propagate with `A W Aᵀ + Q`, differentiable ones with their
/// Jacobian; steps without data fuse the model forecasts alone.
pub fn run_mm_kf(problem: &AssimilationProblem) -> Result<FusionTrace> {
    let mut steps = Vec::with_capacity(problem.steps + 1);
    steps.push(initial_step(problem)?);
    for t in 1..=problem.steps {
        let prev = &steps[t - 1].analyzed;
        let forecasts = problem
            .models
            .iter()
            .map(|m| forecast_belief(m, prev, t))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_step(t))?;
        let mut entry = assimilate_step(&forecasts, problem.observation(t)).map_err(|e| e.at_step(t))?;
        entry.step = t;
        steps.push(entry);
    }
    Ok(FusionTrace { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::NoiseSchedule;
    use crate::model::{FnMap, JacobianSpec};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn s(mean: f64, var: f64) -> GaussianBelief {
        GaussianBelief::scalar(mean, var).unwrap()
    }

    #[test]
    fn init_equal_variance_average() {
        let w = kalman_init(&s(0.0, 1.0), &Observation::scalar(1, 2.0, 1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(w.mean()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.cov()[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn certain_prior_ignores_data() {
        let w = kalman_init(&s(3.0, 0.0), &Observation::scalar(1, -7.0, 0.3).unwrap()).unwrap();
        assert_eq!(w.mean()[0], 3.0);
        assert_eq!(w.cov()[(0, 0)], 0.0);
    }

    #[test]
    fn init_two_dimensional() {
        // Per-axis closed form: w = d σu²/(σu²+σd²), W = σu²σd²/(σu²+σd²).
        let u = GaussianBelief::isotropic(DVector::zeros(2), 1.0).unwrap();
        let d = Observation::new(
            1,
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
        )
        .unwrap();
        let w = kalman_init(&u, &d).unwrap();
        assert_abs_diff_eq!(w.mean(), &DVector::from_vec(vec![0.5, 0.4]), epsilon = 1e-14);
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.8]));
        assert_abs_diff_eq!(w.cov(), &want, epsilon = 1e-14);
    }

    #[test]
    fn init_dimension_mismatch() {
        let u = GaussianBelief::isotropic(DVector::zeros(2), 1.0).unwrap();
        assert!(kalman_init(&u, &Observation::scalar(1, 0.0, 1.0).unwrap()).is_err());
        assert!(fuse_model(&u, &s(0.0, 1.0)).is_err());
    }

    #[test]
    fn vague_model_is_ignored() {
        let w = GaussianBelief::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
        )
        .unwrap();
        let vague = GaussianBelief::isotropic(DVector::from_vec(vec![50.0, 50.0]), 1e12).unwrap();
        let (out, _) = fuse_model(&w, &vague).unwrap();
        for k in 0..2 {
            assert!(((out.mean()[k] - w.mean()[k]) / w.mean()[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn agreeing_forecast_keeps_mean() {
        let w = s(1.5, 2.0);
        let (out, _) = fuse_model(&w, &s(1.5, 3.0)).unwrap();
        assert_eq!(out.mean()[0], 1.5);
        assert!(out.cov()[(0, 0)] < 2.0);
    }

    #[test]
    fn precision_weighted_chain() {
        let models = [s(1.0, 1.0), s(2.0, 0.5), s(3.0, 0.25)];
        let step = assimilate_step(&models, None).unwrap();
        assert_abs_diff_eq!(step.analyzed.mean()[0], 17.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(step.analyzed.cov()[(0, 0)], 1.0 / 7.0, epsilon = 1e-12);
        assert_eq!(step.gains.len(), 2);
        assert_eq!(step.intermediates.len(), 3);
        let total: f64 = step.model_weights.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn step_edge_cases() {
        assert!(assimilate_step(&[], None).is_err());
        let one = assimilate_step(&[s(4.0, 2.0)], None).unwrap();
        assert_eq!(one.analyzed, s(4.0, 2.0));
        let d = Observation::scalar(1, 2.5, 0.1).unwrap();
        let data_only = assimilate_step(&[], Some(&d)).unwrap();
        assert_eq!(data_only.analyzed.mean()[0], 2.5);
        // vague prior limit
        let vague = assimilate_step(&[s(0.0, 1e8)], Some(&d)).unwrap();
        assert!((vague.analyzed.mean()[0] - 2.5).abs() < 1e-6);
        assert!((vague.analyzed.cov()[(0, 0)] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn two_models_order_swap() {
        let a = assimilate_step(&[s(0.0, 1.0), s(2.0, 1.0)], None).unwrap();
        let b = assimilate_step(&[s(2.0, 1.0), s(0.0, 1.0)], None).unwrap();
        for out in [&a, &b] {
            assert_abs_diff_eq!(out.analyzed.mean()[0], 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(out.analyzed.cov()[(0, 0)], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn plan_matches_step() {
        let models = [
            GaussianBelief::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap(),
            GaussianBelief::new(DVector::from_vec(vec![0.5, 1.0]), DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.7])).unwrap(),
        ];
        let d = Observation::new(3, DVector::from_vec(vec![0.8, 0.4]), DMatrix::identity(2, 2) * 0.3).unwrap();
        let step = assimilate_step(&models, Some(&d)).unwrap();
        let covs: Vec<_> = models.iter().map(|m| m.cov().clone()).collect();
        let plan = FusionPlan::new(&covs, Some((d.operator(), d.noise()))).unwrap();
        let means: Vec<_> = models.iter().map(|m| m.mean()).collect();
        let w = plan.apply(&means, Some(d.value())).unwrap();
        assert_abs_diff_eq!(w, step.analyzed.mean().clone(), epsilon = 1e-14);
        assert_abs_diff_eq!(plan.cov(), step.analyzed.cov(), epsilon = 1e-14);
    }

    #[test]
    fn kf_forecast_examples() {
        let ident = LinearModel::new(DMatrix::identity(2, 2), NoiseSchedule::zero(2)).unwrap();
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(kf_forecast(&ident, &b, 0).unwrap(), b);

        let scalar = LinearModel::new(DMatrix::from_element(1, 1, 2.0), NoiseSchedule::isotropic(1, 3.0).unwrap()).unwrap();
        let f = kf_forecast(&scalar, &s(1.0, 1.0), 0).unwrap();
        assert_eq!(f.cov()[(0, 0)], 7.0);
        let printed = kf_forecast_with(&scalar, &s(1.0, 1.0), 0, CovariancePropagation::Printed).unwrap();
        assert_eq!(printed, f);
    }

    #[test]
    fn rotation_preserves_eigenvalues() {
        let th = std::f64::consts::FRAC_PI_4;
        let r = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let model = LinearModel::new(r.clone(), NoiseSchedule::zero(2)).unwrap();
        let w_cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let b = GaussianBelief::new(DVector::zeros(2), w_cov.clone()).unwrap();
        let f = kf_forecast(&model, &b, 0).unwrap();
        assert_abs_diff_eq!(f.cov(), &(&r * &w_cov * r.transpose()), epsilon = 1e-15);
        let mut eig: Vec<f64> = f.cov().symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(eig[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn ekf_square_map() {
        let map = FnMap::new(1, |x| Ok(x.map(|v| v * v))).with_jacobian(|x| Ok(DMatrix::from_element(1, 1, 2.0 * x[0])));
        let model = DifferentiableModel::new(Arc::new(map), JacobianSpec::Analytic, NoiseSchedule::zero(1)).unwrap();
        let f = ekf_forecast(&model, &s(3.0, 0.01), 0).unwrap();
        assert_eq!(f.mean()[0], 9.0);
        assert_abs_diff_eq!(f.cov()[(0, 0)], 0.36, epsilon = 1e-15);
    }

    #[test]
    fn ekf_equals_kf_for_linear_map() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 1.05]);
        let noise = NoiseSchedule::constant(DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1])).unwrap();
        let lin = LinearModel::new(a, noise).unwrap();
        let diff: DifferentiableModel = lin.clone().into();
        let b = GaussianBelief::new(DVector::from_vec(vec![0.3, -1.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.9])).unwrap();
        let k = kf_forecast(&lin, &b, 4).unwrap();
        let e = ekf_forecast(&diff, &b, 4).unwrap();
        assert_abs_diff_eq!(k.mean(), e.mean(), epsilon = 1e-12);
        assert_abs_diff_eq!(k.cov(), e.cov(), epsilon = 1e-12);
    }
}
