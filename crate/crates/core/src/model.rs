//! Forecast models: linear maps `x ↦ A x` and differentiable maps `g` with
//! analytic or finite-difference Jacobians, each paired with an error
//! schedule `Q_m(t)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::algebra::check_finite;
use crate::belief::NoiseSchedule;
use crate::error::{Error, Result};

/// One deterministic model step `x(t+1) = g[x(t)]`.
pub trait StateMap: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Analytic `g'(x)`, when the map has one.
    fn jacobian(&self, _x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

/// How `g'` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianSpec {
    Analytic,
    /// Central differences with step `rel_step · max(1, |x_j|)`.
    FiniteDifference { rel_step: f64 },
}

impl JacobianSpec {
    pub const DEFAULT_FD: JacobianSpec = JacobianSpec::FiniteDifference { rel_step: 1e-6 };
}

/// Central-difference Jacobian of `map` at `x`.
pub fn finite_difference_jacobian(map: &dyn StateMap, x: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>> {
    if !(rel_step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let n = x.len();
    let mut jac = DMatrix::zeros(map.dim(), n);
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (map.apply(&xp)? - map.apply(&xm)?) / (2.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// `x ↦ A x`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub a: DMatrix<f64>,
}

impl StateMap for LinearMap {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.a.ncols() {
            return Err(Error::invalid("linear map dimension mismatch"));
        }
        Ok(&self.a * x)
    }

    fn jacobian(&self, _x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(self.a.clone()))
    }
}

type VecFn = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync;
type MatFn = dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync;

/// A map built from closures.
pub struct FnMap {
    dim: usize,
    f: Box<VecFn>,
    df: Option<Box<MatFn>>,
}

impl FnMap {
    pub fn new(dim: usize, f: impl Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            f: Box::new(f),
            df: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        df: impl Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.df = Some(Box::new(df));
        self
    }
}

impl fmt::Debug for FnMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnMap")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.df.is_some())
            .finish()
    }
}

impl StateMap for FnMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (self.f)(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        self.df.as_ref().map(|df| df(x))
    }
}

/// Linear model `A_m` with error schedule.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub noise: NoiseSchedule,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, noise: NoiseSchedule) -> Result<Self> {
        check_finite(a.as_slice(), "model matrix")?;
        if !a.is_square() || a.nrows() != noise.dim() {
            return Err(Error::invalid(format!(
                "model matrix is {}x{}, noise has dimension {}",
                a.nrows(),
                a.ncols(),
                noise.dim()
            )));
        }
        Ok(Self { a, noise })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Nonlinear model `g_m` with its Jacobian recipe and error schedule.
#[derive(Debug, Clone)]
pub struct DifferentiableModel {
    pub map: Arc<dyn StateMap>,
    pub jacobian: JacobianSpec,
    pub noise: NoiseSchedule,
}

impl DifferentiableModel {
    pub fn new(map: Arc<dyn StateMap>, jacobian: JacobianSpec, noise: NoiseSchedule) -> Result<Self> {
        if map.dim() != noise.dim() {
            return Err(Error::invalid(format!(
                "map has dimension {}, noise has dimension {}",
                map.dim(),
                noise.dim()
            )));
        }
        if let JacobianSpec::FiniteDifference { rel_step } = jacobian {
            if !(rel_step > 0.0) {
                return Err(Error::invalid("finite-difference step must be positive"));
            }
        }
        Ok(Self { map, jacobian, noise })
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    /// `g'(x)`.
    pub fn jacobian_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let jac = match self.jacobian {
            JacobianSpec::Analytic => self
                .map
                .jacobian(x)
                .ok_or_else(|| Error::Numerical("map has no analytic jacobian".into()))??,
            JacobianSpec::FiniteDifference { rel_step } => finite_difference_jacobian(self.map.as_ref(), x, rel_step)?,
        };
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("jacobian has non-finite entries".into()));
        }
        Ok(jac)
    }
}

impl From<LinearModel> for DifferentiableModel {
    fn from(m: LinearModel) -> Self {
        DifferentiableModel {
            map: Arc::new(LinearMap { a: m.a }),
            jacobian: JacobianSpec::Analytic,
            noise: m.noise,
        }
    }
}

/// Either kind of model; decides whether the forecast uses the KF or EKF
/// covariance propagation.
#[derive(Debug, Clone)]
pub enum Dynamics {
    Linear(LinearModel),
    Differentiable(DifferentiableModel),
}

impl Dynamics {
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Linear(m) => m.dim(),
            Dynamics::Differentiable(m) => m.dim(),
        }
    }

    pub fn noise(&self) -> &NoiseSchedule {
        match self {
            Dynamics::Linear(m) => &m.noise,
            Dynamics::Differentiable(m) => &m.noise,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Dynamics::Linear(m) => {
                if x.len() != m.dim() {
                    return Err(Error::invalid("state dimension mismatch"));
                }
                Ok(&m.a * x)
            }
            Dynamics::Differentiable(m) => m.map.apply(x),
        }
    }

    pub fn with_noise(&self, noise: NoiseSchedule) -> Self {
        match self {
            Dynamics::Linear(m) => Dynamics::Linear(LinearModel { a: m.a.clone(), noise }),
            Dynamics::Differentiable(m) => Dynamics::Differentiable(DifferentiableModel {
                noise,
                ..m.clone()
            }),
        }
    }
}

/// A named model as used by the scenario runners: `substeps` applications of
/// the dynamics (each followed by its noise) make up one assimilation step.
#[derive(Debug, Clone)]
pub struct ForecastModel {
    pub id: String,
    pub dynamics: Dynamics,
    pub substeps: usize,
}

impl ForecastModel {
    pub fn new(id: impl Into<String>, dynamics: Dynamics) -> Self {
        Self {
            id: id.into(),
            dynamics,
            substeps: 1,
        }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    /// Noise-free forecast over one assimilation step.
    pub fn advance(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = x.clone();
        for _ in 0..self.substeps {
            x = self.dynamics.apply(&x)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn finite_difference_matches_analytic() {
        let map = FnMap::new(2, |x| Ok(DVector::from_vec(vec![x[0] * x[1], x[0].sin()])));
        let x = DVector::from_vec(vec![0.7, -1.3]);
        let fd = finite_difference_jacobian(&map, &x, 1e-6).unwrap();
        let exact = DMatrix::from_row_slice(2, 2, &[x[1], x[0], x[0].cos(), 0.0]);
        assert_relative_eq!(fd, exact, epsilon = 1e-8);
    }

    #[test]
    fn dimension_checks() {
        let noise = NoiseSchedule::zero(3);
        assert!(LinearModel::new(DMatrix::identity(2, 2), noise.clone()).is_err());
        let map: Arc<dyn StateMap> = Arc::new(LinearMap { a: DMatrix::identity(2, 2) });
        assert!(DifferentiableModel::new(map.clone(), JacobianSpec::Analytic, noise).is_err());
        let fd = JacobianSpec::FiniteDifference { rel_step: 0.0 };
        assert!(DifferentiableModel::new(map, fd, NoiseSchedule::zero(2)).is_err());
    }

    #[test]
    fn missing_analytic_jacobian_is_numerical_error() {
        let map: Arc<dyn StateMap> = Arc::new(FnMap::new(1, |x| Ok(x.clone())));
        let m = DifferentiableModel::new(map, JacobianSpec::Analytic, NoiseSchedule::zero(1)).unwrap();
        assert!(matches!(m.jacobian_at(&DVector::zeros(1)), Err(Error::Numerical(_))));
    }
}
