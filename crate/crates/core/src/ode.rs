//! Classical fourth-order Runge-Kutta for autonomous systems, with the exact
//! Jacobian of the discrete step obtained by differentiating each stage.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::StateMap;

/// Autonomous ODE `x' = f(x)` with Jacobian `F = ∂f/∂x`.
pub trait OdeSystem: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn rhs_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

pub fn rk4_step<S: OdeSystem + ?Sized>(sys: &S, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let k1 = sys.rhs(x)?;
    let k2 = sys.rhs(&(x + &k1 * (0.5 * h)))?;
    let k3 = sys.rhs(&(x + &k2 * (0.5 * h)))?;
    let k4 = sys.rhs(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// One RK4 step together with `∂x_{n+1}/∂x_n`.
pub fn rk4_step_with_jacobian<S: OdeSystem + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    let eye = DMatrix::<f64>::identity(n, n);

    let k1 = sys.rhs(x)?;
    let j1 = sys.rhs_jacobian(x)?;

    let x2 = x + &k1 * (0.5 * h);
    let k2 = sys.rhs(&x2)?;
    let j2 = sys.rhs_jacobian(&x2)? * (&eye + &j1 * (0.5 * h));

    let x3 = x + &k2 * (0.5 * h);
    let k3 = sys.rhs(&x3)?;
    let j3 = sys.rhs_jacobian(&x3)? * (&eye + &j2 * (0.5 * h));

    let x4 = x + &k3 * h;
    let k4 = sys.rhs(&x4)?;
    let j4 = sys.rhs_jacobian(&x4)? * (&eye + &j3 * h);

    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let jac = eye + (j1 + j2 * 2.0 + j3 * 2.0 + j4) * (h / 6.0);
    Ok((next, jac))
}

/// `substeps` RK4 steps of size `h`, exposed as a single model step.
#[derive(Debug, Clone)]
pub struct Rk4Flow<S> {
    pub system: S,
    pub h: f64,
    pub substeps: usize,
}

impl<S: OdeSystem> Rk4Flow<S> {
    pub fn new(system: S, h: f64, substeps: usize) -> Self {
        Self { system, h, substeps }
    }
}

impl<S: OdeSystem> StateMap for Rk4Flow<S> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = x.clone();
        for _ in 0..self.substeps {
            x = rk4_step(&self.system, &x, self.h)?;
        }
        Ok(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let run = || {
            let n = x.len();
            let mut x = x.clone();
            let mut jac = DMatrix::identity(n, n);
            for _ in 0..self.substeps {
                let (next, j) = rk4_step_with_jacobian(&self.system, &x, self.h)?;
                jac = j * jac;
                x = next;
            }
            Ok(jac)
        };
        Some(run())
    }
}
