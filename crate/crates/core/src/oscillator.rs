//! Harmonic oscillator test bed `y'' = −w² y` as the first-order system
//! `(y, y')' = (y', −w² y)`.
//!
//! Two competing integrators are provided: the trapezoidal (Crank-Nicolson)
//! rule and classical RK4. Both are linear in the state, so each step is a
//! fixed 2×2 matrix and the filter models built here are [`LinearModel`]s.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::belief::NoiseSchedule;
use crate::error::{Error, Result};
use crate::model::{Dynamics, ForecastModel, LinearModel};
use crate::ode::{self, OdeSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    pub w: f64,
    pub y0: f64,
    pub y0p: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        Self { w: 2.0, y0: 1.0, y0p: 1.0 }
    }
}

impl OscillatorParams {
    pub fn new(w: f64, y0: f64, y0p: f64) -> Result<Self> {
        let p = Self { w, y0, y0p };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::invalid(format!("angular frequency must be positive, got {}", self.w)));
        }
        if !self.y0.is_finite() || !self.y0p.is_finite() {
            return Err(Error::invalid("initial state must be finite"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.y0, self.y0p])
    }

    /// `w² y² + y'²`, conserved by the exact flow.
    pub fn energy(&self, state: &DVector<f64>) -> f64 {
        self.w * self.w * state[0] * state[0] + state[1] * state[1]
    }
}

/// `(y0 cos wt + (y0'/w) sin wt, −w y0 sin wt + y0' cos wt)`.
pub fn exact_solution(p: &OscillatorParams, t: f64) -> DVector<f64> {
    let (s, c) = (p.w * t).sin_cos();
    DVector::from_vec(vec![p.y0 * c + p.y0p / p.w * s, -p.w * p.y0 * s + p.y0p * c])
}

/// `[[0, 1], [−w², 0]]`.
pub fn system_matrix(w: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, 0.0])
}

/// Trapezoidal step matrix `(I − hA/2)⁻¹(I + hA/2)`, written out in closed form.
pub fn cn_matrix(w: f64, dt: f64) -> DMatrix<f64> {
    let a = 0.5 * dt;
    let w2 = w * w;
    let det = 1.0 + a * a * w2;
    DMatrix::from_row_slice(
        2,
        2,
        &[(1.0 - a * a * w2) / det, 2.0 * a / det, -2.0 * a * w2 / det, (1.0 - a * a * w2) / det],
    )
}

/// The RK4 step of a linear system, `Σ_{k≤4} (hA)^k / k!`.
pub fn rk4_matrix(w: f64, dt: f64) -> DMatrix<f64> {
    let ha = system_matrix(w) * dt;
    let mut term = DMatrix::identity(2, 2);
    let mut sum = term.clone();
    for k in 1..=4 {
        term = &term * &ha / k as f64;
        sum += &term;
    }
    sum
}

/// The oscillator as an [`OdeSystem`].
#[derive(Debug, Clone, Copy)]
pub struct Harmonic {
    pub w: f64,
}

impl OdeSystem for Harmonic {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(vec![x[1], -self.w * self.w * x[0]]))
    }

    fn rhs_jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(system_matrix(self.w))
    }
}

pub fn cn_step(p: &OscillatorParams, state: &DVector<f64>, dt: f64) -> DVector<f64> {
    cn_matrix(p.w, dt) * state
}

pub fn rk4_step(p: &OscillatorParams, state: &DVector<f64>, dt: f64) -> DVector<f64> {
    ode::rk4_step(&Harmonic { w: p.w }, state, dt).expect("oscillator right-hand side is total")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[serde(alias = "cn")]
    CrankNicolson,
    Rk4,
}

/// One competing oscillator model: scheme, step, frequency, and the variance
/// of the Gaussian noise added to each component after every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub dt: f64,
    pub w: f64,
    pub pollution: f64,
}

impl IntegratorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid(format!("integrator step must be positive, got {}", self.dt)));
        }
        if !(self.w > 0.0) {
            return Err(Error::invalid(format!("angular frequency must be positive, got {}", self.w)));
        }
        if !(self.pollution >= 0.0) {
            return Err(Error::invalid(format!("pollution variance must be non-negative, got {}", self.pollution)));
        }
        Ok(())
    }

    pub fn step_matrix(&self) -> DMatrix<f64> {
        match self.scheme {
            Scheme::CrankNicolson => cn_matrix(self.w, self.dt),
            Scheme::Rk4 => rk4_matrix(self.w, self.dt),
        }
    }

    /// Integrator steps per interval of length `span`; `span` must be a
    /// whole multiple of `dt`.
    pub fn steps_per(&self, span: f64) -> Result<usize> {
        whole_multiple(span, self.dt)
    }

    /// The model advanced over one assimilation interval of length `grid_dt`.
    pub fn forecast_model(&self, id: impl Into<String>, grid_dt: f64) -> Result<ForecastModel> {
        self.validate()?;
        let substeps = self.steps_per(grid_dt)?;
        let model = LinearModel::new(self.step_matrix(), NoiseSchedule::isotropic(2, self.pollution)?)?;
        Ok(ForecastModel::new(id, Dynamics::Linear(model)).with_substeps(substeps))
    }
}

/// `span / dt` when it is a positive integer up to rounding.
pub fn whole_multiple(span: f64, dt: f64) -> Result<usize> {
    let ratio = span / dt;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::config(format!("{span} is not a whole multiple of the step {dt}")));
    }
    Ok(k as usize)
}

/// The default two-model setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorSetup {
    pub truth: OscillatorParams,
    pub cn: IntegratorSpec,
    pub rk4: IntegratorSpec,
    pub observation_every: f64,
    pub observation_variance: f64,
}

pub fn make_oscillator_models() -> OscillatorSetup {
    OscillatorSetup {
        truth: OscillatorParams::default(),
        cn: IntegratorSpec {
            scheme: Scheme::CrankNicolson,
            dt: 0.3,
            w: 2.0,
            pollution: 0.1,
        },
        rk4: IntegratorSpec {
            scheme: Scheme::Rk4,
            dt: 0.02,
            w: 2.1,
            pollution: 0.1,
        },
        observation_every: 0.6,
        observation_variance: 0.01,
    }
}
