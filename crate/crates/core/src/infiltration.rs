//! Ponded infiltration test bed: van Genuchten closures, the Green-Ampt and
//! Parlange reduced models (implicit and ODE forms), sorptivity, capillary
//! drive, and the Bet-Dagan soil.
//!
//! Units are cm and minutes throughout.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::ode::OdeSystem;

/// Start of every infiltration integration; both ODEs are singular at `t = 0`.
pub const DEFAULT_T0: f64 = 0.1;

/// Soil description. `K_s` and `α` are lognormal; the homogeneous runs use
/// `K_s = exp(ln_ks_mean)` and `α = exp(ln_alpha_mean)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoilParams {
    pub ln_ks_mean: f64,
    pub ln_ks_var: f64,
    pub ln_alpha_mean: f64,
    pub ln_alpha_var: f64,
    pub phi: f64,
    pub theta_i: f64,
    pub theta_init: f64,
    pub psi0: f64,
    pub psi_j: f64,
    pub n: f64,
}

impl Default for SoilParams {
    /// Bet-Dagan.
    fn default() -> Self {
        Self {
            ln_ks_mean: -3.58,
            ln_ks_var: 0.89,
            ln_alpha_mean: -3.01,
            ln_alpha_var: 0.63,
            phi: 0.42,
            theta_i: 0.13,
            theta_init: 0.13,
            psi0: 1.0,
            psi_j: 2.0,
            n: 1.81,
        }
    }
}

impl SoilParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.ln_ks_mean,
            self.ln_ks_var,
            self.ln_alpha_mean,
            self.ln_alpha_var,
            self.phi,
            self.theta_i,
            self.theta_init,
            self.psi0,
            self.psi_j,
            self.n,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("soil parameters must be finite"));
        }
        if !(0.0 < self.theta_i && self.theta_i <= self.theta_init && self.theta_init < self.phi && self.phi < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < theta_i <= theta_init < phi < 1, got theta_i={}, theta_init={}, phi={}",
                self.theta_i, self.theta_init, self.phi
            )));
        }
        if !(self.n > 1.0) {
            return Err(Error::invalid(format!("van Genuchten n must exceed 1, got {}", self.n)));
        }
        if self.psi0 < 0.0 || !(self.psi_j > 0.0) {
            return Err(Error::invalid("need psi0 >= 0 and psi_j > 0"));
        }
        if self.ln_ks_var < 0.0 || self.ln_alpha_var < 0.0 {
            return Err(Error::invalid("log-variances must be non-negative"));
        }
        Ok(())
    }

    pub fn m(&self) -> f64 {
        1.0 - 1.0 / self.n
    }

    pub fn ks(&self) -> f64 {
        self.ln_ks_mean.exp()
    }

    pub fn alpha(&self) -> f64 {
        self.ln_alpha_mean.exp()
    }

    /// `φ − θ_init`.
    pub fn delta_theta(&self) -> f64 {
        self.phi - self.theta_init
    }

    /// The same soil with `K_s` and `α` fixed to the given values.
    pub fn with_constants(&self, ks: f64, alpha: f64) -> Self {
        Self {
            ln_ks_mean: ks.ln(),
            ln_ks_var: 0.0,
            ln_alpha_mean: alpha.ln(),
            ln_alpha_var: 0.0,
            ..*self
        }
    }
}

/// `(K_r, (θ − θ_i)/(φ − θ_i))` at pressure head `psi`.
pub fn van_genuchten(psi: f64, alpha: f64, n: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0) || !(n > 1.0) || psi.is_nan() {
        return Err(Error::invalid(format!("van Genuchten needs alpha > 0 and n > 1, got alpha={alpha}, n={n}")));
    }
    Ok(van_genuchten_unchecked(alpha * psi.abs(), n))
}

fn van_genuchten_unchecked(psi_d: f64, n: f64) -> (f64, f64) {
    if psi_d == 0.0 {
        return (1.0, 1.0);
    }
    let m = 1.0 - 1.0 / n;
    let ln_psi_n = n * psi_d.ln();
    // ln(1 + ψ_d^n), and 1 − ψ_d^{mn}(1+ψ_d^n)^{−m} = 1 − (1 + ψ_d^{−n})^{−m}.
    let ln1p_pn = if ln_psi_n > 0.0 {
        ln_psi_n + (-ln_psi_n).exp().ln_1p()
    } else {
        ln_psi_n.exp().ln_1p()
    };
    let ln1p_inv = if ln_psi_n > 0.0 {
        (-ln_psi_n).exp().ln_1p()
    } else {
        ln1p_pn - ln_psi_n
    };
    let bracket = -(-m * ln1p_inv).exp_m1();
    let theta = (-m * ln1p_pn).exp();
    let kr = bracket * bracket * (-0.5 * m * ln1p_pn).exp();
    (kr, theta)
}

/// `−∫_{−∞}^0 K_r(ψ) dψ` for an arbitrary relative conductivity `kr`.
/// The half line is mapped to `[0, 1)` by `|ψ| = s/(1 − s)`; `breaks` lists
/// heads (`≤ 0`) where `kr` is not smooth, so each piece is integrated
/// separately.
pub fn capillary_drive(kr: impl Fn(f64) -> f64, breaks: &[f64], tol: f64) -> Result<f64> {
    let mut cuts: Vec<f64> = breaks
        .iter()
        .map(|b| {
            let x = b.abs();
            x / (1.0 + x)
        })
        .filter(|s| *s > 0.0 && *s < 1.0)
        .collect();
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let mut edges = vec![0.0];
    edges.extend(cuts);
    edges.push(1.0);
    let integrand = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let one_minus = 1.0 - s;
        kr(-s / one_minus) / (one_minus * one_minus)
    };
    let mut total = 0.0;
    for w in edges.windows(2) {
        let out = quadrature::double_exponential::integrate(integrand, w[0], w[1], tol);
        if !out.integral.is_finite() || out.error_estimate > 10.0 * tol.max(1e-14 * out.integral.abs()) {
            return Err(Error::Numerical(format!(
                "capillary drive quadrature did not converge on [{}, {}]: estimate {:e}",
                w[0], w[1], out.error_estimate
            )));
        }
        total += out.integral;
    }
    Ok(-total)
}

/// Wetting-front head `ψ_f` (negative, cm) for the van Genuchten soil.
pub fn wetting_front_head(params: &SoilParams) -> Result<f64> {
    params.validate()?;
    let alpha = params.alpha();
    let n = params.n;
    capillary_drive(|psi| van_genuchten_unchecked(alpha * psi.abs(), n).0, &[], 1e-10)
}

/// Whether every Gamma argument of [`a_of_m`] is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmDomain {
    Regular,
    /// Some argument is negative (and non-integer); the value is still
    /// finite but the expression is used outside `m ∈ (2/3, 1)`.
    Extended,
}

const POLE_MARGIN: f64 = 1e-3;

fn gamma_args(m: f64) -> [f64; 8] {
    [1.0 - m, 1.5 * m - 1.0, 0.5 * m, m + 1.0, 2.5 * m, 2.5 * m - 1.0, 1.5 * m, 3.5 * m]
}

fn near_non_positive_integer(x: f64) -> bool {
    x < POLE_MARGIN && (x - x.round()).abs() < POLE_MARGIN
}

pub fn am_domain(m: f64) -> AmDomain {
    if gamma_args(m).iter().all(|&x| x > 0.0) {
        AmDomain::Regular
    } else {
        AmDomain::Extended
    }
}

/// The six-term Gamma expression `A(m)` used in the sorptivity.
pub fn a_of_m(m: f64) -> Result<f64> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::Domain(format!("A(m) needs m in (0, 1), got {m}")));
    }
    if gamma_args(m).iter().any(|&x| near_non_positive_integer(x))
        || (3.0 * m - 2.0).abs() < POLE_MARGIN
        || (5.0 * m - 2.0).abs() < POLE_MARGIN
    {
        return Err(Error::Domain(format!("A(m) is within {POLE_MARGIN} of a pole at m = {m}")));
    }
    let g1m = gamma(1.0 - m);
    let gm1 = gamma(m + 1.0);
    let g3 = gamma(1.5 * m - 1.0);
    let g5 = gamma(2.5 * m - 1.0);
    let value = g1m * g3 / gamma(0.5 * m) - 4.0 / (3.0 * m - 2.0) + gm1 * g3 / gamma(2.5 * m)
        + g1m * g5 / gamma(1.5 * m)
        - 4.0 / (5.0 * m - 2.0)
        + gm1 * g5 / gamma(3.5 * m);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("A({m}) is not finite")));
    }
    Ok(value)
}

/// `S² = (K_s/α)(φ − θ_init)(1 − m)A(m)`.
pub fn sorptivity_sq(params: &SoilParams) -> Result<f64> {
    params.validate()?;
    let m = params.m();
    let s2 = params.ks() / params.alpha() * params.delta_theta() * (1.0 - m) * a_of_m(m)?;
    if !(s2 > 0.0) {
        return Err(Error::Domain(format!("sorptivity squared is not positive ({s2}) at m = {m}")));
    }
    Ok(s2)
}

/// A soil with its derived constants computed once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Soil {
    pub params: SoilParams,
    pub ks: f64,
    pub alpha: f64,
    pub delta_theta: f64,
    pub psi_f: f64,
    pub s2: f64,
}

impl Soil {
    pub fn new(params: SoilParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            ks: params.ks(),
            alpha: params.alpha(),
            delta_theta: params.delta_theta(),
            psi_f: wetting_front_head(&params)?,
            s2: sorptivity_sq(&params)?,
        })
    }

    pub fn bet_dagan() -> Self {
        Self::new(SoilParams::default()).expect("Bet-Dagan parameters are valid")
    }

    /// `ψ_0 − ψ_f`.
    pub fn drive(&self) -> f64 {
        self.params.psi0 - self.psi_f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfiltrationState {
    pub t: f64,
    pub i: f64,
    /// Wetting-front depth, Green-Ampt only.
    pub x_f: Option<f64>,
}

/// `y − ln(1 + y)` without cancellation for small `y`.
fn y_minus_ln1p(y: f64) -> f64 {
    if y.abs() < 1e-2 {
        let mut term = -y;
        let mut sum = 0.0;
        for k in 2..12 {
            term *= -y;
            sum += term / k as f64;
        }
        sum
    } else {
        y - y.ln_1p()
    }
}

/// Left side minus right side of the implicit Green-Ampt relation.
pub fn green_ampt_residual(soil: &Soil, x_f: f64, t: f64) -> f64 {
    let c = soil.drive();
    c * y_minus_ln1p(x_f / c) - soil.ks * t / soil.delta_theta
}

/// Solves the implicit Green-Ampt relation for the front depth at `t`, by
/// Newton's method safeguarded with bisection.
pub fn green_ampt_implicit(soil: &Soil, t: f64) -> Result<InfiltrationState> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("Green-Ampt needs t > 0, got {t}")));
    }
    let c = soil.drive();
    let rhs = soil.ks * t / soil.delta_theta;
    let f = |x: f64| green_ampt_residual(soil, x, t);
    let (mut lo, mut hi) = (1e-12, rhs + 50.0 * c);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::Numerical(format!("Green-Ampt root not bracketed at t = {t}")));
    }
    // Early times: x_f − c ln(1 + x_f/c) ≈ x_f²/(2c).
    let mut x = (2.0 * c * rhs).sqrt().clamp(lo, hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx.abs() <= 1e-14 * rhs.max(1e-300) {
            break;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = x / (c + x);
        let newton = x - fx / slope;
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (hi - lo) <= 1e-15 * x {
            break;
        }
    }
    Ok(InfiltrationState {
        t,
        i: soil.ks * (x + c) / x,
        x_f: Some(x),
    })
}

/// Green-Ampt front depth for a given rate, `x_f = K_s c / (i − K_s)`.
pub fn green_ampt_front(soil: &Soil, i: f64) -> Option<f64> {
    (i > soil.ks).then(|| soil.ks * soil.drive() / (i - soil.ks))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfiltrationModel {
    #[serde(alias = "green_ampt")]
    GreenAmpt,
    Parlange,
}

impl fmt::Display for InfiltrationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GreenAmpt => "green-ampt",
            Self::Parlange => "parlange",
        })
    }
}

fn check_rate(soil: &Soil, i: f64) -> Result<()> {
    if !i.is_finite() || i < soil.ks {
        return Err(Error::Domain(format!(
            "infiltration rate {i} is below the saturated conductivity {}",
            soil.ks
        )));
    }
    Ok(())
}

/// `di/dt = −i(i − K_s)² / [K_s(φ − θ_init)(ψ_0 − ψ_f)]`.
pub fn green_ampt_rhs(soil: &Soil, i: f64) -> Result<f64> {
    check_rate(soil, i)?;
    Ok(green_ampt_rhs_unchecked(soil, i))
}

fn green_ampt_rhs_unchecked(soil: &Soil, i: f64) -> f64 {
    let e = i - soil.ks;
    -i * e * e / (soil.ks * soil.delta_theta * soil.drive())
}

fn green_ampt_rhs_derivative(soil: &Soil, i: f64) -> f64 {
    let e = i - soil.ks;
    -(e * e + 2.0 * i * e) / (soil.ks * soil.delta_theta * soil.drive())
}

fn parlange_denominator(soil: &Soil, i: f64) -> (f64, f64) {
    let p = &soil.params;
    let a = soil.s2 * (soil.ks - i);
    let b = 2.0 * soil.ks * soil.delta_theta * (p.psi0 * i + p.psi_j * soil.ks);
    (a - b, a.abs() + b.abs())
}

/// `di/dt = 2i²(i − K_s)² / [S²(K_s − i) − 2K_s(φ − θ_init)(ψ_0 i + ψ_j K_s)]`.
pub fn parlange_rhs(soil: &Soil, i: f64) -> Result<f64> {
    check_rate(soil, i)?;
    let (den, scale) = parlange_denominator(soil, i);
    if den.abs() < 1e-12 * scale {
        return Err(Error::Singularity {
            rate: i,
            detail: "Parlange denominator vanishes".into(),
        });
    }
    let e = i - soil.ks;
    Ok(2.0 * i * i * e * e / den)
}

fn parlange_rhs_derivative(soil: &Soil, i: f64) -> f64 {
    let p = &soil.params;
    let e = i - soil.ks;
    let num = 2.0 * i * i * e * e;
    let dnum = 4.0 * i * e * e + 4.0 * i * i * e;
    let (den, _) = parlange_denominator(soil, i);
    let dden = -soil.s2 - 2.0 * soil.ks * soil.delta_theta * p.psi0;
    (dnum * den - num * dden) / (den * den)
}

pub fn infiltration_rhs(model: InfiltrationModel, soil: &Soil, i: f64) -> Result<f64> {
    match model {
        InfiltrationModel::GreenAmpt => green_ampt_rhs(soil, i),
        InfiltrationModel::Parlange => parlange_rhs(soil, i),
    }
}

/// Time at which the Parlange model reaches rate `i > K_s`.
pub fn parlange_time(soil: &Soil, i: f64) -> Result<f64> {
    if !(i > soil.ks) || !i.is_finite() {
        return Err(Error::Domain(format!("Parlange time needs i > K_s, got {i}")));
    }
    let p = &soil.params;
    let (ks, dt, s2) = (soil.ks, soil.delta_theta, soil.s2);
    let e = i - ks;
    Ok(ks * (p.psi0 + p.psi_j) * dt / (e * ks) - (s2 - 2.0 * p.psi_j * ks * dt) / (2.0 * ks * i)
        + (s2 - 2.0 * ks * dt * (p.psi0 + 2.0 * p.psi_j)) / (2.0 * ks * ks) * (ks / e).ln_1p())
}

/// Solves the implicit Parlange relation for `i(t)` by bisection on
/// `ln(i − K_s)`; the time is monotone decreasing in the rate.
pub fn parlange_implicit(soil: &Soil, t: f64) -> Result<InfiltrationState> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("Parlange needs t > 0, got {t}")));
    }
    let g = |ln_e: f64| parlange_time(soil, soil.ks + ln_e.exp()).map(|ti| ti - t);
    let (mut lo, mut hi) = ((soil.ks * 1e-12).ln(), (soil.ks * 1e12).ln());
    if g(lo)? < 0.0 || g(hi)? > 0.0 {
        return Err(Error::Numerical(format!("Parlange root not bracketed at t = {t}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(InfiltrationState {
        t,
        i: soil.ks + (0.5 * (lo + hi)).exp(),
        x_f: None,
    })
}

/// The implicit-solution rate at `t0`, used to start the ODE forms.
pub fn initial_rate(model: InfiltrationModel, soil: &Soil, t0: f64) -> Result<f64> {
    match model {
        InfiltrationModel::GreenAmpt => green_ampt_implicit(soil, t0).map(|s| s.i),
        InfiltrationModel::Parlange => parlange_implicit(soil, t0).map(|s| s.i),
    }
}

fn rk4_rate(model: InfiltrationModel, soil: &Soil, i: f64, h: f64) -> Result<f64> {
    let f = |x: f64| infiltration_rhs(model, soil, x);
    let k1 = f(i)?;
    let k2 = f(i + 0.5 * h * k1)?;
    let k3 = f(i + 0.5 * h * k2)?;
    let k4 = f(i + h * k3)?;
    Ok(i + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

const MAX_HALVINGS: u32 = 40;

/// One RK4 step of size `h`, split into halves whenever a stage leaves the
/// admissible region `i > K_s` or the rate stops decreasing.
fn guarded_step(model: InfiltrationModel, soil: &Soil, i: f64, h: f64, depth: u32) -> Result<f64> {
    let ok = match rk4_rate(model, soil, i, h) {
        Ok(next) if next > soil.ks && next <= i => Some(next),
        Ok(_) | Err(Error::Domain(_)) => None,
        Err(e) => return Err(e),
    };
    match ok {
        Some(next) => Ok(next),
        None if depth < MAX_HALVINGS => {
            let mid = guarded_step(model, soil, i, 0.5 * h, depth + 1)?;
            guarded_step(model, soil, mid, 0.5 * h, depth + 1)
        }
        None => Err(Error::Numerical(format!("step rejected {MAX_HALVINGS} times at rate {i}"))),
    }
}

/// RK4 integration of a reduced model from `(t0, i0)` to `t_end` on the grid
/// `t0 + k dt` (the last step is shortened to land on `t_end`).
pub fn integrate_infiltration(
    model: InfiltrationModel,
    soil: &Soil,
    i0: f64,
    t0: f64,
    dt: f64,
    t_end: f64,
) -> Result<Vec<InfiltrationState>> {
    if !(i0 > soil.ks) {
        return Err(Error::Domain(format!("initial rate {i0} must exceed K_s = {}", soil.ks)));
    }
    if !(t0 > 0.0) || !(dt > 0.0) || !(t_end >= t0) {
        return Err(Error::invalid(format!("need t0 > 0, dt > 0, t_end >= t0; got {t0}, {dt}, {t_end}")));
    }
    let state = |t: f64, i: f64| InfiltrationState {
        t,
        i,
        x_f: match model {
            InfiltrationModel::GreenAmpt => green_ampt_front(soil, i),
            InfiltrationModel::Parlange => None,
        },
    };
    let steps = ((t_end - t0) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state(t0, i0));
    let mut i = i0;
    for k in 1..=steps {
        let t_prev = t0 + (k - 1) as f64 * dt;
        let t = if k == steps { t_end } else { t0 + k as f64 * dt };
        i = guarded_step(model, soil, i, t - t_prev, 0).map_err(|e| match e {
            Error::Singularity { rate, detail } => Error::Singularity {
                rate,
                detail: format!("{detail} near t = {t_prev} min"),
            },
            other => other,
        })?;
        out.push(state(t, i));
    }
    Ok(out)
}

/// A reduced model as an ODE for the filters. The right-hand side is set to
/// zero for `i ≤ K_s`, so that intermediate or perturbed states below the
/// conductivity stay put instead of leaving the model's domain.
#[derive(Debug, Clone, Copy)]
pub struct InfiltrationSystem {
    pub model: InfiltrationModel,
    pub soil: Soil,
}

impl OdeSystem for InfiltrationSystem {
    fn dim(&self) -> usize {
        1
    }

    fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let i = x[0];
        if !i.is_finite() {
            return Err(Error::Numerical(format!("non-finite infiltration rate {i}")));
        }
        let v = if i <= self.soil.ks {
            0.0
        } else {
            match self.model {
                InfiltrationModel::GreenAmpt => green_ampt_rhs_unchecked(&self.soil, i),
                InfiltrationModel::Parlange => parlange_rhs(&self.soil, i)?,
            }
        };
        Ok(DVector::from_element(1, v))
    }

    fn rhs_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let i = x[0];
        let v = if i <= self.soil.ks {
            0.0
        } else {
            match self.model {
                InfiltrationModel::GreenAmpt => green_ampt_rhs_derivative(&self.soil, i),
                InfiltrationModel::Parlange => parlange_rhs_derivative(&self.soil, i),
            }
        };
        Ok(DMatrix::from_element(1, 1, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference values below come from 40-digit mpmath evaluations.
    const PSI_F_BET_DAGAN: f64 = -7.022281888363717;
    const A_08: f64 = 7.332894273902303;
    const A_BET_DAGAN: f64 = 1.198634930240346;
    const S2_BET_DAGAN: f64 = 0.10860717015567996;

    fn soil() -> Soil {
        Soil::bet_dagan()
    }

    #[test]
    fn defaults_and_validation() {
        let p = SoilParams::default();
        assert_relative_eq!(p.m(), 0.44751381215469616, max_relative = 1e-15);
        assert_relative_eq!(p.ks(), 0.027875698255247015, max_relative = 1e-14);
        p.validate().unwrap();
        assert!(SoilParams { n: 1.0, ..p }.validate().is_err());
        assert!(SoilParams { theta_init: 0.5, ..p }.validate().is_err());
        assert!(SoilParams { psi_j: 0.0, ..p }.validate().is_err());
    }

    #[test]
    fn van_genuchten_limits_and_fixture() {
        let alpha = (-3.01f64).exp();
        assert_eq!(van_genuchten(0.0, alpha, 1.81).unwrap(), (1.0, 1.0));
        let (kr, th) = van_genuchten(-1e6, alpha, 1.81).unwrap();
        assert!(kr < 1e-3 && th < 1e-3);
        let (kr, th) = van_genuchten(-100.0, alpha, 1.81).unwrap();
        assert_relative_eq!(kr, 2.976813301791482e-4, max_relative = 1e-12);
        assert_relative_eq!(th, 0.2681102169291828, max_relative = 1e-12);
        assert!(van_genuchten(-1.0, 0.0, 1.81).is_err());
        assert!(van_genuchten(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn van_genuchten_monotone() {
        let mut prev = (1.0, 1.0);
        for k in 0..400 {
            let psi = -(10f64).powf(-3.0 + k as f64 * 0.02);
            let cur = van_genuchten(psi, 0.05, 1.81).unwrap();
            assert!(cur.0 <= prev.0 && cur.1 <= prev.1);
            assert!((0.0..=1.0).contains(&cur.0) && (0.0..=1.0).contains(&cur.1));
            prev = cur;
        }
    }

    #[test]
    fn capillary_drive_box() {
        let c = 3.5;
        let v = capillary_drive(|psi| if psi >= -c { 1.0 } else { 0.0 }, &[-c], 1e-10).unwrap();
        assert_relative_eq!(v, -c, max_relative = 1e-9);
    }

    #[test]
    fn wetting_front_head_fixture_and_scaling() {
        let p = SoilParams::default();
        let psi_f = wetting_front_head(&p).unwrap();
        assert_relative_eq!(psi_f, PSI_F_BET_DAGAN, max_relative = 1e-9);
        let doubled = SoilParams {
            ln_alpha_mean: p.ln_alpha_mean + 2f64.ln(),
            ..p
        };
        assert_relative_eq!(wetting_front_head(&doubled).unwrap(), psi_f / 2.0, max_relative = 1e-6);
        let unit = p.with_constants(p.ks(), 1.0);
        assert_relative_eq!(wetting_front_head(&unit).unwrap(), -0.3461400630066359, max_relative = 1e-9);
    }

    #[test]
    fn a_of_m_fixtures() {
        assert_relative_eq!(a_of_m(0.8).unwrap(), A_08, max_relative = 1e-12);
        assert_relative_eq!(a_of_m(0.8 + 1e-6).unwrap(), 7.332943212359341, max_relative = 1e-12);
        assert!((a_of_m(0.8).unwrap() - a_of_m(0.8 + 1e-6).unwrap()).abs() < 1e-3);
        let m = SoilParams::default().m();
        assert_relative_eq!(a_of_m(m).unwrap(), A_BET_DAGAN, max_relative = 1e-12);
        assert_eq!(am_domain(m), AmDomain::Extended);
        assert_eq!(am_domain(0.8), AmDomain::Regular);
    }

    #[test]
    fn a_of_m_poles() {
        for m in [2.0 / 3.0, 0.4, 2.0 / 3.0 + 5e-4, 0.0, 1.0] {
            assert!(matches!(a_of_m(m), Err(Error::Domain(_))), "m = {m}");
        }
    }

    #[test]
    fn sorptivity_fixture_and_structure() {
        let p = SoilParams::default();
        assert_relative_eq!(sorptivity_sq(&p).unwrap(), S2_BET_DAGAN, max_relative = 1e-12);
        let doubled = p.with_constants(2.0 * p.ks(), p.alpha());
        assert_relative_eq!(sorptivity_sq(&doubled).unwrap(), 2.0 * S2_BET_DAGAN, max_relative = 1e-12);
        // (1 − m)Γ(1 − m) → 1, so (1 − m)A(m) → 2 as n grows.
        let stiff = SoilParams { n: 1000.0, ..p };
        let limit = 2.0 * p.ks() / p.alpha() * p.delta_theta();
        assert_relative_eq!(sorptivity_sq(&stiff).unwrap(), 0.32751950885341, max_relative = 1e-10);
        assert!((sorptivity_sq(&stiff).unwrap() - limit).abs() < 2e-3 * limit);
    }

    #[test]
    fn green_ampt_implicit_properties() {
        let s = soil();
        let early = [1e-6, 1e-3, 1.0].map(|t| green_ampt_implicit(&s, t).unwrap().i);
        assert!(early[0] > early[1] && early[1] > early[2]);
        for t in [1e-6, 0.1, 1.0, 30.0, 1e4] {
            let st = green_ampt_implicit(&s, t).unwrap();
            assert!(green_ampt_residual(&s, st.x_f.unwrap(), t).abs() < 1e-9);
        }
        let late = green_ampt_implicit(&s, 1e7).unwrap();
        assert!(late.x_f.unwrap() > 100.0 * s.drive());
        assert!((late.i - s.ks).abs() < 0.01 * s.ks);
        assert!(green_ampt_implicit(&s, 0.0).is_err());
    }

    #[test]
    fn rhs_signs_and_double_roots() {
        let s = soil();
        assert_eq!(green_ampt_rhs(&s, s.ks).unwrap(), 0.0);
        assert_eq!(parlange_rhs(&s, s.ks).unwrap(), 0.0);
        for i in [s.ks * 1.01, 0.1, 1.0, 10.0] {
            assert!(green_ampt_rhs(&s, i).unwrap() < 0.0);
            assert!(parlange_rhs(&s, i).unwrap() < 0.0);
        }
        assert!(matches!(green_ampt_rhs(&s, 0.5 * s.ks), Err(Error::Domain(_))));
        for eps in [1e-3, 1e-5, 1e-7] {
            let ga = green_ampt_rhs(&s, s.ks + eps).unwrap() / (eps * eps);
            let pa = parlange_rhs(&s, s.ks + eps).unwrap() / (eps * eps);
            assert!(ga.abs() < 10.0 && pa.abs() < 10.0);
        }
    }

    #[test]
    fn rhs_derivatives_match_differences() {
        let s = soil();
        for i in [0.05, 0.3, 2.0] {
            let h = 1e-6 * i;
            let ga = (green_ampt_rhs(&s, i + h).unwrap() - green_ampt_rhs(&s, i - h).unwrap()) / (2.0 * h);
            let pa = (parlange_rhs(&s, i + h).unwrap() - parlange_rhs(&s, i - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(green_ampt_rhs_derivative(&s, i), ga, max_relative = 1e-6);
            assert_relative_eq!(parlange_rhs_derivative(&s, i), pa, max_relative = 1e-6);
        }
    }

    #[test]
    fn green_ampt_ode_matches_implicit() {
        let s = soil();
        let i0 = green_ampt_implicit(&s, DEFAULT_T0).unwrap().i;
        let path = integrate_infiltration(InfiltrationModel::GreenAmpt, &s, i0, DEFAULT_T0, 1e-3, 10.0).unwrap();
        for st in path.iter().step_by(100) {
            assert!((st.i - green_ampt_implicit(&s, st.t).unwrap().i).abs() < 1e-4, "t = {}", st.t);
        }
    }

    #[test]
    fn parlange_ode_satisfies_implicit_relation() {
        let s = soil();
        let i0 = initial_rate(InfiltrationModel::Parlange, &s, DEFAULT_T0).unwrap();
        assert!((parlange_time(&s, i0).unwrap() - DEFAULT_T0).abs() < 1e-12);
        let path = integrate_infiltration(InfiltrationModel::Parlange, &s, i0, DEFAULT_T0, 1e-3, 10.0).unwrap();
        for st in path.iter().step_by(50) {
            let t = parlange_time(&s, st.i).unwrap();
            assert!((t - st.t).abs() < 1e-3 * st.t, "t = {} implied {t}", st.t);
        }
    }

    #[test]
    fn integration_is_monotone_and_converged() {
        let s = soil();
        for model in [InfiltrationModel::GreenAmpt, InfiltrationModel::Parlange] {
            let i0 = initial_rate(model, &s, DEFAULT_T0).unwrap();
            let coarse = integrate_infiltration(model, &s, i0, DEFAULT_T0, 1e-3, 10.0).unwrap();
            let fine = integrate_infiltration(model, &s, i0, DEFAULT_T0, 5e-4, 10.0).unwrap();
            assert!(coarse.windows(2).all(|w| w[1].i < w[0].i && w[1].i > s.ks));
            assert!((coarse.last().unwrap().i - fine.last().unwrap().i).abs() < 1e-8);
            assert_eq!(coarse.last().unwrap().t, 10.0);
        }
    }

    #[test]
    fn integration_rejects_bad_start() {
        let s = soil();
        assert!(integrate_infiltration(InfiltrationModel::GreenAmpt, &s, s.ks, 0.1, 0.01, 1.0).is_err());
        assert!(integrate_infiltration(InfiltrationModel::GreenAmpt, &s, 1.0, 0.0, 0.01, 1.0).is_err());
    }

    #[test]
    fn filter_system_is_clamped_below_ks() {
        let s = soil();
        let sys = InfiltrationSystem {
            model: InfiltrationModel::Parlange,
            soil: s,
        };
        let below = DVector::from_element(1, 0.5 * s.ks);
        assert_eq!(sys.rhs(&below).unwrap()[0], 0.0);
        assert_eq!(sys.rhs_jacobian(&below).unwrap()[(0, 0)], 0.0);
    }
}
