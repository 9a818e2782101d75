//! Gaussian beliefs, noise schedules and observations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{check_finite, symmetrize};
use crate::error::{Error, Result};

/// Relative asymmetry allowed in a covariance matrix.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Most negative eigenvalue allowed, relative to the largest one.
pub const PSD_TOL: f64 = 1e-10;

/// A state estimate: mean vector and symmetric positive semi-definite
/// covariance. Houses model forecasts `(u_m, U_m)`, analyzed states `(w, W)`
/// and data `(d, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Validated constructor.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::invalid("belief must have at least one component"));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::invalid(format!(
                "covariance is {}x{}, mean has length {n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        check_finite(mean.as_slice(), "belief mean")?;
        validate_covariance(&cov)?;
        Ok(Self { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    /// Isotropic belief `N(mean, var·I)`.
    pub fn isotropic(mean: DVector<f64>, var: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * var)
    }

    /// Builds a belief from filter arithmetic. The covariance is symmetrized
    /// but not otherwise checked; results of the update formulas are PSD up to
    /// round-off.
    pub(crate) fn from_computed(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        Self {
            mean,
            cov: symmetrize(&cov),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Diagonal of the covariance.
    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }
}

/// Checks symmetry and positive semi-definiteness up to round-off.
pub fn validate_covariance(cov: &DMatrix<f64>) -> Result<()> {
    if !cov.is_square() {
        return Err(Error::invalid("covariance must be square"));
    }
    check_finite(cov.as_slice(), "covariance")?;
    let scale = cov.amax();
    if scale == 0.0 {
        return Ok(());
    }
    let asym = (cov - cov.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::invalid(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let eig = symmetrize(cov).symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min < -PSD_TOL * max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::invalid(format!(
            "covariance is not positive semi-definite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    Constant,
    TimeIndexed,
}

/// Model or data error covariance, either constant or indexed by
/// assimilation step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    entries: Vec<(usize, DMatrix<f64>)>,
    mode: NoiseMode,
}

impl NoiseSchedule {
    pub fn constant(cov: DMatrix<f64>) -> Result<Self> {
        validate_covariance(&cov)?;
        Ok(Self {
            entries: vec![(0, cov)],
            mode: NoiseMode::Constant,
        })
    }

    /// `var·I` of dimension `dim`.
    pub fn isotropic(dim: usize, var: f64) -> Result<Self> {
        Self::constant(DMatrix::identity(dim, dim) * var)
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            entries: vec![(0, DMatrix::zeros(dim, dim))],
            mode: NoiseMode::Constant,
        }
    }

    /// Piecewise-constant schedule. Entry `(k, Q)` applies from step `k`
    /// until the next entry; steps before the first entry use the first
    /// covariance.
    pub fn time_indexed(entries: Vec<(usize, DMatrix<f64>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("time-indexed schedule needs at least one entry"));
        }
        let dim = entries[0].1.nrows();
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid(format!(
                    "schedule indices must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for (_, q) in &entries {
            if q.nrows() != dim {
                return Err(Error::invalid("schedule covariances differ in dimension"));
            }
            validate_covariance(q)?;
        }
        Ok(Self {
            entries,
            mode: NoiseMode::TimeIndexed,
        })
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.entries[0].1.nrows()
    }

    pub fn entries(&self) -> &[(usize, DMatrix<f64>)] {
        &self.entries
    }

    /// Covariance in force at step `t`.
    pub fn at(&self, t: usize) -> &DMatrix<f64> {
        match self.mode {
            NoiseMode::Constant => &self.entries[0].1,
            NoiseMode::TimeIndexed => {
                let idx = self.entries.partition_point(|(k, _)| *k <= t);
                &self.entries[idx.saturating_sub(1)].1
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|(_, q)| q.amax() == 0.0)
    }
}

/// A measurement `d = H u + ε_d`, `ε_d ~ N(0, D)`, taken at an assimilation
/// step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time: usize,
    value: DVector<f64>,
    noise: DMatrix<f64>,
    operator: DMatrix<f64>,
}

impl Observation {
    /// Observation of the full state (`H = I`).
    pub fn new(time: usize, value: DVector<f64>, noise: DMatrix<f64>) -> Result<Self> {
        let n = value.len();
        Self::with_operator(time, value, noise, DMatrix::identity(n, n))
    }

    pub fn with_operator(
        time: usize,
        value: DVector<f64>,
        noise: DMatrix<f64>,
        operator: DMatrix<f64>,
    ) -> Result<Self> {
        check_finite(value.as_slice(), "observation value")?;
        check_finite(operator.as_slice(), "observation operator")?;
        if operator.nrows() != value.len() {
            return Err(Error::invalid(format!(
                "observation operator has {} rows, value has length {}",
                operator.nrows(),
                value.len()
            )));
        }
        if noise.nrows() != value.len() {
            return Err(Error::invalid("observation noise dimension mismatch"));
        }
        validate_covariance(&noise)?;
        Ok(Self {
            time,
            value,
            noise,
            operator,
        })
    }

    pub fn scalar(time: usize, value: f64, var: f64) -> Result<Self> {
        Self::new(
            time,
            DVector::from_element(1, value),
            DMatrix::from_element(1, 1, var),
        )
    }

    pub fn value(&self) -> &DVector<f64> {
        &self.value
    }

    pub fn noise(&self) -> &DMatrix<f64> {
        &self.noise
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    /// Dimension of the observed state (columns of `H`).
    pub fn state_dim(&self) -> usize {
        self.operator.ncols()
    }

    pub fn is_identity_operator(&self) -> bool {
        self.operator.is_square() && self.operator == DMatrix::identity(self.value.len(), self.value.len())
    }

    /// The data as a belief `(d, D)`.
    pub fn as_belief(&self) -> GaussianBelief {
        GaussianBelief::from_computed(self.value.clone(), self.noise.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let m = DVector::from_vec(vec![0.0, 0.0]);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GaussianBelief::new(m.clone(), asym).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianBelief::new(m.clone(), indef).is_err());
        assert!(GaussianBelief::new(m, DMatrix::zeros(2, 2)).is_ok());
    }

    #[test]
    fn schedule_lookup_is_piecewise_constant() {
        let q = |v: f64| DMatrix::from_element(1, 1, v);
        let s = NoiseSchedule::time_indexed(vec![(2, q(1.0)), (5, q(2.0))]).unwrap();
        assert_eq!(s.at(0)[(0, 0)], 1.0);
        assert_eq!(s.at(4)[(0, 0)], 1.0);
        assert_eq!(s.at(5)[(0, 0)], 2.0);
        assert_eq!(s.at(99)[(0, 0)], 2.0);
        assert!(NoiseSchedule::time_indexed(vec![(2, q(1.0)), (2, q(2.0))]).is_err());
    }

    #[test]
    fn observation_dims_checked() {
        let bad = Observation::with_operator(
            1,
            DVector::from_vec(vec![1.0]),
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
        );
        assert!(bad.is_err());
    }
}
