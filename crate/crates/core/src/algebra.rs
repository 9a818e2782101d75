//! Covariance algebra shared by every filter: pseudoinverse, PSD repair,
//! Gaussian sampling and densities, and the variational objective.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::belief::{GaussianBelief, Observation};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream};

/// Singular values below this fraction of the largest are treated as zero.
pub const PSEUDO_INVERSE_TOL: f64 = 1e-12;

pub(crate) fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Moore-Penrose pseudoinverse via SVD, zeroing singular values below
/// `rel_tol · σ_max`.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    check_finite(m.as_slice(), "matrix")?;
    if !(rel_tol >= 0.0) {
        return Err(Error::invalid("pseudoinverse tolerance must be non-negative"));
    }
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(DMatrix::zeros(c, r));
    }
    if r == 1 && c == 1 {
        let v = m[(0, 0)];
        return Ok(DMatrix::from_element(1, 1, if v == 0.0 { 0.0 } else { 1.0 / v }));
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let cutoff = rel_tol * sigma_max;
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // out += v_k u_kᵀ / s
            out += (v_t.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    Ok(out)
}

/// Symmetrizes and clamps negative eigenvalues to zero.
pub fn repair_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if sym.nrows() == 1 {
        return DMatrix::from_element(1, 1, sym[(0, 0)].max(0.0));
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= 0.0 {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clamped) * v.transpose()))
}

/// Symmetric square-root factor `L` with `L Lᵀ = repair_psd(cov)`.
pub fn symmetric_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(cov.as_slice(), "covariance")?;
    let sym = symmetrize(cov);
    if sym.nrows() == 1 {
        return Ok(DMatrix::from_element(1, 1, sym[(0, 0)].max(0.0).sqrt()));
    }
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("eigendecomposition of covariance failed".into()));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Draws from `N(mean, cov)` through a fixed factorization of `cov`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    zero: bool,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let factor = symmetric_factor(cov)?;
        let zero = factor.amax() == 0.0;
        Ok(Self { mean, factor, zero })
    }

    /// Zero-mean sampler for an additive noise term.
    pub fn centered(cov: &DMatrix<f64>) -> Result<Self> {
        Self::new(DVector::zeros(cov.nrows()), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.zero
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        if self.zero {
            return self.mean.clone();
        }
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }

    /// Adds one draw of the (zero-mean) noise to `x` in place.
    pub fn perturb<R: Rng + ?Sized>(&self, x: &mut DVector<f64>, rng: &mut R) {
        if self.zero {
            return;
        }
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        *x += &self.mean + &self.factor * z;
    }
}

/// `count` independent draws from the belief. Member `i` uses its own keyed
/// stream, so the output is a pure function of `(belief, count, seed)`.
pub fn sample_gaussian(belief: &GaussianBelief, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let sampler = GaussianSampler::new(belief.mean().clone(), belief.cov())?;
    Ok((0..count)
        .map(|i| {
            let mut rng = keyed_rng(seed, &[stream::SAMPLING, i as u64]);
            sampler.sample(&mut rng)
        })
        .collect())
}

/// Variational objective
/// `J(w) = (w−u)ᵀU⁻¹(w−u) + (Hw−d)ᵀD⁻¹(Hw−d)`, with pseudoinverses standing
/// in for singular `U` or `D`.
pub fn objective(w: &DVector<f64>, u: &GaussianBelief, d: &Observation) -> Result<f64> {
    if w.len() != u.dim() || d.state_dim() != w.len() {
        return Err(Error::invalid(format!(
            "objective dimensions: w {}, u {}, H has {} columns",
            w.len(),
            u.dim(),
            d.state_dim()
        )));
    }
    let u_inv = pseudo_inverse(u.cov(), PSEUDO_INVERSE_TOL)?;
    let d_inv = pseudo_inverse(d.noise(), PSEUDO_INVERSE_TOL)?;
    let ru = w - u.mean();
    let rd = d.operator() * w - d.value();
    Ok((ru.transpose() * u_inv * &ru)[(0, 0)] + (rd.transpose() * d_inv * &rd)[(0, 0)])
}

/// Precomputed Gaussian log-density on the non-degenerate subspace of a
/// (possibly singular) covariance.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let sym = symmetrize(cov);
        let precision = pseudo_inverse(&sym, PSEUDO_INVERSE_TOL)?;
        let sv = sym.singular_values();
        let cutoff = PSEUDO_INVERSE_TOL * sv.max();
        let (rank, log_pdet) = sv
            .iter()
            .filter(|&&s| s > cutoff && s > 0.0)
            .fold((0usize, 0.0), |(r, l), &s| (r + 1, l + s.ln()));
        let log_norm = -0.5 * (rank as f64 * (2.0 * std::f64::consts::PI).ln() + log_pdet);
        Ok(Self { precision, log_norm })
    }

    /// `log N(x | mean, cov)`.
    pub fn log_density(&self, x: &DVector<f64>, mean: &DVector<f64>) -> f64 {
        let r = x - mean;
        self.log_norm - 0.5 * (r.transpose() * &self.precision * &r)[(0, 0)]
    }
}
