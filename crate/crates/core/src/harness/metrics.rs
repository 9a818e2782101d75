//! Error metrics and histogram density estimates.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};

/// Root mean square of `a − b` over all components, optionally only at the
/// listed indices.
pub fn rmse(a: &[DVector<f64>], b: &[DVector<f64>], at: Option<&[usize]>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    let all: Vec<usize>;
    let idx = match at {
        Some(idx) => idx,
        None => {
            all = (0..a.len()).collect();
            &all
        }
    };
    if idx.is_empty() {
        return Err(Error::config("rmse over an empty set of steps"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for &k in idx {
        let (x, y) = match (a.get(k), b.get(k)) {
            (Some(x), Some(y)) if x.len() == y.len() => (x, y),
            (Some(_), Some(_)) => return Err(Error::config(format!("dimensions differ at step {k}"))),
            _ => return Err(Error::config(format!("step {k} is out of range"))),
        };
        sum += (x - y).norm_squared();
        count += x.len();
    }
    Ok((sum / count as f64).sqrt())
}

/// Mean and unbiased standard deviation.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bins {
    Count(usize),
    Width(f64),
}

/// Uniform-width histogram normalized so that `Σ heights · width = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdfEstimate {
    pub edges: Vec<f64>,
    pub heights: Vec<f64>,
    pub width: f64,
}

impl PdfEstimate {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn integral(&self) -> f64 {
        self.heights.iter().sum::<f64>() * self.width
    }
}

/// `p(x) = (1/(N Δ)) Σ_n I(x_n ∈ bin(x))` over bins spanning the samples.
/// With a bin count and identical samples the single bin has unit width.
pub fn histogram_pdf(samples: &[f64], bins: Bins) -> Result<PdfEstimate> {
    if samples.is_empty() {
        return Err(Error::invalid("histogram of no samples"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("histogram samples must be finite"));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (start, width, count) = match bins {
        Bins::Count(0) => return Err(Error::invalid("bin count must be positive")),
        Bins::Count(_) if hi == lo => (lo - 0.5, 1.0, 1),
        Bins::Count(n) => (lo, (hi - lo) / n as f64, n),
        Bins::Width(w) if !(w > 0.0 && w.is_finite()) => return Err(Error::invalid("bin width must be positive")),
        Bins::Width(w) if hi == lo => (lo - 0.5 * w, w, 1),
        Bins::Width(w) => (lo, w, (((hi - lo) / w).floor() as usize + 1)),
    };
    let mut counts = vec![0usize; count];
    for &x in samples {
        let k = (((x - start) / width).floor() as usize).min(count - 1);
        counts[k] += 1;
    }
    let norm = 1.0 / (samples.len() as f64 * width);
    Ok(PdfEstimate {
        edges: (0..=count).map(|k| start + k as f64 * width).collect(),
        heights: counts.into_iter().map(|c| c as f64 * norm).collect(),
        width,
    })
}
