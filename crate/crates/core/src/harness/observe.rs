//! Synthetic observations from a truth trajectory.

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;
use rand::Rng;

use crate::belief::Observation;
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream};

/// Every `stride`-th step (starting at `stride`) is observed with i.i.d.
/// `N(0, variance)` noise on each component; `H = I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationSchedule {
    pub stride: usize,
    pub variance: f64,
}

impl ObservationSchedule {
    pub fn steps(&self, horizon: usize) -> impl Iterator<Item = usize> {
        (self.stride..=horizon).step_by(self.stride.max(1))
    }
}

/// `truth[k]` is the state at step `k`. The noise at step `k` is
/// `σ z` with `z` drawn from the stream keyed by `(seed, k)`, so two
/// schedules that differ only in variance see the same `z`.
pub fn generate_observations(
    truth: &[DVector<f64>],
    schedule: &ObservationSchedule,
    seed: u64,
) -> Result<Vec<Observation>> {
    if schedule.stride == 0 {
        return Err(Error::config("observation stride must be positive"));
    }
    if !(schedule.variance >= 0.0) {
        return Err(Error::config("observation variance must be non-negative"));
    }
    if truth.len() <= schedule.stride {
        return Err(Error::config(format!(
            "first observation at step {} is beyond the {}-step truth",
            schedule.stride,
            truth.len().saturating_sub(1)
        )));
    }
    let sigma = schedule.variance.sqrt();
    schedule
        .steps(truth.len() - 1)
        .map(|k| {
            let mut rng = keyed_rng(seed, &[stream::OBSERVATION, k as u64]);
            let x = &truth[k];
            let value = DVector::from_fn(x.len(), |i, _| x[i] + sigma * rng.sample::<f64, _>(StandardNormal));
            Observation::new(k, value, DMatrix::from_diagonal_element(x.len(), x.len(), schedule.variance))
        })
        .collect()
}
