//! Model-error variances from free model runs against the truth.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::belief::NoiseSchedule;
use crate::error::{Error, Result};
use crate::harness::scenario::ErrorMode;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ErrorCalibration {
    White { variance: f64 },
    TimeDependent { schedule: Vec<f64> },
}

impl ErrorCalibration {
    /// The per-step noise of a scalar model; entry `k` of a time-dependent
    /// schedule applies to the forecast into step `k`.
    pub fn noise(&self) -> Result<NoiseSchedule> {
        match self {
            Self::White { variance } => NoiseSchedule::isotropic(1, *variance),
            Self::TimeDependent { schedule } => NoiseSchedule::time_indexed(
                schedule
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (k, DMatrix::from_element(1, 1, *v)))
                    .collect(),
            ),
        }
    }
}

/// `white`: mean of `(model − truth)²` over the steps in `window` (all
/// steps by default); `time-dependent`: `(model − truth)²` at every step.
/// Both are averaged over state components and floored at `floor`.
pub fn calibrate_model_errors(
    model: &[DVector<f64>],
    truth: &[DVector<f64>],
    mode: ErrorMode,
    window: Option<&[usize]>,
    floor: f64,
) -> Result<ErrorCalibration> {
    if model.len() != truth.len() {
        return Err(Error::config(format!(
            "model run has {} steps, truth has {}",
            model.len(),
            truth.len()
        )));
    }
    let sq: Vec<f64> = model
        .iter()
        .zip(truth)
        .map(|(m, t)| {
            if m.len() != t.len() {
                return Err(Error::config("model and truth differ in dimension"));
            }
            Ok((m - t).map(|e| e * e).mean())
        })
        .collect::<Result<_>>()?;
    match mode {
        ErrorMode::White => {
            let picked: Vec<f64> = match window {
                Some(idx) => idx
                    .iter()
                    .map(|&k| sq.get(k).copied().ok_or_else(|| Error::config(format!("calibration step {k} out of range"))))
                    .collect::<Result<_>>()?,
                None => sq.clone(),
            };
            if picked.is_empty() {
                return Err(Error::config("empty calibration window"));
            }
            Ok(ErrorCalibration::White {
                variance: (picked.iter().sum::<f64>() / picked.len() as f64).max(floor),
            })
        }
        ErrorMode::TimeDependent => Ok(ErrorCalibration::TimeDependent {
            schedule: sq.into_iter().map(|v| v.max(floor)).collect(),
        }),
        ErrorMode::Fixed => Err(Error::config("fixed error variances are not calibrated")),
    }
}
