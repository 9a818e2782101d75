//! The runtime description every filter runner consumes.

use std::collections::BTreeMap;

use crate::belief::{GaussianBelief, Observation};
use crate::error::{Error, Result};
use crate::model::ForecastModel;

/// Models, initial analyzed state, horizon and observations, all on one
/// assimilation grid `t = 0, 1, ..., steps`.
#[derive(Debug, Clone)]
pub struct AssimilationProblem {
    pub models: Vec<ForecastModel>,
    pub initial: GaussianBelief,
    pub steps: usize,
    observations: BTreeMap<usize, Observation>,
}

impl AssimilationProblem {
    pub fn new(
        models: Vec<ForecastModel>,
        initial: GaussianBelief,
        steps: usize,
        observations: Vec<Observation>,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::config("at least one model is required"));
        }
        let n = initial.dim();
        for m in &models {
            if m.dim() != n {
                return Err(Error::config(format!(
                    "model '{}' has dimension {}, initial state has {n}",
                    m.id,
                    m.dim()
                )));
            }
            if m.substeps == 0 {
                return Err(Error::config(format!("model '{}' has zero substeps", m.id)));
            }
        }
        let mut map = BTreeMap::new();
        for obs in observations {
            if obs.time > steps {
                return Err(Error::config(format!(
                    "observation at step {} is beyond the horizon of {steps} steps",
                    obs.time
                )));
            }
            if obs.state_dim() != n {
                return Err(Error::config(format!(
                    "observation at step {} observes a {}-dimensional state, models have {n}",
                    obs.time,
                    obs.state_dim()
                )));
            }
            if map.insert(obs.time, obs).is_some() {
                return Err(Error::config("two observations share one step"));
            }
        }
        Ok(Self {
            models,
            initial,
            steps,
            observations: map,
        })
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn observation(&self, step: usize) -> Option<&Observation> {
        self.observations.get(&step)
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.observations.values()
    }

    /// Same problem without any data.
    pub fn without_observations(&self) -> Self {
        Self {
            observations: BTreeMap::new(),
            ..self.clone()
        }
    }

    /// Same problem with model `reference` moved to the front.
    pub fn with_reference_first(&self, reference: usize) -> Result<Self> {
        if reference >= self.models.len() {
            return Err(Error::config(format!(
                "reference model index {reference} out of range ({} models)",
                self.models.len()
            )));
        }
        let mut out = self.clone();
        let r = out.models.remove(reference);
        out.models.insert(0, r);
        Ok(out)
    }
}
