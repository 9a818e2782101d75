//! Multi-model sequential data assimilation.
//!
//! Several imperfect forecast models of one state are combined with each
//! other and with noisy observations, step by step:
//!
//! - [`mm_kalman`]: sequential multi-model Kalman filter, linear or
//!   linearized (extended) propagation;
//! - [`enkf`]: its ensemble version;
//! - [`pf`]: a particle filter that weights one reference ensemble against
//!   the data and the other models;
//! - [`bma`]: precision-weighted model averaging, the data-free special case.
//!
//! [`oscillator`] and [`infiltration`] are the two bundled test beds and
//! [`harness`] turns TOML scenarios into runs, metrics and CSV output.
//!
//! ```
//! use mmda::{mm_kalman::assimilate_step, GaussianBelief, Observation};
//!
//! let models = [GaussianBelief::scalar(1.0, 1.0)?, GaussianBelief::scalar(3.0, 1.0)?];
//! let data = Observation::scalar(1, 2.0, 0.5)?;
//! let step = assimilate_step(&models, Some(&data))?;
//! assert!((step.analyzed.mean()[0] - 2.0).abs() < 1e-12);
//! # Ok::<(), mmda::Error>(())
//! ```

pub mod algebra;
pub mod belief;
pub mod bma;
pub mod enkf;
mod error;
pub mod harness;
pub mod infiltration;
pub mod mm_kalman;
pub mod model;
pub mod ode;
pub mod oscillator;
pub mod pf;
pub mod problem;
pub mod rng;

pub use belief::{GaussianBelief, NoiseMode, NoiseSchedule, Observation};
pub use error::{Error, Result};
pub use model::{DifferentiableModel, Dynamics, ForecastModel, JacobianSpec, LinearModel};
pub use problem::AssimilationProblem;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/ensembles.md")]
    mod ensembles {}
    #[doc = include_str!("../../../book/src/bma.md")]
    mod bma {}
    #[doc = include_str!("../../../book/src/test_beds.md")]
    mod test_beds {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
