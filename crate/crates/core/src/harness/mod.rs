//! Experiment harness: scenarios, truth, synthetic data, calibration,
//! metrics and result files.

pub mod calibrate;
pub mod experiment;
pub mod metrics;
pub mod monte_carlo;
pub mod observe;
pub mod output;
pub mod scenario;
pub mod truth;

pub use calibrate::{calibrate_model_errors, ErrorCalibration};
pub use experiment::{compare_bma, prepare, run_experiment, run_pdf_study, run_setup, RunRecord, Setup};
pub use metrics::{histogram_pdf, rmse, Bins, PdfEstimate};
pub use monte_carlo::{monte_carlo_infiltration, McModel, McSamples};
pub use observe::{generate_observations, ObservationSchedule};
pub use scenario::{FilterKind, Scenario};
pub use truth::TruthSeries;
