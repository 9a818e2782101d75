//! Scenario files shipped with the binary.

use std::path::Path;

use mmda::harness::Scenario;
use mmda::Result;

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".toml")))),*]
    };
}

pub const BUNDLED: &[(&str, &str)] = bundled![
    "bma_compare",
    "hetero_pdf",
    "infil_ekf",
    "infil_ekf_timedep",
    "infil_enkf",
    "infil_pf_ga_ref",
    "infil_pf_parlange_ref",
    "oscillator_noda",
    "oscillator_pf",
    "oscillator_pf_cn_ref",
    "oscillator_pf_rk4_ref",
];

pub fn bundled(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".toml").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == stem).map(|(_, text)| *text)
}

/// A file on disk if `arg` names one, otherwise a bundled scenario of that
/// name (with or without `.toml`).
pub fn resolve(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        return Scenario::load(path);
    }
    match bundled(arg) {
        Some(text) => Scenario::from_toml_str(text),
        None => Scenario::load(path),
    }
}
