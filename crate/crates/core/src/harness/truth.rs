//! Reference ("true") trajectories: closed-form, tabulated, or a surrogate
//! model on a fine grid.

use std::fs::File;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::infiltration::{initial_rate, integrate_infiltration, InfiltrationModel, Soil, SoilParams};
use crate::oscillator::{exact_solution, whole_multiple, OscillatorParams};

/// Header of a tabulated infiltration truth.
pub const INFILTRATION_HEADER: [&str; 2] = ["t_min", "i_cm_per_min"];
/// Header of a tabulated oscillator truth.
pub const OSCILLATOR_HEADER: [&str; 3] = ["t", "y", "yprime"];

/// States at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSeries {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl TruthSeries {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::config("truth series needs one state per time and at least one entry"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("truth times must be strictly increasing"));
        }
        let n = values[0].len();
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::config("truth states differ in dimension"));
        }
        Ok(Self { times, values })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Linear interpolation at `t`; `t` must lie inside the table.
    pub fn at(&self, t: f64) -> Result<DVector<f64>> {
        let (first, last) = (self.times[0], self.times[self.times.len() - 1]);
        let slack = 1e-9 * (last - first).abs().max(1.0);
        if t < first - slack || t > last + slack {
            return Err(Error::config(format!("time {t} is outside the truth table range [{first}, {last}]")));
        }
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            return Ok(self.values[0].clone());
        }
        if k == self.times.len() {
            return Ok(self.values[k - 1].clone());
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let a = (t - t0) / (t1 - t0);
        Ok(&self.values[k - 1] * (1.0 - a) + &self.values[k] * a)
    }

    pub fn sample(&self, times: &[f64]) -> Result<Vec<DVector<f64>>> {
        times.iter().map(|&t| self.at(t)).collect()
    }

    /// Reads `t_min,i_cm_per_min` or `t,y,yprime`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::open(path).map_err(io)?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header != INFILTRATION_HEADER && header != OSCILLATOR_HEADER {
            return Err(Error::config(format!(
                "{}: header must be '{}' or '{}', got '{}'",
                path.display(),
                INFILTRATION_HEADER.join(","),
                OSCILLATOR_HEADER.join(","),
                header.join(",")
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            let nums = record
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config(format!("{}: row {}: {e}", path.display(), line + 2)))?;
            times.push(nums[0]);
            values.push(DVector::from_column_slice(&nums[1..]));
        }
        Self::new(times, values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header: &[&str] = match self.dim() {
            1 => &INFILTRATION_HEADER,
            2 => &OSCILLATOR_HEADER,
            d => return Err(Error::config(format!("no truth-table layout for dimension {d}"))),
        };
        let io = |e: csv::Error| Error::config(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for (t, v) in self.times.iter().zip(&self.values) {
            let mut row = vec![format_number(*t)];
            row.extend(v.iter().map(|x| format_number(*x)));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:?}")
    }
}

pub fn oscillator_truth(p: &OscillatorParams, times: &[f64]) -> Result<TruthSeries> {
    p.validate()?;
    TruthSeries::new(times.to_vec(), times.iter().map(|&t| exact_solution(p, t)).collect())
}

/// Integrates `model` on `soil` with `K_s` and `α` rescaled, at step `dt`,
/// from `times[0]`, and samples it at `times` (which must lie on the fine
/// grid).
pub fn surrogate_truth(
    soil: &SoilParams,
    model: InfiltrationModel,
    ks_scale: f64,
    alpha_scale: f64,
    dt: f64,
    times: &[f64],
) -> Result<TruthSeries> {
    if !(ks_scale > 0.0 && alpha_scale > 0.0) {
        return Err(Error::config("surrogate scales must be positive"));
    }
    let params = soil.with_constants(soil.ks() * ks_scale, soil.alpha() * alpha_scale);
    let soil = Soil::new(params)?;
    let t0 = times[0];
    let t_end = times[times.len() - 1];
    let i0 = initial_rate(model, &soil, t0)?;
    let path = integrate_infiltration(model, &soil, i0, t0, dt, t_end)?;
    let values = times
        .iter()
        .map(|&t| {
            if t == t0 {
                return Ok(path[0].i);
            }
            let k = whole_multiple(t - t0, dt)?;
            path.get(k)
                .map(|s| s.i)
                .ok_or_else(|| Error::config(format!("time {t} is beyond the surrogate run")))
        })
        .collect::<Result<Vec<_>>>()?;
    TruthSeries::new(times.to_vec(), values.into_iter().map(|i| DVector::from_element(1, i)).collect())
}
