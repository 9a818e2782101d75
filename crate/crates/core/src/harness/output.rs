//! CSV and JSON output.
//!
//! `results.csv` has one row per assimilation step:
//!
//! ```text
//! step,t,truth,obs,model_<id>_mean,model_<id>_var,free_<id>,analyzed_mean,analyzed_var,weight_<id>,weight_data,ess
//! ```
//!
//! For a state with several components every state column is split into
//! `<column>_<label>` (for the oscillator `truth_y,truth_yprime`, ...).
//! Missing values (no observation at a step, weights a filter does not
//! define) are empty cells.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde_json::json;

use crate::error::{Error, Result};
use crate::harness::experiment::{BmaComparison, PdfStudy, RunRecord};
use crate::harness::truth::format_number;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Config(format!("{}: {e}", path.display()))
}

fn state_columns(name: &str, labels: &[&str]) -> Vec<String> {
    if labels.len() == 1 {
        vec![name.to_owned()]
    } else {
        labels.iter().map(|l| format!("{name}_{l}")).collect()
    }
}

fn push_state(row: &mut Vec<String>, v: Option<&DVector<f64>>, dim: usize) {
    match v {
        Some(v) => row.extend(v.iter().map(|x| format_number(*x))),
        None => row.extend(std::iter::repeat_n(String::new(), dim)),
    }
}

pub fn results_header(rec: &RunRecord) -> Vec<String> {
    let l = &rec.labels;
    let mut h = vec!["step".to_owned(), "t".to_owned()];
    h.extend(state_columns("truth", l));
    h.extend(state_columns("obs", l));
    for id in &rec.model_ids {
        h.extend(state_columns(&format!("model_{id}_mean"), l));
        h.extend(state_columns(&format!("model_{id}_var"), l));
        h.extend(state_columns(&format!("free_{id}"), l));
    }
    h.extend(state_columns("analyzed_mean", l));
    h.extend(state_columns("analyzed_var", l));
    h.extend(rec.model_ids.iter().map(|id| format!("weight_{id}")));
    h.push("weight_data".into());
    h.push("ess".into());
    h
}

pub fn results_rows(rec: &RunRecord) -> Vec<Vec<String>> {
    let dim = rec.labels.len();
    (0..rec.times.len())
        .map(|k| {
            let mut row = vec![k.to_string(), format_number(rec.times[k])];
            push_state(&mut row, Some(&rec.truth[k]), dim);
            push_state(&mut row, rec.observations[k].as_ref(), dim);
            for m in 0..rec.model_ids.len() {
                push_state(&mut row, Some(&rec.forecast_means[k][m]), dim);
                push_state(&mut row, Some(&rec.forecast_vars[k][m]), dim);
                push_state(&mut row, Some(&rec.free_runs[m][k]), dim);
            }
            push_state(&mut row, Some(&rec.analyzed_mean[k]), dim);
            push_state(&mut row, Some(&rec.analyzed_var[k]), dim);
            row.extend(rec.model_weights[k].iter().map(|w| format_number(*w)));
            row.push(format_number(rec.data_weight[k]));
            row.push(format_number(rec.ess[k]));
            row
        })
        .collect()
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// `metrics` with NaN and infinities mapped to `null`.
pub fn metrics_json(rec: &RunRecord) -> serde_json::Value {
    serde_json::to_value(&rec.metrics).expect("metrics serialize")
}

pub fn write_results_csv(rec: &RunRecord, path: &Path) -> Result<()> {
    write_table(path, &results_header(rec), &results_rows(rec))
}

/// Same columns as the CSV, as a list of row objects keyed by column name.
pub fn results_json(rec: &RunRecord) -> serde_json::Value {
    let header = results_header(rec);
    let rows: Vec<serde_json::Value> = results_rows(rec)
        .into_iter()
        .map(|r| {
            let obj: serde_json::Map<String, serde_json::Value> = header
                .iter()
                .zip(r)
                .map(|(h, v)| {
                    let value = if v.is_empty() {
                        serde_json::Value::Null
                    } else if let Ok(x) = v.parse::<f64>() {
                        json!(x)
                    } else {
                        json!(v)
                    };
                    (h.clone(), value)
                })
                .collect();
            serde_json::Value::Object(obj)
        })
        .collect();
    json!({ "columns": header, "rows": rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Writes `results.csv` (or `results.json`) and `metrics.json` into `dir`.
pub fn write_run(rec: &RunRecord, dir: &Path, format: Format) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let results = match format {
        Format::Csv => {
            let p = dir.join("results.csv");
            write_results_csv(rec, &p)?;
            p
        }
        Format::Json => {
            let p = dir.join("results.json");
            write_json(&p, &results_json(rec))?;
            p
        }
    };
    let metrics = dir.join("metrics.json");
    write_json(&metrics, &metrics_json(rec))?;
    Ok(vec![results, metrics])
}

pub fn comparison_header(cmp: &BmaComparison) -> Vec<String> {
    let mut h = vec!["step".to_owned(), "t".to_owned(), "truth".to_owned()];
    h.extend(cmp.levels.iter().map(|l| format!("ekf@{l}")));
    h.push("bma".into());
    h
}

pub fn write_comparison(cmp: &BmaComparison, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rows: Vec<Vec<String>> = (0..cmp.times.len())
        .map(|k| {
            let mut r = vec![k.to_string(), format_number(cmp.times[k]), format_number(cmp.truth[k])];
            r.extend(cmp.ekf.iter().map(|e| format_number(e[k])));
            r.push(format_number(cmp.bma[k]));
            r
        })
        .collect();
    let csv = dir.join("compare_bma.csv");
    write_table(&csv, &comparison_header(cmp), &rows)?;
    let metrics = dir.join("metrics.json");
    let rmse: serde_json::Map<String, serde_json::Value> = cmp
        .levels
        .iter()
        .zip(&cmp.rmse_ekf)
        .map(|(l, r)| (format!("ekf@{l}"), json!(r)))
        .chain(std::iter::once(("bma".to_owned(), json!(cmp.rmse_bma))))
        .collect();
    write_json(&metrics, &json!({ "levels": cmp.levels, "rmse": rmse }))?;
    Ok(vec![csv, metrics])
}

/// `pdf.csv` (bin centers and one density column per series),
/// `samples.csv` (one row per draw) and `metrics.json`.
pub fn write_pdf_study(study: &PdfStudy, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut header = vec!["bin_center".to_owned()];
    header.extend(study.pdfs.iter().map(|(id, _)| id.clone()));
    let centers = study.pdfs[0].1.centers();
    let rows: Vec<Vec<String>> = (0..centers.len())
        .map(|k| {
            let mut r = vec![format_number(centers[k])];
            r.extend(study.pdfs.iter().map(|(_, p)| format_number(p.heights[k])));
            r
        })
        .collect();
    let pdf = dir.join("pdf.csv");
    write_table(&pdf, &header, &rows)?;

    let mut header = vec!["draw".to_owned(), "ks".to_owned(), "alpha".to_owned()];
    header.extend(study.model_ids.iter().map(|id| format!("model_{id}")));
    header.push("truth".into());
    header.push("pf".into());
    let s = &study.samples;
    let rows: Vec<Vec<String>> = (0..s.ks.len())
        .map(|k| {
            let mut r = vec![k.to_string(), format_number(s.ks[k]), format_number(s.alpha[k])];
            r.extend(s.values.iter().map(|v| format_number(v[k])));
            r.push(study.assimilated.get(k).map(|x| format_number(*x)).unwrap_or_default());
            r
        })
        .collect();
    let samples = dir.join("samples.csv");
    write_table(&samples, &header, &rows)?;

    let metrics = dir.join("metrics.json");
    let stds: serde_json::Map<String, serde_json::Value> = study
        .model_ids
        .iter()
        .zip(&study.std_models)
        .map(|(id, v)| (id.clone(), json!(v)))
        .collect();
    write_json(
        &metrics,
        &json!({
            "t_eval": study.t_eval,
            "reference": study.reference,
            "draws": s.ks.len(),
            "failures": s.failures,
            "particles": study.assimilated.len(),
            "truth_mean": study.truth_mean,
            "observation": study.observation,
            "observation_variance": study.observation_variance,
            "effective_sample_size": study.effective_sample_size,
            "std_models": stds,
            "std_truth": study.std_truth,
            "std_assimilated": study.std_assimilated,
        }),
    )?;
    Ok(vec![pdf, samples, metrics])
}
