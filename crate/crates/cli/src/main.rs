//! `mmda`: run assimilation scenarios from the command line.
//!
//! Exit status is 0 on success, 1 when a run fails and 2 on usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmda::harness::experiment::{compare_bma, prepare, run_pdf_study, run_setup};
use mmda::harness::output::{self, Format};
use mmda::harness::scenario::ErrorMode;
use mmda::harness::truth::format_number;
use mmda::harness::{calibrate_model_errors, FilterKind, Scenario};
use serde_json::json;

mod scenarios;

#[derive(Parser, Debug)]
#[command(name = "mmda", version, about = "Multi-model sequential data assimilation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write results.csv (or results.json) and metrics.json.
    Run(Common),
    /// Calibrate white and time-dependent model errors from the free runs.
    Calibrate(Common),
    /// Heterogeneous-soil density study; writes pdf.csv, samples.csv, metrics.json.
    Pdf(Common),
    /// Extended Kalman filter at several data-noise levels next to model averaging.
    CompareBma {
        #[command(flatten)]
        common: Common,
        /// Observation noise standard deviations.
        #[arg(long, value_delimiter = ',', default_values_t = [0.002, 0.01])]
        levels: Vec<f64>,
    },
    /// Print the names of the bundled scenarios.
    ListScenarios,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// mmkf, ekf, enkf, pf or bma.
    #[arg(long)]
    filter: Option<String>,
    /// Worker threads for Monte Carlo sampling (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OutputFormat {
    Csv,
    Json,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<mmda::Error> for Failure {
    fn from(e: mmda::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    let mut s = scenarios::resolve(&common.scenario)?;
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    if let Some(f) = &common.filter {
        s.filter = FilterKind::parse(f).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(s)
}

fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        "n/a".into()
    }
}

fn written(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

fn run(common: &Common) -> Result<String, Failure> {
    let s = load(common)?;
    let rec = run_setup(&prepare(&s)?)?;
    let format = match common.format {
        OutputFormat::Csv => Format::Csv,
        OutputFormat::Json => Format::Json,
    };
    let paths = output::write_run(&rec, &common.out, format)?;
    let m = &rec.metrics;
    let best = m
        .models
        .iter()
        .min_by(|a, b| a.rmse_free.total_cmp(&b.rmse_free))
        .expect("scenarios have models");
    Ok(format!(
        "{} [{}] seed {}: rmse {} (at observations {}), best free run {} rmse {} -> {}",
        m.scenario,
        m.filter,
        m.seed,
        fmt(m.rmse_analyzed),
        fmt(m.rmse_analyzed_obs),
        best.id,
        fmt(best.rmse_free),
        written(&paths)
    ))
}

fn calibrate(common: &Common) -> Result<String, Failure> {
    let s = load(common)?;
    let setup = prepare(&s)?;
    std::fs::create_dir_all(&common.out).map_err(|e| Failure::Runtime(format!("{}: {e}", common.out.display())))?;
    let mut models = serde_json::Map::new();
    let mut columns = vec!["step".to_owned(), "t".to_owned(), "truth".to_owned()];
    let mut series: Vec<Vec<f64>> = Vec::new();
    let mut summary = Vec::new();
    let steps: Vec<usize> = (1..setup.times.len()).collect();
    for (spec, run) in s.models.iter().zip(&setup.free_runs) {
        let white = calibrate_model_errors(run, &setup.truth, ErrorMode::White, Some(&steps), 0.0)?;
        let timed = calibrate_model_errors(run, &setup.truth, ErrorMode::TimeDependent, Some(&steps), 0.0)?;
        let schedule = match &timed {
            mmda::harness::ErrorCalibration::TimeDependent { schedule } => schedule.clone(),
            mmda::harness::ErrorCalibration::White { .. } => unreachable!("time-dependent mode"),
        };
        if let mmda::harness::ErrorCalibration::White { variance } = white {
            summary.push(format!("{} white variance {}", spec.id, fmt(variance)));
        }
        models.insert(spec.id.clone(), json!({ "white": white, "time_dependent": timed }));
        columns.push(format!("free_{}", spec.id));
        columns.push(format!("sq_error_{}", spec.id));
        series.push(run.iter().map(|x| x[0]).collect());
        series.push(schedule);
    }
    let csv_path = common.out.join("calibration.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Failure::Runtime(format!("{}: {e}", csv_path.display())))?;
    let io = |e: csv::Error| Failure::Runtime(format!("{}: {e}", csv_path.display()));
    w.write_record(&columns).map_err(io)?;
    for k in 0..setup.times.len() {
        let mut row = vec![k.to_string(), format_number(setup.times[k]), format_number(setup.truth[k][0])];
        row.extend(series.iter().map(|v| v.get(k).map(|x| format_number(*x)).unwrap_or_default()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::Runtime(format!("{}: {e}", csv_path.display())))?;
    let json_path = common.out.join("calibration.json");
    let text = serde_json::to_string_pretty(&json!({ "scenario": s.name, "models": models })).expect("JSON values serialize");
    std::fs::write(&json_path, text + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", json_path.display())))?;
    Ok(format!("{}: {} -> {}", s.name, summary.join(", "), written(&[csv_path, json_path])))
}

fn pdf(common: &Common) -> Result<String, Failure> {
    let s = load(common)?;
    let study = run_pdf_study(&s)?;
    let paths = output::write_pdf_study(&study, &common.out)?;
    let stds: Vec<String> = study
        .model_ids
        .iter()
        .zip(&study.std_models)
        .map(|(id, v)| format!("{id} {}", fmt(*v)))
        .collect();
    Ok(format!(
        "{} at t = {}: std {}, truth {}, assimilated {} (ess {:.1}) -> {}",
        s.name,
        study.t_eval,
        stds.join(", "),
        fmt(study.std_truth),
        fmt(study.std_assimilated),
        study.effective_sample_size,
        written(&paths)
    ))
}

fn compare(common: &Common, levels: &[f64]) -> Result<String, Failure> {
    if levels.is_empty() || levels.iter().any(|l| !(*l >= 0.0)) {
        return Err(Failure::Usage("--levels needs non-negative standard deviations".into()));
    }
    let s = load(common)?;
    let cmp = compare_bma(&s, levels)?;
    let paths = output::write_comparison(&cmp, &common.out)?;
    let parts: Vec<String> = levels
        .iter()
        .zip(&cmp.rmse_ekf)
        .map(|(l, r)| format!("ekf@{l} {}", fmt(*r)))
        .collect();
    Ok(format!(
        "{}: rmse {}, bma {} -> {}",
        s.name,
        parts.join(", "),
        fmt(cmp.rmse_bma),
        written(&paths)
    ))
}

fn dispatch(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::Run(c) => run(&c),
        Command::Calibrate(c) => calibrate(&c),
        Command::Pdf(c) => pdf(&c),
        Command::CompareBma { common, levels } => compare(&common, &levels),
        Command::ListScenarios => Ok(scenarios::BUNDLED
            .iter()
            .map(|(name, text)| {
                let description = Scenario::from_toml_str(text).map(|s| s.description).unwrap_or_default();
                format!("{name:24} {description}")
            })
            .collect::<Vec<_>>()
            .join("\n")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_parses() {
        for (name, text) in scenarios::BUNDLED {
            let s = Scenario::from_toml_str(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&s.name, name);
        }
    }

    #[test]
    fn bundled_lookup_accepts_extension() {
        assert!(scenarios::bundled("infil_ekf.toml").is_some());
        assert!(scenarios::bundled("infil_ekf").is_some());
        assert!(scenarios::bundled("nope").is_none());
    }
}
