//! `spfl`: run spectral-flow scenarios from JSON configs.

mod config;
mod output;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use config::RunConfig;
use output::{float, write_atomic};
use runner::{MethodRun, RunOutcome, Verdict};

#[derive(Parser, Debug)]
#[command(name = "spfl", version, about = "Spectral flow of Hermitian matrix paths")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON scenario config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Every configured method on one scenario; exit 2 if they disagree.
    Run,
    /// One row per value of `sweep.parameter`.
    Sweep,
    /// Sorted eigenvalues along the path, long format.
    Plotdata,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().context("--config <file> is required")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = RunConfig::from_json_str(&text)?;
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    Ok(config)
}

fn summary_line(r: &MethodRun) -> String {
    match r.outcome.report() {
        Some(rep) => format!(
            "{:<10} {:<13} value {} integer {} residual {}",
            r.method.name(),
            r.outcome.status(),
            float(rep.value),
            rep.integer,
            float(rep.residual)
        ),
        None => format!(
            "{:<10} {:<13} {}",
            r.method.name(),
            r.outcome.status(),
            r.outcome.message().unwrap_or_default()
        ),
    }
}

fn run_command(cli: &Cli, out: &Path) -> Result<Verdict> {
    let config = load(cli)?;
    let outcome = runner::run(&config)?;
    let body = match cli.format {
        Format::Json => output::run_json(&config.source, &outcome)?,
        Format::Csv => output::run_csv(&outcome)?,
    };
    write_atomic(&out.join(format!("report.{}", cli.format.ext())), &body)?;
    let timing_rows: Vec<(String, &MethodRun)> = outcome.runs.iter().map(|r| ("0".to_string(), r)).collect();
    write_atomic(&out.join("timings.csv"), &output::timings_csv(&timing_rows)?)?;
    for r in &outcome.runs {
        println!("{}", summary_line(r));
    }
    match outcome.verdict {
        Verdict::Agree(k) => println!("agreement: all methods give {k}"),
        Verdict::Disagree => println!("agreement: methods disagree or did not converge"),
        Verdict::Error => println!("agreement: a method failed to run"),
    }
    Ok(outcome.verdict)
}

/// Compact rendering of a swept value for the CSV `value` column.
fn value_cell(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_f64() => float(n.as_f64().unwrap()),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Serialize)]
struct SweepRowJson<'a> {
    value: &'a Value,
    methods: Vec<SweepMethodJson<'a>>,
    agreement: Option<i64>,
    exit_code: u8,
}

#[derive(Serialize)]
struct SweepMethodJson<'a> {
    method: &'static str,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a spectral_flow::FlowReport>,
}

fn sweep_command(cli: &Cli, out: &Path) -> Result<Verdict> {
    let config = load(cli)?;
    let sweep = config
        .sweep
        .clone()
        .context("config.sweep: the sweep command needs a sweep spec")?;
    let configs: Vec<RunConfig> = sweep
        .values
        .iter()
        .map(|v| config.with_parameter(&sweep.parameter, v))
        .collect::<Result<_>>()?;
    let outcomes: Vec<RunOutcome> = configs.par_iter().map(runner::run).collect::<Result<_>>()?;

    let body = match cli.format {
        Format::Csv => {
            let mut header = vec!["parameter".to_string(), "value".into()];
            for m in &config.methods {
                for col in ["status", "value", "integer", "residual"] {
                    header.push(format!("{}_{col}", m.name()));
                }
            }
            header.push("agreement".into());
            let rows: Vec<Vec<String>> = sweep
                .values
                .iter()
                .zip(&outcomes)
                .map(|(v, o)| {
                    let mut row = vec![sweep.parameter.clone(), value_cell(v)];
                    for r in &o.runs {
                        let rep = r.outcome.report();
                        row.push(r.outcome.status().into());
                        row.push(rep.map(|x| float(x.value)).unwrap_or_default());
                        row.push(rep.map(|x| x.integer.to_string()).unwrap_or_default());
                        row.push(rep.map(|x| float(x.residual)).unwrap_or_default());
                    }
                    row.push(match o.verdict {
                        Verdict::Agree(k) => k.to_string(),
                        _ => String::new(),
                    });
                    row
                })
                .collect();
            output::csv_string(&header, &rows)?
        }
        Format::Json => {
            let rows: Vec<SweepRowJson> = sweep
                .values
                .iter()
                .zip(&outcomes)
                .map(|(v, o)| SweepRowJson {
                    value: v,
                    methods: o
                        .runs
                        .iter()
                        .map(|r| SweepMethodJson {
                            method: r.method.name(),
                            status: r.outcome.status(),
                            message: r.outcome.message(),
                            report: r.outcome.report(),
                        })
                        .collect(),
                    agreement: match o.verdict {
                        Verdict::Agree(k) => Some(k),
                        _ => None,
                    },
                    exit_code: o.verdict.exit_code(),
                })
                .collect();
            output::to_json(&serde_json::json!({
                "parameter": sweep.parameter,
                "config": config.source,
                "rows": rows,
            }))?
        }
    };
    write_atomic(&out.join(format!("sweep.{}", cli.format.ext())), &body)?;
    let timing_rows: Vec<(String, &MethodRun)> = sweep
        .values
        .iter()
        .zip(&outcomes)
        .flat_map(|(v, o)| o.runs.iter().map(move |r| (value_cell(v), r)))
        .collect();
    write_atomic(&out.join("timings.csv"), &output::timings_csv(&timing_rows)?)?;

    for (v, o) in sweep.values.iter().zip(&outcomes) {
        let parts: Vec<String> = o.runs.iter().map(summary_line).collect();
        println!("{} = {}: {}", sweep.parameter, value_cell(v), parts.join(" | "));
    }
    // the worst row decides
    let verdict = outcomes
        .iter()
        .map(|o| o.verdict)
        .max_by_key(|v| match v {
            Verdict::Agree(_) => 0,
            Verdict::Disagree => 1,
            Verdict::Error => 2,
        })
        .expect("sweep has rows");
    Ok(verdict)
}

fn plotdata_command(cli: &Cli, out: &Path) -> Result<Verdict> {
    let config = load(cli)?;
    let scenario = runner::build_scenario(&config.scenario)?;
    let samples = runner::eigenvalue_samples(&scenario.path, config.plot_samples);
    let body = match cli.format {
        Format::Csv => {
            let header = vec!["t".to_string(), "branch".into(), "eigenvalue".into()];
            let rows: Vec<Vec<String>> = samples
                .iter()
                .flat_map(|(t, ev)| {
                    ev.iter()
                        .enumerate()
                        .map(move |(k, l)| vec![float(*t), k.to_string(), float(*l)])
                })
                .collect();
            output::csv_string(&header, &rows)?
        }
        Format::Json => {
            let rows: Vec<Value> = samples
                .iter()
                .map(|(t, ev)| serde_json::json!({"t": t, "eigenvalues": ev}))
                .collect();
            output::to_json(&serde_json::json!({
                "label": scenario.path.label(),
                "samples": rows,
            }))?
        }
    };
    let file = out.join(format!("plotdata.{}", cli.format.ext()));
    write_atomic(&file, &body)?;
    println!("{} samples of {} branches written to {}", samples.len(), scenario.path.dim(), file.display());
    Ok(Verdict::Agree(0))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(1);
        }
    }
    let out = cli.out.clone();
    let result = match cli.command {
        Command::Run => run_command(&cli, &out),
        Command::Sweep => sweep_command(&cli, &out),
        Command::Plotdata => plotdata_command(&cli, &out),
    };
    match result {
        Ok(v) => ExitCode::from(v.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
