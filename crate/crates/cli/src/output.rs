//! Report serialization. Floats are printed as `{:.16e}`, 17 significant
//! digits, in both JSON and CSV.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use spectral_flow::flowcore::FlowReport;

use crate::runner::{MethodRun, RunOutcome, Verdict};

pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn push_string(out: &mut String, s: &str) {
    out.push_str(&Value::String(s.to_owned()).to_string());
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null | Value::Bool(_) => out.push_str(&v.to_string()),
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => {
                let _ = write!(out, "{i}");
            }
            (_, Some(u), _) => {
                let _ = write!(out, "{u}");
            }
            (_, _, Some(f)) => out.push_str(&float(f)),
            _ => out.push_str(&n.to_string()),
        },
        Value::String(s) => push_string(out, s),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(out, item, indent + 1);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (k, (key, item)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                push_string(out, key);
                out.push_str(": ");
                write_value(out, item, indent + 1);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Pretty JSON with every non-integer number as `{:.16e}`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

/// Writes through a temporary file in the same directory and renames it.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temporary file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[derive(Serialize)]
struct MethodEntry<'a> {
    method: &'static str,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a FlowReport>,
}

#[derive(Serialize)]
struct Agreement {
    agree: bool,
    integer: Option<i64>,
    exit_code: u8,
}

#[derive(Serialize)]
struct RunDocument<'a> {
    config: &'a Value,
    scenario: ScenarioInfo<'a>,
    methods: Vec<MethodEntry<'a>>,
    agreement: Agreement,
}

#[derive(Serialize)]
struct ScenarioInfo<'a> {
    label: &'a str,
    provenance: &'a str,
    dim: usize,
    interval: (f64, f64),
    expected_flow: Option<i64>,
    truncation_dim: Option<usize>,
    summability: spectral_flow::models::Summability,
}

fn entries(runs: &[MethodRun]) -> Vec<MethodEntry<'_>> {
    runs.iter()
        .map(|r| MethodEntry {
            method: r.method.name(),
            status: r.outcome.status(),
            message: r.outcome.message(),
            report: r.outcome.report(),
        })
        .collect()
}

fn agreement(v: Verdict) -> Agreement {
    Agreement {
        agree: matches!(v, Verdict::Agree(_)),
        integer: match v {
            Verdict::Agree(k) => Some(k),
            _ => None,
        },
        exit_code: v.exit_code(),
    }
}

pub fn run_json(config: &Value, outcome: &RunOutcome) -> Result<String> {
    let s = &outcome.scenario;
    to_json(&RunDocument {
        config,
        scenario: ScenarioInfo {
            label: s.path.label(),
            provenance: &s.provenance,
            dim: s.path.dim(),
            interval: s.path.interval(),
            expected_flow: s.expected_flow,
            truncation_dim: s.truncation_dim,
            summability: s.summability,
        },
        methods: entries(&outcome.runs),
        agreement: agreement(outcome.verdict),
    })
}

pub const RUN_CSV_COLUMNS: [&str; 12] = [
    "method",
    "status",
    "value",
    "integer",
    "residual",
    "integral_term",
    "endpoint_end",
    "endpoint_start",
    "quad_points",
    "evaluations",
    "flagged",
    "message",
];

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per method, then an `agreement` row whose `integer` column holds
/// the common integer when there is one.
pub fn run_csv(outcome: &RunOutcome) -> Result<String> {
    let header: Vec<String> = RUN_CSV_COLUMNS.iter().map(|s| s.to_string()).collect();
    let mut rows: Vec<Vec<String>> = outcome
        .runs
        .iter()
        .map(|r| {
            let rep = r.outcome.report();
            let mut message: Vec<String> = r.outcome.message().map(str::to_owned).into_iter().collect();
            if let Some(rep) = rep {
                message.extend(rep.diagnostics.warnings.iter().cloned());
            }
            vec![
                r.method.name().to_string(),
                r.outcome.status().to_string(),
                opt(rep.map(|x| float(x.value))),
                opt(rep.map(|x| x.integer)),
                opt(rep.map(|x| float(x.residual))),
                opt(rep.map(|x| float(x.terms.integral))),
                opt(rep.map(|x| float(x.terms.endpoint_b))),
                opt(rep.map(|x| float(x.terms.endpoint_a))),
                opt(rep.and_then(|x| x.diagnostics.quad_points)),
                opt(rep.map(|x| x.diagnostics.evaluations)),
                opt(rep.map(|x| x.diagnostics.flagged)),
                message.join("; "),
            ]
        })
        .collect();
    let mut last = vec![String::new(); RUN_CSV_COLUMNS.len()];
    last[0] = "agreement".into();
    last[1] = if matches!(outcome.verdict, Verdict::Agree(_)) { "agree" } else { "disagree" }.into();
    if let Verdict::Agree(k) = outcome.verdict {
        last[3] = k.to_string();
    }
    rows.push(last);
    csv_string(&header, &rows)
}

pub fn timings_csv(rows: &[(String, &MethodRun)]) -> Result<String> {
    let header = vec!["row".to_string(), "method".into(), "status".into(), "seconds".into()];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(row, r)| {
            vec![
                row.clone(),
                r.method.name().to_string(),
                r.outcome.status().to_string(),
                float(r.elapsed.as_secs_f64()),
            ]
        })
        .collect();
    csv_string(&header, &body)
}
