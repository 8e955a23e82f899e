use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use mmot_core::experiments::ExperimentReport;
use mmot_core::{DiscreteMeasure, SparsePlan};
use serde::Serialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Writes `text` to `out`, or to stdout.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            fs::write(path, text).map_err(|e| CliError::io(path, e))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

pub fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(mmot_core::Error::from)?;
    text.push('\n');
    Ok(text)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, CliError> {
    let bytes = w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Failed(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Failed(e.to_string())
}

/// One row per atom: coordinates, then weight.
pub fn measure_csv(mu: &DiscreteMeasure) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=mu.dim()).map(|a| format!("x{a}")).collect();
    header.push("weight".into());
    w.write_record(&header).map_err(csv_err)?;
    for (p, m) in mu.points().zip(mu.weights()) {
        let mut row: Vec<String> = p.iter().map(|x| x.to_string()).collect();
        row.push(m.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

/// One row per atom: `i1..iN`, the coordinates of each point, mass.
pub fn plan_csv(plan: &SparsePlan) -> Result<String, CliError> {
    let n = plan.n_marginals();
    let d = plan.dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=n).map(|j| format!("i{j}")).collect();
    for j in 1..=n {
        header.extend((1..=d).map(|a| format!("x{j}_{a}")));
    }
    header.push("mass".into());
    w.write_record(&header).map_err(csv_err)?;
    for atom in plan.atoms() {
        let mut row: Vec<String> = atom.idx.iter().map(|i| i.to_string()).collect();
        row.extend(plan.tuple_coords(atom).iter().map(|x| x.to_string()));
        row.push(atom.mass.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

/// One row per resolution with the headline numbers.
pub fn report_csv(report: &ExperimentReport) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "resolution",
        "lp_value",
        "reference_value",
        "monge_value",
        "gap",
        "passed",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.results {
        w.write_record([
            r.resolution.to_string(),
            r.lp_value.to_string(),
            opt(r.reference_value),
            opt(r.monge_value),
            opt(r.gap),
            r.checks.iter().all(|c| c.passed).to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// `<stem><suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}
