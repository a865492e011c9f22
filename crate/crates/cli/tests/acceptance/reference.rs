//! Reference figures for a run on the original cohort with pretrained
//! weights. Only checked when such a run directory is supplied.

use std::path::{Path, PathBuf};

use icufeat::corrext::RatioReport;
use icufeat::treelab::EvalResult;
use serde_json::Value;

use crate::{ensure, Outcome};

pub const NAME: &str = "reference reproduction";
pub const ENV: &str = "ICUFEAT_REFERENCE_RUN";

pub fn run_dir() -> Option<PathBuf> {
    std::env::var_os(ENV).map(PathBuf::from)
}

fn load<T>(dir: &Path, rel: &str, parse: impl FnOnce(&str) -> serde_json::Result<T>) -> Result<T, String> {
    let path = dir.join(rel);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn near(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{what} {got:.3}, expected {want} +/- {tol}")
    })
}

pub fn run(dir: &Path) -> Outcome {
    let last: EvalResult = load(dir, "trees/last/whole_set.json", |s: &str| serde_json::from_str(s))?;
    near("last-layer accuracy", last.accuracy, 0.80, 0.05)?;
    near("last-layer F1", last.f1, 0.74, 0.05)?;
    let mid: EvalResult = load(dir, "trees/mid/whole_set.json", |s: &str| serde_json::from_str(s))?;
    near("mid-layer accuracy", mid.accuracy, 0.89, 0.05)?;

    let summary: Value = load(dir, "external/summary.json", |s: &str| serde_json::from_str(s))?;
    let count = |k: &str| summary[k].as_f64().ok_or_else(|| format!("summary lacks {k}"));
    near("external class 0", count("class0")?, 806.0, 806.0 * 0.05)?;
    near("external class 1", count("class1")?, 506.0, 506.0 * 0.05)?;

    let report: RatioReport = load(dir, "external/ratio_report.json", |s: &str| serde_json::from_str(s))?;
    for (token, want) in [("consolidation", 1.67), ("bilateral", 1.58)] {
        let got = report.get(token).ok_or_else(|| format!("no ratio for {token}"))?.ratio;
        near(token, got, want, 0.15)?;
    }
    Ok(format!(
        "accuracy {:.3} / F1 {:.3} / mid {:.3}",
        last.accuracy, last.f1, mid.accuracy
    ))
}
