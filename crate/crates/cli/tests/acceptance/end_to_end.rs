use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use icufeat::corrext::RatioReport;
use icufeat::pathfeat::FeatureTable;
use icufeat::treelab::{EvalResult, TreeModel};

use crate::{ensure, Outcome};

const BUDGET_SECS: f64 = 300.0;

fn icufeat(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_icufeat"))
        .args(["--log", "warn"])
        .args(args)
        .output()
        .map_err(|e| format!("cannot start icufeat: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "icufeat {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn collect(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> Result<(), String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for entry in entries {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.is_dir() {
            collect(&path, root, out)?;
        } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
            let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
        }
    }
    Ok(())
}

fn snapshot(run: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    collect(run, run, &mut files)?;
    Ok(files)
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("missing {}: {e}", path.display()))
}

fn check_artifacts(run: &Path) -> Result<(), String> {
    for mode in ["last", "mid", "gradient"] {
        let table =
            FeatureTable::read(&run.join(format!("features/{mode}.csv"))).map_err(|e| format!("{mode} table: {e}"))?;
        ensure(!table.is_empty(), || format!("{mode} table is empty"))?;
        let tree =
            TreeModel::from_json(&read(&run.join(format!("trees/{mode}/tree.json")))?).map_err(|e| e.to_string())?;
        ensure(tree.mode.map(|m| m.to_string()).as_deref() == Some(mode), || {
            format!("{mode} tree has mode {:?}", tree.mode)
        })?;
        for eval in ["whole_set", "cv"] {
            let text = read(&run.join(format!("trees/{mode}/{eval}.json")))?;
            let result: EvalResult = serde_json::from_str(&text).map_err(|e| format!("{mode} {eval}: {e}"))?;
            ensure(result.total() > 0, || format!("{mode} {eval} scored nothing"))?;
        }
    }
    let report: RatioReport =
        serde_json::from_str(&read(&run.join("external/ratio_report.json"))?).map_err(|e| e.to_string())?;
    ensure(report.n0 + report.n1 > 0, || "ratio report has empty classes".into())?;
    let surfaces = std::fs::read_dir(run.join("surface"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains("_class"))
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .count();
    ensure(surfaces >= 2, || format!("{surfaces} surface CSVs"))?;
    Ok(())
}

pub fn run() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = dir.path().join("fixture");
    let fixture_str = fixture.to_str().ok_or("non-UTF-8 temp path")?;
    icufeat(&["fixture", "--out", fixture_str, "--cohort", "20"])?;
    let config = fixture.join("pipeline.toml");
    let config_str = config.to_str().ok_or("non-UTF-8 temp path")?;
    let run = fixture.join("run");

    let mut timings = Vec::new();
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let started = Instant::now();
        icufeat(&["pipeline", "--config", config_str, "--no-resume"])?;
        let secs = started.elapsed().as_secs_f64();
        ensure(secs < BUDGET_SECS, || format!("pipeline took {secs:.0}s"))?;
        timings.push(secs);
        check_artifacts(&run)?;
        snapshots.push(snapshot(&run)?);
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    ensure(a.keys().eq(b.keys()), || {
        "the two runs wrote different file sets".into()
    })?;
    let differing: Vec<_> = a
        .iter()
        .filter(|(k, v)| b[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure(differing.is_empty(), || format!("runs differ in {differing:?}"))?;
    Ok(format!(
        "runs took {:.0}s and {:.0}s, {} CSV/JSON files byte-identical",
        timings[0],
        timings[1],
        a.len()
    ))
}
