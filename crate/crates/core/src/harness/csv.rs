//! CSV emission. Floats carry 17 significant digits; missing metrics are
//! empty fields. Files are written whole and renamed into place, and a
//! partial result never replaces an existing file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::experiment::{AggregateRow, ExperimentResult, MeanErr};
use super::studies::TauStudy;

pub const RUN_COLUMNS: [&str; 10] = [
    "seed",
    "t",
    "t_prime",
    "f_gap",
    "avg_gap",
    "grad_norm_sq",
    "min_grad_norm_sq",
    "tau_bar",
    "tau_max",
    "oracle_calls",
];

const AGGREGATE_METRICS: [&str; 8] = [
    "t_prime",
    "f_gap",
    "avg_gap",
    "grad_norm_sq",
    "min_grad_norm_sq",
    "tau_bar",
    "tau_max",
    "oracle_calls",
];

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

pub fn aggregate_header() -> String {
    let mut cols = vec!["t".to_string()];
    for m in AGGREGATE_METRICS {
        cols.push(format!("{m}_mean"));
        cols.push(format!("{m}_stderr"));
    }
    cols.push("seeds".into());
    cols.push("partial".into());
    cols.join(",")
}

/// One row per (seed, wall-round).
pub fn runs_csv(result: &ExperimentResult) -> String {
    let mut out = RUN_COLUMNS.join(",");
    out.push('\n');
    for (seed, run) in result.seeds.iter().zip(&result.runs) {
        for r in &run.rows {
            let _ = writeln!(
                out,
                "{seed},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.t_prime,
                opt(r.f_gap),
                opt(r.avg_gap),
                float(r.grad_norm_sq),
                float(r.min_grad_norm_sq),
                float(r.tau_bar),
                r.tau_max,
                r.oracle_calls
            );
        }
    }
    out
}

fn pair(out: &mut String, m: Option<MeanErr>) {
    match m {
        Some(m) => {
            let _ = write!(out, ",{},{}", float(m.mean), float(m.stderr));
        }
        None => out.push_str(",,"),
    }
}

pub fn aggregate_csv(result: &ExperimentResult) -> String {
    let mut out = aggregate_header();
    out.push('\n');
    for a in &result.aggregate {
        let AggregateRow {
            t,
            t_prime,
            f_gap,
            avg_gap,
            grad_norm_sq,
            min_grad_norm_sq,
            tau_bar,
            tau_max,
            oracle_calls,
            partial,
        } = *a;
        let _ = write!(out, "{t}");
        for m in [
            Some(t_prime),
            f_gap,
            avg_gap,
            Some(grad_norm_sq),
            Some(min_grad_norm_sq),
            Some(tau_bar),
            Some(tau_max),
            Some(oracle_calls),
        ] {
            pair(&mut out, m);
        }
        let _ = writeln!(out, ",{},{}", result.seeds.len(), u8::from(partial));
    }
    out
}

pub const TAU_COLUMNS: [&str; 6] = ["device", "p", "k", "empirical", "expected", "stderr"];

pub fn tau_study_csv(study: &TauStudy) -> String {
    let mut out = TAU_COLUMNS.join(",");
    out.push('\n');
    for pt in &study.tail {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            pt.device,
            float(pt.p),
            pt.k,
            float(pt.empirical),
            float(pt.expected),
            float(pt.stderr)
        );
    }
    out
}

/// `dir/stem.csv` → `dir/stem<suffix>`
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{}: not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Where a result should land: a partial result that would replace any
/// existing output goes to `<stem>.partial.csv` and its siblings instead.
pub fn target_path(path: &Path, partial: bool) -> PathBuf {
    let taken = [".csv", ".aggregate.csv", ".meta.json"]
        .iter()
        .any(|s| sibling(path, s).exists());
    if partial && taken {
        sibling(path, ".partial.csv")
    } else {
        path.to_path_buf()
    }
}

/// Paths actually written for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Written {
    pub runs: PathBuf,
    pub aggregate: PathBuf,
    pub metadata: PathBuf,
}

/// Writes `<out>`, `<stem>.aggregate.csv` and `<stem>.meta.json`.
pub fn write_experiment(out: &Path, result: &ExperimentResult) -> Result<Written> {
    let runs = target_path(out, result.is_partial());
    let aggregate = sibling(&runs, ".aggregate.csv");
    let metadata = sibling(&runs, ".meta.json");
    let meta =
        serde_json::to_string_pretty(&result.summary).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&runs, &runs_csv(result))?;
    write_atomic(&aggregate, &aggregate_csv(result))?;
    write_atomic(&metadata, &(meta + "\n"))?;
    Ok(Written {
        runs,
        aggregate,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(1.0), "1.0000000000000000e0");
        for v in [0.1, 1.0 / 3.0, 2e-300, 12345.678] {
            assert_eq!(float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(
            sibling(Path::new("a/b.csv"), ".aggregate.csv"),
            PathBuf::from("a/b.aggregate.csv")
        );
    }

    #[test]
    fn atomic_write_and_partial_redirect() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        assert_eq!(target_path(&p, true), p);
        write_atomic(&p, "x\n").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "x\n");
        assert_eq!(
            target_path(&p, true),
            dir.path().join("sub/out.partial.csv")
        );
        assert_eq!(target_path(&p, false), p);
    }
}
