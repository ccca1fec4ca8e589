use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::AvgQdSource;
use super::record::{read_log, RunRecord};
use super::HarnessError;
use crate::difficulty::{calibrate, Calibration, Provenance, WeightTable};
use crate::metrics::{compute_report, spread, AssessmentReport, HaluDokDenominator, Spread};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Log location relative to its grandparent, e.g. `run-01/log.jsonl`.
    pub log: String,
    pub report: AssessmentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Option<Spread>,
    pub weighted_accuracy: Option<Spread>,
    pub assessment_qd: Option<Spread>,
    pub abstain_rate: Option<Spread>,
    pub halu_bok: Option<Spread>,
    pub halu_dok: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub avg_qd_source: AvgQdSource,
    pub halu_dok_denominator: HaluDokDenominator,
    pub runs: Vec<RunReport>,
    /// Mean and population standard deviation across runs.
    pub aggregate: Aggregate,
    #[serde(skip)]
    pub log_paths: Vec<PathBuf>,
}

/// Paths matching a glob pattern, sorted.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>, HarnessError> {
    let paths = glob::glob(pattern).map_err(|e| HarnessError::Config(format!("bad glob {pattern:?}: {e}")))?;
    let mut out: Vec<PathBuf> = paths.filter_map(Result::ok).filter(|p| p.is_file()).collect();
    out.sort();
    if out.is_empty() {
        return Err(HarnessError::Config(format!("no log files match {pattern:?}")));
    }
    Ok(out)
}

fn label(path: &Path) -> String {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    match path.parent().and_then(Path::file_name) {
        Some(dir) => format!("{}/{file}", dir.to_string_lossy()),
        None => file,
    }
}

fn check_dense(path: &Path, records: &[RunRecord]) -> Result<(), HarnessError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.question_index) {
            return Err(HarnessError::Data(format!(
                "{}: question {} appears twice",
                path.display(),
                r.question_index
            )));
        }
    }
    Ok(())
}

/// Reports for each log plus cross-run spread.
pub fn summarize(
    logs: &[PathBuf],
    avg_qd_source: AvgQdSource,
    denominator: HaluDokDenominator,
) -> Result<Summary, HarnessError> {
    let mut all = Vec::new();
    for path in logs {
        let records = read_log(path)?;
        if records.is_empty() {
            return Err(HarnessError::Data(format!("{} has no records", path.display())));
        }
        check_dense(path, &records)?;
        all.push(records);
    }
    let experiment_qd = {
        let qds: Vec<f64> = all.iter().flatten().map(|r| r.difficulty.q_d).collect();
        qds.iter().sum::<f64>() / qds.len().max(1) as f64
    };
    let mut runs = Vec::new();
    for (path, records) in logs.iter().zip(&all) {
        let reference = match avg_qd_source {
            AvgQdSource::Calibration => records[0].avg_qd_reference,
            AvgQdSource::Experiment => experiment_qd,
        };
        let scored: Vec<_> = records.iter().map(RunRecord::scored).collect();
        let report = compute_report(&scored, reference, denominator)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        runs.push(RunReport {
            log: label(path),
            report,
        });
    }
    let over = |f: fn(&AssessmentReport) -> Option<f64>| spread(runs.iter().map(|r| f(&r.report)));
    let aggregate = Aggregate {
        accuracy: over(|r| Some(r.accuracy)),
        weighted_accuracy: over(|r| Some(r.weighted_accuracy)),
        assessment_qd: over(|r| Some(r.assessment_qd)),
        abstain_rate: over(|r| Some(r.abstain_rate)),
        halu_bok: over(|r| r.halu_bok),
        halu_dok: over(|r| r.halu_dok),
    };
    Ok(Summary {
        avg_qd_source,
        halu_dok_denominator: denominator,
        runs,
        aggregate,
        log_paths: logs.to_vec(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// The four headline metrics, one row per run, then mean and std rows.
pub fn metrics_csv(summary: &Summary) -> String {
    let mut out = String::from("run,weighted_accuracy,abstain_rate,halu_bok,halu_dok\n");
    for r in &summary.runs {
        let rep = &r.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.log,
            cell(Some(rep.weighted_accuracy)),
            cell(Some(rep.abstain_rate)),
            cell(rep.halu_bok),
            cell(rep.halu_dok)
        );
    }
    let a = &summary.aggregate;
    let cols = [&a.weighted_accuracy, &a.abstain_rate, &a.halu_bok, &a.halu_dok];
    let row = |f: fn(&Spread) -> f64| {
        cols.iter()
            .map(|s| cell(s.as_ref().map(f)))
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(out, "mean,{}", row(|s| s.mean));
    let _ = writeln!(out, "std,{}", row(|s| s.std_dev));
    out
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Writes `summary.json` and `metrics.csv` into `out_dir`, and with
/// `beside_logs` a `report.json` next to every log.
pub fn write_summary(summary: &Summary, out_dir: &Path, beside_logs: bool) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    if beside_logs {
        for (path, run) in summary.log_paths.iter().zip(&summary.runs) {
            let dir = path.parent().unwrap_or(Path::new("."));
            let text = serde_json::to_string_pretty(&run.report).expect("report serializes") + "\n";
            write(&dir.join("report.json"), &text)?;
        }
    }
    let text = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
    write(&out_dir.join("summary.json"), &text)?;
    write(&out_dir.join("metrics.csv"), &metrics_csv(summary))
}

/// Recomputes reports from logs matching `pattern` and writes them to
/// `out_dir`.
pub fn report_from_logs(
    pattern: &str,
    out_dir: &Path,
    avg_qd_source: AvgQdSource,
    denominator: HaluDokDenominator,
) -> Result<Summary, HarnessError> {
    let logs = expand_glob(pattern)?;
    let summary = summarize(&logs, avg_qd_source, denominator)?;
    write_summary(&summary, out_dir, false)?;
    Ok(summary)
}

/// Calibrates a weight table from logs matching `pattern`, recording the
/// sources, flags and time in the table.
pub fn calibrate_from_logs(pattern: &str, prior: &WeightTable) -> Result<Calibration, HarnessError> {
    let logs = expand_glob(pattern)?;
    let mut records = Vec::new();
    for path in &logs {
        for r in read_log(path)? {
            records.push(r.calibration_record()?);
        }
    }
    let mut calibration = calibrate(&records, prior).map_err(|e| HarnessError::Data(e.to_string()))?;
    calibration.table.calibrated_at = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    calibration.table.provenance = Some(Provenance {
        source_logs: logs.iter().map(|p| p.display().to_string()).collect(),
        records: records.len(),
        flags: calibration.flags.iter().map(ToString::to_string).collect(),
    });
    Ok(calibration)
}
