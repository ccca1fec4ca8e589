use std::path::{Path, PathBuf};
use std::process::Command;

use halubench::backends::mock::{MockFailure, MockRule, MockScript};
use halubench::harness::config::TransportMode;
use halubench::harness::run::resume_token;
use halubench::harness::{self, read_log, AvgQdSource, HarnessError, RunConfig, RunOptions};
use halubench::metrics::HaluDokDenominator;
use halubench::synthetic;
use halubench::tables::Tables;

fn fixture_config(dir: &Path, questions: usize, runs: usize) -> RunConfig {
    let fixtures = synthetic::generate(160, 11, &Tables::builtin());
    let path = synthetic::write_fixture_set(dir, &fixtures, 11, questions, runs).unwrap();
    RunConfig::load(&path).unwrap()
}

fn with_output(mut config: RunConfig, out: PathBuf, workers: usize) -> RunConfig {
    config.output_dir = out;
    config.max_concurrent_questions = workers;
    config
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn runs_are_reproducible_across_invocations_and_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    let base = fixture_config(dir.path(), 30, 2);
    let a = with_output(base.clone(), dir.path().join("a"), 1);
    let b = with_output(base, dir.path().join("b"), 8);
    harness::run_assessment(&a, &RunOptions::default()).unwrap();
    harness::run_assessment(&b, &RunOptions::default()).unwrap();
    for rel in [
        "run-01/log.jsonl",
        "run-02/log.jsonl",
        "run-01/report.json",
        "summary.json",
        "metrics.csv",
    ] {
        assert_eq!(
            read(&a.output_dir.join(rel)),
            read(&b.output_dir.join(rel)),
            "{rel} differs"
        );
    }
    let log = read_log(&a.output_dir.join("run-01/log.jsonl")).unwrap();
    assert_eq!(log.len(), 30);
    assert!(log.iter().enumerate().all(|(i, r)| r.question_index == i));
    assert_ne!(
        read(&a.output_dir.join("run-01/log.jsonl")),
        read(&a.output_dir.join("run-02/log.jsonl"))
    );
}

#[test]
fn interrupted_run_resumes_to_the_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let base = fixture_config(dir.path(), 25, 1);
    let full = with_output(base.clone(), dir.path().join("full"), 4);
    harness::run_assessment(&full, &RunOptions::default()).unwrap();
    let expected = read(&full.output_dir.join("run-01/log.jsonl"));

    let cut = with_output(base, dir.path().join("cut"), 4);
    harness::run_assessment(&cut, &RunOptions::default()).unwrap();
    let log_path = cut.output_dir.join("run-01/log.jsonl");
    let lines: Vec<&[u8]> = expected.split_inclusive(|b| *b == b'\n').collect();
    let mut partial: Vec<u8> = lines[..11].concat();
    partial.extend_from_slice(&lines[11][..lines[11].len() / 2]);
    std::fs::write(&log_path, partial).unwrap();
    std::fs::remove_file(cut.output_dir.join("summary.json")).unwrap();

    let err = harness::run_assessment(&cut, &RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    let wrong = RunOptions {
        resume: Some("0000".into()),
    };
    assert_eq!(harness::run_assessment(&cut, &wrong).unwrap_err().exit_code(), 2);

    let token = resume_token(&cut.fingerprint());
    let outcome = harness::run_assessment(
        &cut,
        &RunOptions {
            resume: Some(token.clone()),
        },
    )
    .unwrap();
    assert_eq!(outcome.resume_token, token);
    assert_eq!(read(&log_path), expected);
    let timings = std::fs::read_to_string(cut.output_dir.join("run-01/timings.jsonl")).unwrap();
    assert_eq!(timings.lines().count(), 25);
    assert!(cut.output_dir.join("summary.json").exists());
}

#[test]
fn outage_keeps_the_ordered_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let base = fixture_config(dir.path(), 12, 1);
    let good = with_output(base.clone(), dir.path().join("good"), 1);
    harness::run_assessment(&good, &RunOptions::default()).unwrap();
    let log = read_log(&good.output_dir.join("run-01/log.jsonl")).unwrap();
    let victim = &log[6].spec.focal.label;
    let first = log.iter().position(|r| &r.spec.focal.label == victim).unwrap();

    let script_path = dir.path().join("script.json");
    let mut script = MockScript::load(&script_path).unwrap();
    script.rules.insert(
        0,
        MockRule {
            role: Some("evaluated_model".into()),
            contains: vec![format!("overview of {victim} (")],
            fail: Some(MockFailure::Timeout),
            ..MockRule::default()
        },
    );
    std::fs::write(&script_path, serde_json::to_string(&script).unwrap()).unwrap();

    let bad = with_output(base, dir.path().join("bad"), 4);
    let err = harness::run_assessment(&bad, &RunOptions::default()).unwrap_err();
    assert!(matches!(err, HarnessError::Outage(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
    let kept = std::fs::read_to_string(bad.output_dir.join("run-01/log.jsonl")).unwrap();
    let full = std::fs::read_to_string(good.output_dir.join("run-01/log.jsonl")).unwrap();
    assert_eq!(kept.lines().count(), first);
    assert!(full.starts_with(&kept));
}

#[test]
fn reports_and_calibration_from_logs() {
    let dir = tempfile::tempdir().unwrap();
    let config = with_output(fixture_config(dir.path(), 20, 2), dir.path().join("out"), 4);
    let outcome = harness::run_assessment(&config, &RunOptions::default()).unwrap();
    let pattern = format!("{}/run-*/log.jsonl", config.output_dir.display());

    let again = harness::report_from_logs(
        &pattern,
        &dir.path().join("rep"),
        AvgQdSource::Calibration,
        HaluDokDenominator::Aligned,
    )
    .unwrap();
    assert_eq!(again.runs, outcome.summary.runs);
    assert_eq!(
        read(&dir.path().join("rep/metrics.csv")),
        read(&config.output_dir.join("metrics.csv"))
    );

    let exp = harness::report_from_logs(
        &pattern,
        &dir.path().join("exp"),
        AvgQdSource::Experiment,
        HaluDokDenominator::AllResponses,
    )
    .unwrap();
    let logs: Vec<_> = ["run-01", "run-02"]
        .iter()
        .flat_map(|r| read_log(&config.output_dir.join(r).join("log.jsonl")).unwrap())
        .collect();
    let mean_qd = logs.iter().map(|r| r.difficulty.q_d).sum::<f64>() / logs.len() as f64;
    for run in &exp.runs {
        assert!((run.report.avg_qd_reference - mean_qd).abs() < 1e-12);
        let c = run.report.counts;
        let dok = 100.0 * c.incorrect_facts as f64 / (3 * run.report.n_questions) as f64;
        assert!((run.report.halu_dok.unwrap() - dok).abs() < 1e-9);
    }

    let cal = harness::calibrate_from_logs(&pattern, &halubench::difficulty::WeightTable::builtin()).unwrap();
    let prov = cal.table.provenance.as_ref().unwrap();
    assert_eq!(prov.records, 40);
    assert_eq!(prov.source_logs.len(), 2);
    assert!(cal.table.calibrated_at.is_some());
    assert!(cal.table.stat_log_bounds.is_some());
}

#[test]
fn corrupted_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let config = with_output(fixture_config(dir.path(), 10, 1), dir.path().join("out"), 2);
    harness::run_assessment(&config, &RunOptions::default()).unwrap();
    let path = config.output_dir.join("run-01/log.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    lines[6] = lines[6].replace("\"question_index\"", "\"question_idx\"");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    match read_log(&path).unwrap_err() {
        HarnessError::SchemaMismatch { line, .. } => assert_eq!(line, 7),
        other => panic!("unexpected {other}"),
    }
    let err = harness::report_from_logs(
        path.to_str().unwrap(),
        &dir.path().join("r"),
        AvgQdSource::Calibration,
        HaluDokDenominator::Aligned,
    )
    .unwrap_err();
    assert!(err.to_string().contains("line 7"), "{err}");
}

#[test]
fn replay_without_recordings_is_an_outage() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = with_output(fixture_config(dir.path(), 3, 1), dir.path().join("out"), 1);
    config.kg.fixture = None;
    config.transport.mode = TransportMode::Replay;
    config.transport.fixture_dir = Some(dir.path().join("recordings"));
    config.transport.retries = 0;
    let err = harness::run_assessment(&config, &RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_halubench");
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(bin)
        .args(["gen-fixtures", "--out"])
        .arg(dir.path())
        .args(["--entities", "60", "--questions", "5", "--runs", "1"])
        .output()
        .unwrap();
    assert!(status.status.success());
    let config = dir.path().join("config.json");
    let ok = Command::new(bin).arg("validate-config").arg(&config).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));

    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("\"nli\": \"rules\"", "\"nli\": \"hashed\"");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, text).unwrap();
    let out = Command::new(bin).arg("validate-config").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("role nli"));

    let run = Command::new(bin)
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("run,weighted_accuracy"));
    let rerun = Command::new(bin)
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(rerun.status.code(), Some(2));

    let weights = dir.path().join("weights.json");
    let cal = Command::new(bin)
        .args(["calibrate", "--logs"])
        .arg(dir.path().join("out/run-*/log.jsonl"))
        .arg("--out")
        .arg(&weights)
        .output()
        .unwrap();
    assert!(cal.status.success(), "{}", String::from_utf8_lossy(&cal.stderr));
    halubench::difficulty::WeightTable::load(&weights).unwrap();
}
