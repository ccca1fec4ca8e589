use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Assembly, RunConfig};
use super::record::{DifficultyRecord, RunRecord, Timing};
use super::report::{summarize, write_summary, Summary};
use super::HarnessError;
use crate::difficulty::{self, DifficultyInputs};
use crate::kg::KgError;
use crate::question::GenerationError;
use crate::seed::derive_seed;
use crate::verification::{Classification, Transcript, VerificationError};

const STATE_FILE: &str = "state.json";
const LOG_FILE: &str = "log.jsonl";
const TIMINGS_FILE: &str = "timings.jsonl";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Token printed by an earlier invocation; required to continue into a
    /// non-empty output directory.
    pub resume: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub resume_token: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct State {
    fingerprint: String,
    resume_token: String,
    runs: usize,
    questions_per_run: usize,
}

pub fn resume_token(fingerprint: &str) -> String {
    let digest = Sha256::digest(format!("resume:{fingerprint}").as_bytes());
    hex::encode(&digest[..8])
}

pub fn run_dir(output_dir: &Path, run: usize) -> PathBuf {
    output_dir.join(format!("run-{run:02}"))
}

pub fn run_seed(seed: u64, run: usize) -> u64 {
    derive_seed(seed, &["run", &run.to_string()])
}

fn prepare_output(config: &RunConfig, options: &RunOptions) -> Result<String, HarnessError> {
    let dir = &config.output_dir;
    let fingerprint = config.fingerprint();
    let token = resume_token(&fingerprint);
    let non_empty = dir.is_dir()
        && std::fs::read_dir(dir)
            .map_err(|e| HarnessError::io(dir, e))?
            .next()
            .is_some();
    if non_empty {
        let Some(given) = &options.resume else {
            return Err(HarnessError::Config(format!(
                "output directory {} is not empty; pass --resume with its token to continue",
                dir.display()
            )));
        };
        let state_path = dir.join(STATE_FILE);
        let state: State = std::fs::read_to_string(&state_path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .ok_or_else(|| HarnessError::Config(format!("{} is missing or unreadable", state_path.display())))?;
        if state.fingerprint != fingerprint {
            return Err(HarnessError::Config(
                "the configuration changed since the interrupted run".into(),
            ));
        }
        if given != &state.resume_token {
            return Err(HarnessError::Config(
                "resume token does not match the output directory".into(),
            ));
        }
        return Ok(token);
    }
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let state = State {
        fingerprint,
        resume_token: token.clone(),
        runs: config.runs,
        questions_per_run: config.questions_per_run,
    };
    let path = dir.join(STATE_FILE);
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&state).expect("state serializes") + "\n",
    )
    .map_err(|e| HarnessError::io(&path, e))?;
    Ok(token)
}

/// Keeps the longest prefix of complete, parseable, densely indexed lines and
/// truncates the file after it. Returns the kept records.
fn recover_log(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let mut records = Vec::new();
    let mut keep = 0usize;
    let mut offset = 0usize;
    while let Some(nl) = bytes[offset..].iter().position(|b| *b == b'\n') {
        let line = &bytes[offset..offset + nl];
        match serde_json::from_slice::<RunRecord>(line) {
            Ok(r) if r.question_index == records.len() => records.push(r),
            _ => break,
        }
        offset += nl + 1;
        keep = offset;
    }
    if keep < bytes.len() {
        log::warn!(
            "{}: dropping {} bytes after record {}",
            path.display(),
            bytes.len() - keep,
            records.len()
        );
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| HarnessError::io(path, e))?;
        f.set_len(keep as u64).map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(records)
}

/// Drops timing lines at or beyond `count`.
fn recover_timings(path: &Path, count: usize) -> Result<(), HarnessError> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let kept: Vec<String> = BufReader::new(file)
        .lines()
        .map_while(Result::ok)
        .filter(|l| {
            serde_json::from_str::<Timing>(l)
                .map(|t| t.question_index < count)
                .unwrap_or(false)
        })
        .collect();
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn generation_error(e: GenerationError) -> HarnessError {
    match e {
        GenerationError::Kg(KgError::EndpointUnavailable(m)) => HarnessError::Outage(m),
        other => HarnessError::Data(other.to_string()),
    }
}

fn verification_error(e: VerificationError) -> HarnessError {
    match e {
        VerificationError::Backend(b) => HarnessError::Outage(b.to_string()),
        other => HarnessError::Data(other.to_string()),
    }
}

fn millis(d: std::time::Duration) -> f64 {
    (d.as_secs_f64() * 1e6).round() / 1e3
}

/// Generates, asks, verifies and scores one question.
pub fn process_question(
    assembly: &Assembly,
    run_seed: u64,
    question_index: usize,
) -> Result<(RunRecord, Timing), HarnessError> {
    let started = Instant::now();
    let generated = assembly
        .generator
        .generate(run_seed, question_index)
        .map_err(generation_error)?;
    let spec = generated.spec;
    let mut transcript = Transcript::default();
    let response = assembly
        .evaluated
        .ask(spec.prompt_text.clone(), &mut transcript)
        .map_err(|e| HarnessError::Outage(e.to_string()))?;
    let verification = assembly
        .verifier
        .verify(&spec, &response, &assembly.tables, &mut transcript)
        .map_err(verification_error)?;

    let weights = &assembly.weights;
    let data = |e: difficulty::DifficultyError| HarnessError::Data(format!("question {question_index}: {e}"));
    let stats = spec
        .focal
        .statistics
        .ok_or_else(|| HarnessError::Data(format!("question {question_index} has no statistics")))?;
    let (relevance, ep, ep_norm) = difficulty::ep_norm(&stats, &spec.focal.type_id, weights).map_err(data)?;
    let hallucinated = verification.entity_verdict.classification == Classification::Hallucinated;
    let q_avg = if hallucinated {
        difficulty::entity_hallucination_complexity(&spec.focal.type_id, weights)
            .map_err(data)?
            .q_avg
    } else {
        difficulty::question_complexity(spec.relation_weights)
    };
    let inputs = DifficultyInputs::new(q_avg, ep_norm);
    let q_d = difficulty::question_difficulty(inputs, weights.alpha);

    let timing = Timing {
        question_index,
        total_ms: millis(started.elapsed()),
        calls: transcript
            .latencies
            .iter()
            .map(|(role, d)| (role.clone(), millis(*d)))
            .collect(),
    };
    let record = RunRecord {
        question_index,
        run_seed,
        spec,
        rejections: generated.rejections,
        batches_sampled: generated.batches_sampled,
        response,
        entity_verdict: verification.entity_verdict,
        score: verification.score,
        difficulty: DifficultyRecord {
            relevance,
            ep,
            ep_norm: inputs.ep_norm,
            q_avg: inputs.q_avg,
            hallucination_substitute: hallucinated,
            alpha: weights.alpha,
            q_d,
        },
        avg_qd_reference: weights.avg_qd,
        exchanges: transcript.exchanges,
    };
    Ok((record, timing))
}

fn append_line(file: &mut File, path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let mut line = serde_json::to_string(value).expect("record serializes");
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| HarnessError::io(path, e))?;
    file.flush().map_err(|e| HarnessError::io(path, e))
}

/// Runs questions `start..end` on a worker pool, appending records to the
/// log strictly in index order. On failure the records before the first
/// failing index are kept.
fn run_questions(
    assembly: &Assembly,
    run_seed: u64,
    range: std::ops::Range<usize>,
    workers: usize,
    log_path: &Path,
    timings_path: &Path,
) -> Result<(), HarnessError> {
    let open = |p: &Path| {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .map_err(|e| HarnessError::io(p, e))
    };
    let mut log = open(log_path)?;
    let mut timings = open(timings_path)?;
    let next = AtomicUsize::new(range.start);
    let abort = AtomicBool::new(false);
    let end = range.end;
    let workers = workers.clamp(1, range.len().max(1));

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort) = (&next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= end {
                    break;
                }
                let result = process_question(assembly, run_seed, i);
                if result.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut expected = range.start;
        let mut failure: Option<(usize, HarnessError)> = None;
        for (i, result) in rx {
            match result {
                Ok(done) => {
                    pending.insert(i, done);
                }
                Err(e) => {
                    log::error!("question {i}: {e}");
                    if failure.as_ref().is_none_or(|(j, _)| i < *j) {
                        failure = Some((i, e));
                    }
                }
            }
            while let Some((record, timing)) = pending.remove(&expected) {
                append_line(&mut log, log_path, &record)?;
                append_line(&mut timings, timings_path, &timing)?;
                expected += 1;
            }
        }
        match failure {
            Some((_, e)) => Err(e),
            None => Ok(()),
        }
    })
}

/// Runs every configured run, resuming where a previous invocation stopped,
/// then writes per-run reports, `summary.json` and `metrics.csv`.
pub fn run_assessment(config: &RunConfig, options: &RunOptions) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let token = prepare_output(config, options)?;
    let mut logs = Vec::new();
    for run in 1..=config.runs {
        let dir = run_dir(&config.output_dir, run);
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let log_path = dir.join(LOG_FILE);
        let timings_path = dir.join(TIMINGS_FILE);
        let existing = recover_log(&log_path)?;
        recover_timings(&timings_path, existing.len())?;
        if existing.len() < config.questions_per_run {
            log::info!("run {run}: questions {}..{}", existing.len(), config.questions_per_run);
            // Built per run so scripted backends start from a clean state.
            let assembly = Assembly::build(config)?;
            run_questions(
                &assembly,
                run_seed(config.seed, run),
                existing.len()..config.questions_per_run,
                config.max_concurrent_questions,
                &log_path,
                &timings_path,
            )?;
        } else if existing.len() > config.questions_per_run {
            return Err(HarnessError::Data(format!(
                "{} has more records than questions_per_run",
                log_path.display()
            )));
        }
        logs.push(log_path);
    }
    let summary = summarize(&logs, config.avg_qd_source, config.halu_dok_denominator)?;
    write_summary(&summary, &config.output_dir, true)?;
    Ok(RunOutcome {
        output_dir: config.output_dir.clone(),
        resume_token: token,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_is_stable() {
        assert_eq!(resume_token("abc"), resume_token("abc"));
        assert_ne!(resume_token("abc"), resume_token("abd"));
        assert_eq!(resume_token("abc").len(), 16);
    }

    #[test]
    fn run_seeds_differ() {
        assert_ne!(run_seed(1, 1), run_seed(1, 2));
        assert_eq!(run_seed(1, 3), run_seed(1, 3));
    }

    #[test]
    fn timings_are_trimmed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let lines: Vec<String> = (0..4)
            .map(|i| {
                serde_json::to_string(&Timing {
                    question_index: i,
                    total_ms: 1.0,
                    calls: vec![],
                })
                .unwrap()
            })
            .collect();
        std::fs::write(&p, lines.join("\n") + "\n{\"trunc").unwrap();
        recover_timings(&p, 2).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
