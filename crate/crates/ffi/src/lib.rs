//! C interface to the halubench scoring functions, weight tables, reports
//! and assessment runs.
//!
//! Every function returns an [`HbStatus`]. On failure the message is
//! available from [`hb_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned through `char **` must be released with
//! [`hb_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use halubench::difficulty::{self, DifficultyInputs, WeightTable};
use halubench::harness::{self, report, AvgQdSource, HarnessError, RunConfig, RunOptions, Summary};
use halubench::kg::EntityStatistics;
use halubench::metrics::{self, AssessmentReport, HaluDokDenominator};
use halubench::verification::similarity;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbStatus {
    Ok = 0,
    InvalidArgument = 1,
    ConfigError = 2,
    BackendOutage = 3,
    DataError = 4,
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbMetric {
    Accuracy = 0,
    WeightedAccuracy = 1,
    AbstainRate = 2,
    HaluBok = 3,
    HaluDok = 4,
    AssessmentQd = 5,
}

/// A loaded weight table.
pub struct HbWeightTable(WeightTable);

/// Per-run reports with their cross-run aggregate.
pub struct HbReport(Summary);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(status: HbStatus, message: impl Into<String>) -> HbStatus {
    set_error(message);
    status
}

fn harness_status(e: &HarnessError) -> HbStatus {
    match e.exit_code() {
        2 => HbStatus::ConfigError,
        3 => HbStatus::BackendOutage,
        _ => HbStatus::DataError,
    }
}

fn from_harness(e: HarnessError) -> HbStatus {
    fail(harness_status(&e), e.to_string())
}

fn guard(f: impl FnOnce() -> HbStatus) -> HbStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(HbStatus::Internal, "internal panic"),
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, HbStatus> {
    if p.is_null() {
        return Err(fail(HbStatus::InvalidArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(HbStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

macro_rules! check_out {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(HbStatus::InvalidArgument, concat!(stringify!($p), " is null"));
        })+
    };
}

macro_rules! try_arg {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn hb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn hb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Question difficulty from mean relation complexity, normalised entity
/// popularity and steepness `alpha`. Inputs are clamped to [0, 1].
#[no_mangle]
pub unsafe extern "C" fn hb_question_difficulty(q_avg: f64, ep_norm: f64, alpha: f64, out: *mut f64) -> HbStatus {
    guard(|| {
        check_out!(out);
        if !q_avg.is_finite() || !ep_norm.is_finite() || !alpha.is_finite() {
            return fail(HbStatus::InvalidArgument, "inputs must be finite");
        }
        *out = difficulty::question_difficulty(DifficultyInputs::new(q_avg, ep_norm), alpha);
        HbStatus::Ok
    })
}

/// Blended entity similarity from a semantic and a token score.
#[no_mangle]
pub unsafe extern "C" fn hb_entity_similarity(semantic: f64, token: f64, out: *mut f64) -> HbStatus {
    guard(|| {
        check_out!(out);
        if !(0.0..=1.0).contains(&semantic) || !(0.0..=1.0).contains(&token) {
            return fail(HbStatus::InvalidArgument, "scores must be in [0, 1]");
        }
        *out = similarity::entity_similarity(semantic, token);
        HbStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn hb_token_set_similarity(a: *const c_char, b: *const c_char, out: *mut f64) -> HbStatus {
    guard(|| {
        check_out!(out);
        let a = try_arg!(text(a, "a"));
        let b = try_arg!(text(b, "b"));
        *out = similarity::token_set_similarity(a, b);
        HbStatus::Ok
    })
}

/// Spearman and Kendall tau-b between `n` estimated and realised values.
#[no_mangle]
pub unsafe extern "C" fn hb_rank_correlations(
    estimated: *const f64,
    realized: *const f64,
    n: usize,
    spearman: *mut f64,
    kendall: *mut f64,
) -> HbStatus {
    guard(|| {
        check_out!(estimated, realized, spearman, kendall);
        let x = std::slice::from_raw_parts(estimated, n);
        let y = std::slice::from_raw_parts(realized, n);
        match metrics::rank_correlations(x, y) {
            Ok(r) => {
                *spearman = r.spearman_rho;
                *kendall = r.kendall_tau;
                HbStatus::Ok
            }
            Err(e) => fail(HbStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn hb_weight_table_default(out: *mut *mut HbWeightTable) -> HbStatus {
    guard(|| {
        check_out!(out);
        *out = Box::into_raw(Box::new(HbWeightTable(WeightTable::builtin())));
        HbStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn hb_weight_table_load(path: *const c_char, out: *mut *mut HbWeightTable) -> HbStatus {
    guard(|| {
        check_out!(out);
        let path = try_arg!(text(path, "path"));
        match WeightTable::load(Path::new(path)) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(HbWeightTable(t)));
                HbStatus::Ok
            }
            Err(e) => fail(HbStatus::ConfigError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn hb_weight_table_free(table: *mut HbWeightTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Difficulty of a question about an entity of `type_id` with the seven
/// statistics (page views, site links, linked entities, external ids, wiki
/// tokens, statements, references) and three relation weights.
#[no_mangle]
pub unsafe extern "C" fn hb_weight_table_difficulty(
    table: *const HbWeightTable,
    type_id: *const c_char,
    statistics: *const u64,
    relation_weights: *const f64,
    out: *mut f64,
) -> HbStatus {
    guard(|| {
        check_out!(table, statistics, relation_weights, out);
        let type_id = try_arg!(text(type_id, "type_id"));
        let table = &(*table).0;
        let mut stats = [0u64; 7];
        stats.copy_from_slice(std::slice::from_raw_parts(statistics, 7));
        let mut weights = [0f64; 3];
        weights.copy_from_slice(std::slice::from_raw_parts(relation_weights, 3));
        let stats = EntityStatistics::from_array(stats);
        match difficulty::ep_norm(&stats, type_id, table) {
            Ok((_, _, ep_norm)) => {
                let q_avg = difficulty::question_complexity(weights);
                *out = difficulty::question_difficulty(DifficultyInputs::new(q_avg, ep_norm), table.alpha);
                HbStatus::Ok
            }
            Err(e) => fail(HbStatus::DataError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn hb_weight_table_avg_qd(table: *const HbWeightTable, out: *mut f64) -> HbStatus {
    guard(|| {
        check_out!(table, out);
        *out = (*table).0.avg_qd;
        HbStatus::Ok
    })
}

/// Reads run logs matching `pattern`. `experiment_avg_qd` non-zero uses the
/// mean difficulty over all logs as the reference; `all_responses` non-zero
/// divides depth hallucinations by all questions instead of aligned ones.
#[no_mangle]
pub unsafe extern "C" fn hb_report_from_logs(
    pattern: *const c_char,
    experiment_avg_qd: i32,
    all_responses: i32,
    out: *mut *mut HbReport,
) -> HbStatus {
    guard(|| {
        check_out!(out);
        let pattern = try_arg!(text(pattern, "pattern"));
        let source = if experiment_avg_qd != 0 {
            AvgQdSource::Experiment
        } else {
            AvgQdSource::Calibration
        };
        let denominator = if all_responses != 0 {
            HaluDokDenominator::AllResponses
        } else {
            HaluDokDenominator::Aligned
        };
        let result = report::expand_glob(pattern).and_then(|logs| report::summarize(&logs, source, denominator));
        match result {
            Ok(s) => {
                *out = Box::into_raw(Box::new(HbReport(s)));
                HbStatus::Ok
            }
            Err(e) => from_harness(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn hb_report_free(report: *mut HbReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hb_report_run_count(report: *const HbReport, out: *mut usize) -> HbStatus {
    guard(|| {
        check_out!(report, out);
        *out = (*report).0.runs.len();
        HbStatus::Ok
    })
}

fn metric(r: &AssessmentReport, m: HbMetric) -> Option<f64> {
    match m {
        HbMetric::Accuracy => Some(r.accuracy),
        HbMetric::WeightedAccuracy => Some(r.weighted_accuracy),
        HbMetric::AbstainRate => Some(r.abstain_rate),
        HbMetric::HaluBok => r.halu_bok,
        HbMetric::HaluDok => r.halu_dok,
        HbMetric::AssessmentQd => Some(r.assessment_qd),
    }
}

/// One metric of one run. `*present` is 0 when the metric is undefined for
/// the run, e.g. hallucination rates when every response abstained.
#[no_mangle]
pub unsafe extern "C" fn hb_report_metric(
    report: *const HbReport,
    run: usize,
    which: HbMetric,
    value: *mut f64,
    present: *mut i32,
) -> HbStatus {
    guard(|| {
        check_out!(report, value, present);
        let runs = &(*report).0.runs;
        let Some(r) = runs.get(run) else {
            return fail(HbStatus::InvalidArgument, format!("run {run} out of range"));
        };
        match metric(&r.report, which) {
            Some(v) => {
                *value = v;
                *present = 1;
            }
            None => {
                *value = f64::NAN;
                *present = 0;
            }
        }
        HbStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn hb_report_to_json(report: *const HbReport, out: *mut *mut c_char) -> HbStatus {
    guard(|| {
        check_out!(report, out);
        let json = serde_json::to_string(&(*report).0).expect("summary serializes");
        *out = CString::new(json).expect("json has no NUL").into_raw();
        HbStatus::Ok
    })
}

/// Parses and validates a run config and builds every backend it names.
#[no_mangle]
pub unsafe extern "C" fn hb_validate_config(path: *const c_char) -> HbStatus {
    guard(|| {
        let path = try_arg!(text(path, "path"));
        match RunConfig::load(Path::new(path)).and_then(|c| harness::Assembly::build(&c).map(|_| ())) {
            Ok(()) => HbStatus::Ok,
            Err(e) => from_harness(e),
        }
    })
}

/// Runs the assessment described by a config file. `resume_token` may be
/// null for a fresh output directory. `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn hb_run_assessment(
    config_path: *const c_char,
    resume_token: *const c_char,
    out: *mut *mut HbReport,
) -> HbStatus {
    guard(|| {
        let path = try_arg!(text(config_path, "config_path"));
        let resume = if resume_token.is_null() {
            None
        } else {
            Some(try_arg!(text(resume_token, "resume_token")).to_owned())
        };
        let config = match RunConfig::load(Path::new(path)) {
            Ok(c) => c,
            Err(e) => return from_harness(e),
        };
        match harness::run_assessment(&config, &RunOptions { resume }) {
            Ok(outcome) => {
                if !out.is_null() {
                    *out = Box::into_raw(Box::new(HbReport(outcome.summary)));
                }
                HbStatus::Ok
            }
            Err(e) => from_harness(e),
        }
    })
}
