use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use halubench::difficulty::WeightTable;
use halubench::harness::{self, report, Assembly, AvgQdSource, HarnessError, RunConfig, RunOptions};
use halubench::metrics::HaluDokDenominator;
use halubench::synthetic;
use halubench::tables::Tables;

#[derive(Parser)]
#[command(name = "halubench", version, about = "Knowledge-graph hallucination benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an assessment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Token printed by the interrupted invocation.
        #[arg(long)]
        resume: Option<String>,
    },
    /// Fit a weight table to run logs.
    Calibrate {
        /// Glob matching run logs, e.g. `out/run-*/log.jsonl`.
        #[arg(long)]
        logs: String,
        #[arg(long)]
        out: PathBuf,
        /// Table supplying alpha, mix, statistic weights and unobserved entries.
        #[arg(long)]
        prior: Option<PathBuf>,
    },
    /// Recompute reports from run logs.
    Report {
        #[arg(long)]
        logs: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "calibration")]
        avg_qd: AvgQdArg,
        #[arg(long, value_enum, default_value = "aligned")]
        halu_dok_denominator: DenominatorArg,
    },
    /// Check a config and build every backend it names.
    ValidateConfig { config: PathBuf },
    /// Write a synthetic fixture set and a config that runs it offline.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        entities: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 150)]
        questions: usize,
        #[arg(long, default_value_t = 2)]
        runs: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AvgQdArg {
    Calibration,
    Experiment,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DenominatorArg {
    Aligned,
    AllResponses,
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, resume } => {
            let config = RunConfig::load(&config)?;
            let token = harness::run::resume_token(&config.fingerprint());
            eprintln!("resume token: {token}");
            let outcome = harness::run_assessment(&config, &RunOptions { resume })?;
            print!("{}", report::metrics_csv(&outcome.summary));
        }
        Command::Calibrate { logs, out, prior } => {
            let prior = match prior {
                Some(p) => WeightTable::load(&p).map_err(|e| HarnessError::Config(e.to_string()))?,
                None => WeightTable::builtin(),
            };
            let calibration = harness::calibrate_from_logs(&logs, &prior)?;
            for flag in &calibration.flags {
                eprintln!("insufficient data: {flag}");
            }
            std::fs::write(&out, calibration.table.to_json()).map_err(|e| HarnessError::Io {
                path: out.display().to_string(),
                source: e,
            })?;
        }
        Command::Report {
            logs,
            out_dir,
            avg_qd,
            halu_dok_denominator,
        } => {
            let source = match avg_qd {
                AvgQdArg::Calibration => AvgQdSource::Calibration,
                AvgQdArg::Experiment => AvgQdSource::Experiment,
            };
            let denominator = match halu_dok_denominator {
                DenominatorArg::Aligned => HaluDokDenominator::Aligned,
                DenominatorArg::AllResponses => HaluDokDenominator::AllResponses,
            };
            let summary = harness::report_from_logs(&logs, &out_dir, source, denominator)?;
            print!("{}", report::metrics_csv(&summary));
        }
        Command::ValidateConfig { config } => {
            let config = RunConfig::load(&config)?;
            Assembly::build(&config)?;
            println!("ok {}", config.fingerprint());
        }
        Command::GenFixtures {
            out,
            entities,
            seed,
            questions,
            runs,
        } => {
            let fixtures = synthetic::generate(entities, seed, &Tables::builtin());
            let path =
                synthetic::write_fixture_set(&out, &fixtures, seed, questions, runs).map_err(|e| HarnessError::Io {
                    path: out.display().to_string(),
                    source: e,
                })?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
