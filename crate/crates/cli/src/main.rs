use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vqa_harness::layout::{self, SerializeMode, SerializerOptions};
use vqa_harness::ocr::{OcrCorpus, OcrFormat};
use vqa_harness::run::{
    self, emit_report, load_run_meta, read_run_log, ExecuteOptions, Experiment, ExperimentConfig,
    RunError,
};

#[derive(Parser)]
#[command(
    name = "harness",
    version,
    about = "OCR-augmented VQA evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute (or resume) every trial of an experiment and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many pending trials; the run can be resumed later.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Rebuild the report of an existing run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Print the trial count and plan hash of an experiment.
    Plan {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check an OCR corpus against the schema.
    ValidateOcr {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: OcrFormat,
    },
    /// Print the serialized text of one image.
    Serialize {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        image: String,
        #[arg(long, default_value = "plain")]
        mode: SerializeMode,
        #[arg(long, default_value = "canonical")]
        format: OcrFormat,
    },
}

const CONFIG_ERROR: u8 = 1;
const TRIAL_ERRORS: u8 = 2;
const FATAL_IO: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl ToString) -> Failure {
    Failure {
        code: CONFIG_ERROR,
        message: message.to_string(),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: FATAL_IO,
        message: format!("{}: {e}", path.display()),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|e| match e {
        run::ConfigError::Io { .. } => Failure {
            code: FATAL_IO,
            message: e.to_string(),
        },
        other => config_error(other),
    })
}

fn read_corpus(path: &Path, format: OcrFormat) -> Result<OcrCorpus, Failure> {
    let raw = std::fs::read(path).map_err(|e| io_error(path, e))?;
    OcrCorpus::read(&raw, format).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn run(cmd: Command) -> Result<u8, Failure> {
    match cmd {
        Command::Run { config, stop_after } => {
            let exp = Experiment::load(load_config(&config)?)?;
            let outcome = exp.execute(&ExecuteOptions { stop_after })?;
            let report = exp.report(&outcome)?;
            print!("{}", report.accuracy_grid);
            eprintln!(
                "{} of {} trials complete ({} resumed, {} executed, {} failed); output in {}",
                outcome.records.len(),
                exp.plan().len(),
                outcome.resumed,
                outcome.executed,
                outcome.errors.len(),
                exp.output_dir().display()
            );
            for e in outcome.errors.iter().take(5) {
                eprintln!(
                    "  {} {} {} {}: {}",
                    e.trial.dataset,
                    e.trial.sample_id,
                    e.trial.model_id,
                    e.trial.ocr_source,
                    e.message
                );
            }
            Ok(if outcome.errors.is_empty() {
                0
            } else {
                TRIAL_ERRORS
            })
        }
        Command::Report { run: dir } => {
            let meta = load_run_meta(&dir)?;
            let log_path = dir.join(run::RECORDS_FILE);
            let log = read_run_log(&log_path)?.ok_or_else(|| Failure {
                code: FATAL_IO,
                message: format!("{}: no run log", log_path.display()),
            })?;
            if log.header.plan_hash != meta.plan_hash {
                return Err(config_error(format!(
                    "run log plan {} does not match run metadata plan {}",
                    log.header.plan_hash, meta.plan_hash
                )));
            }
            let report = emit_report(&log.records, &meta, &dir)?;
            print!("{}", report.accuracy_grid);
            Ok(0)
        }
        Command::Plan { config } => {
            let exp = Experiment::load(load_config(&config)?)?;
            println!("trials: {}", exp.plan().len());
            println!("cells: {}", exp.plan().cell_count());
            println!("plan_hash: {}", exp.plan().plan_hash);
            Ok(0)
        }
        Command::ValidateOcr { corpus, format } => {
            let c = read_corpus(&corpus, format)?;
            let tokens: usize = c.documents().map(|d| d.tokens.len()).sum();
            println!("ok: {} documents, {tokens} tokens", c.len());
            Ok(0)
        }
        Command::Serialize {
            corpus,
            image,
            mode,
            format,
        } => {
            let c = read_corpus(&corpus, format)?;
            let doc = c
                .get(&image)
                .ok_or_else(|| config_error(format!("no document for image `{image}`")))?;
            let opts = SerializerOptions {
                mode,
                ..SerializerOptions::default()
            };
            println!("{}", layout::serialize(doc, &opts));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    // Usage errors share the config-error code; 2 means failed trials.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CONFIG_ERROR } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
