use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use radlabel_cli::commands::{self, ClassifyOptions};
use radlabel_cli::{CliError, RunConfig};
use radlabel_core::augment::AugmentMode;
use radlabel_core::corpus::Language;
use radlabel_core::promptgen::ShotStrategy;
use radlabel_core::splitter::Subset;

#[derive(Parser)]
#[command(name = "radlabel", version, about = "LLM labeling of radiology reports")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(short, long, env = "RADLABEL_CONFIG")]
    config: PathBuf,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load every configured dataset and print counts and finding supports.
    Ingest,
    /// Write a stratified train/dev/test manifest.
    Split {
        #[arg(long)]
        dataset: String,
    },
    /// Label a subset with the configured endpoint.
    Classify {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "test")]
        subset: Subset,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<ShotStrategy>,
        #[arg(long)]
        max_in_flight: Option<usize>,
    },
    /// Score a predictions file against the gold labels of a subset.
    Eval {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "test")]
        subset: Subset,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Translate the training subset and write an augmented training set.
    Augment {
        #[arg(long)]
        dataset: String,
        /// Target language tag or name.
        #[arg(long)]
        lang: Language,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AugmentMode>,
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// Write instruction/input/completion records for fine-tuning.
    ExportSft {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "train")]
        subset: Subset,
    },
}

fn parse_strategy(s: &str) -> Result<ShotStrategy, String> {
    match s {
        "uniform" => Ok(ShotStrategy::Uniform),
        "balanced" => Ok(ShotStrategy::Balanced),
        _ => Err(format!("unknown strategy `{s}` (uniform, balanced)")),
    }
}

fn parse_mode(s: &str) -> Result<AugmentMode, String> {
    match s {
        "union" => Ok(AugmentMode::Union),
        "translated" | "translated_only" => Ok(AugmentMode::TranslatedOnly),
        _ => Err(format!("unknown mode `{s}` (union, translated)")),
    }
}

/// Exit status for runs that finished but had backend failures.
const PARTIAL: u8 = 2;

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.generation.seed = seed;
    }
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = dir;
    }

    match cli.command {
        Command::Ingest => {
            for summary in commands::ingest(&cfg)? {
                print!("{summary}");
            }
        }
        Command::Split { dataset } => {
            let (path, split) = commands::split(&cfg, &dataset)?;
            let [tr, dv, te] = split.counts();
            println!("{}: train {tr}, dev {dv}, test {te} -> {}", dataset, path.display());
        }
        Command::Classify {
            dataset,
            subset,
            shots,
            strategy,
            max_in_flight,
        } => {
            if let Some(s) = strategy {
                cfg.classify.shot_strategy = s;
            }
            if let Some(m) = max_in_flight {
                if m == 0 {
                    return Err(CliError::Config("max_in_flight must be >= 1".into()));
                }
                cfg.classify.max_in_flight = m;
            }
            let opts = ClassifyOptions {
                subset,
                shots: shots.unwrap_or(cfg.classify.shots),
            };
            let out = commands::classify(&cfg, &dataset, &opts)?;
            let s = &out.summary;
            println!(
                "{} reports, invalid rate {:.4}, {} backend errors, {} ms -> {}",
                s.n_reports,
                s.invalid_rate,
                s.backend_errors,
                s.wall_time_ms,
                out.predictions_path.display()
            );
            if s.backend_errors > 0 {
                return Ok(ExitCode::from(PARTIAL));
            }
        }
        Command::Eval {
            dataset,
            subset,
            predictions,
        } => {
            let out = commands::eval(&cfg, &dataset, subset, &predictions)?;
            print!("{}", out.report.to_table());
        }
        Command::Augment {
            dataset,
            lang,
            mode,
            max_tokens,
        } => {
            if let Some(m) = max_tokens {
                if m == 0 {
                    return Err(CliError::Config("max_tokens must be >= 1".into()));
                }
                cfg.augment.max_tokens = m;
            }
            let mode = mode.unwrap_or(cfg.augment.mode);
            let out = commands::augment(&cfg, &dataset, lang, mode)?;
            println!(
                "{} records ({} translations kept, {} over length, {} failed) -> {}",
                out.n_records,
                out.kept,
                out.dropped,
                out.failed,
                out.dataset_path.display()
            );
            if out.failed > 0 {
                return Ok(ExitCode::from(PARTIAL));
            }
        }
        Command::ExportSft { dataset, subset } => {
            let (path, n) = commands::export_sft(&cfg, &dataset, subset)?;
            println!("{n} records -> {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
