use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use cts_core::datagen::QuestionMethod;
use cts_orchestrator::{api, commands, RunConfig};

#[derive(Parser)]
#[command(name = "cts", version, about = "Train, evaluate and serve conversational tree search agents")]
struct Cli {
    /// Run configuration file (JSON).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect and check the dialog graph and its utterance banks.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Generate user data with a chat-completion model.
    Generate {
        #[command(subcommand)]
        command: GenerateCommand,
    },
    /// Analyse generated questions.
    Quality {
        #[command(subcommand)]
        command: QualityCommand,
    },
    /// Train an agent against the simulated user.
    Train {
        /// Continue from a full checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint on the test split.
    Evaluate {
        #[arg(long, required = true)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 500)]
        dialogs: usize,
        /// Evaluation seed; the run seed when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the study session API.
    Serve {
        #[arg(long, required = true)]
        checkpoint: PathBuf,
        /// Listen address; overrides the configuration.
        #[arg(long)]
        addr: Option<String>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Node, depth, degree and bank size table.
    Stats,
    /// Parse and cross-check graph and banks.
    Validate {
        /// Treat unreachable nodes as errors.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Subcommand)]
enum GenerateCommand {
    /// Question bank for every node.
    Questions {
        #[arg(long, value_parser = parse_method)]
        method: Option<QuestionMethod>,
    },
    /// Paraphrases for every answer.
    Responses,
}

#[derive(Subcommand)]
enum QualityCommand {
    /// Self-BLEU, similarity, answerability and length report.
    Report {
        /// Generated bank; defaults to the run's generated questions.
        #[arg(long)]
        generated: Option<PathBuf>,
        /// Human bank; defaults to the configured one.
        #[arg(long)]
        human: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> Result<QuestionMethod, String> {
    s.parse()
}

fn run(cli: Cli, config: RunConfig) -> anyhow::Result<()> {
    match cli.command {
        Command::Dataset {
            command: DatasetCommand::Stats,
        } => {
            print!("{}", commands::dataset_stats(&config)?.to_text_table());
        }
        Command::Dataset {
            command: DatasetCommand::Validate { strict },
        } => {
            let summary = commands::dataset_validate(&config, strict)?;
            for w in &summary.warnings {
                println!("warning: {w}");
            }
            println!("ok");
        }
        Command::Generate {
            command: GenerateCommand::Questions { method },
        } => {
            let s = commands::generate_questions(&config, method)?;
            println!("{} questions, {} failures -> {}", s.entries, s.failures, s.bank.display());
        }
        Command::Generate {
            command: GenerateCommand::Responses,
        } => {
            let s = commands::generate_responses(&config)?;
            println!("{} paraphrases, {} failures -> {}", s.entries, s.failures, s.bank.display());
        }
        Command::Quality {
            command: QualityCommand::Report { generated, human },
        } => {
            let report = commands::quality_report(&config, generated.as_deref(), human.as_deref())?;
            print!("{}", report.to_text_table());
        }
        Command::Train { resume } => {
            let s = commands::train(&config, resume.as_deref())?;
            println!("trained {} turns in {:.1}s -> {}", s.turns, s.seconds, s.checkpoint.display());
            if let Some(best) = &s.best {
                print!("{}", best.to_text_table());
            }
        }
        Command::Evaluate {
            checkpoint,
            dialogs,
            seed,
        } => {
            let report = commands::evaluate_checkpoint(&config, &checkpoint, dialogs, seed.unwrap_or(config.seed))?;
            print!("{}", report.to_text_table());
        }
        Command::Serve { checkpoint, addr } => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(api::serve(&config, &checkpoint, addr.as_deref()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let Some(path) = cli.config.clone() else {
        Cli::command()
            .error(ErrorKind::MissingRequiredArgument, "--config <CONFIG> is required")
            .exit();
    };
    let config = match RunConfig::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    };
    match run(cli, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
