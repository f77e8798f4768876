use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mimic_cli::{
    cmd_corrupt_preview, cmd_decode, cmd_eval, cmd_features_dump, cmd_synth, cmd_train, exit_code,
    CliError, RunConfig,
};

/// Toy speech lab: synthesize audio for a word vocabulary, corrupt it, and
/// continually train and evaluate a small transducer recognizer.
#[derive(Parser)]
#[command(name = "mimic", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (flat key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic audio for template x slot-word texts.
    Synth,
    /// Apply the corruption policy to a manifest for listening checks.
    CorruptPreview,
    /// Dump log-Mel (optionally stacked) features for one WAV.
    FeaturesDump,
    /// Run the configured multi-stage training recipe.
    Train,
    /// Decode a manifest to hypothesis text.
    Decode,
    /// Decode and score a manifest; writes the WER/NWER report.
    Eval,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.ok_or_else(|| {
        CliError::Config(vec!["--config PATH is required".into()])
    })?;
    let cfg = RunConfig::load(&config_path, cli.seed, cli.out)?;
    match cli.command {
        Command::Synth => {
            let out = cmd_synth(&cfg)?;
            println!("rendered {} utterances; manifest at {}", out.rendered, out.manifest.display());
        }
        Command::CorruptPreview => {
            let out = cmd_corrupt_preview(&cfg)?;
            println!("corruption outcomes at {}", out.display());
        }
        Command::FeaturesDump => {
            let out = cmd_features_dump(&cfg)?;
            println!("features at {}", out.display());
        }
        Command::Train => {
            let out = cmd_train(&cfg)?;
            println!(
                "final checkpoint at {}; summary at {}",
                out.final_checkpoint.display(),
                out.summary.display()
            );
        }
        Command::Decode => {
            let out = cmd_decode(&cfg)?;
            println!("hypotheses at {}", out.display());
        }
        Command::Eval => {
            let out = cmd_eval(&cfg)?;
            match out.nwer {
                Some(n) => println!(
                    "wer {:.4} nwer {:.2}; report at {}",
                    out.summary.wer,
                    n,
                    out.report.display()
                ),
                None => println!("wer {:.4}; report at {}", out.summary.wer, out.report.display()),
            }
        }
    }
    Ok(())
}
