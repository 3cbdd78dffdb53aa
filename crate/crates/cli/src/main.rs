use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curvete::experiment::{build_report, Experiment, ExperimentManifest, Outcome, Which};
use curvete::training::AblationMode;
use curvete::{Error, Result};

#[derive(Parser)]
#[command(name = "curvete", version, about = "Anti-curriculum self-supervised pretraining with class decomposition")]
struct Cli {
    /// Experiment manifest (TOML).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the manifest output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the convolutional autoencoder and extract features.
    PretrainCae,
    /// Build a granularity ladder by k-means.
    Decompose {
        #[arg(long)]
        which: Which,
    },
    /// Pretext training along the anti-curriculum.
    Pretext,
    /// Downstream fine-tuning with class decomposition.
    Finetune,
    /// Score a checkpoint on the test split.
    Evaluate {
        /// Defaults to the fine-tuned model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and score one ablation arm.
    Ablate {
        #[arg(long)]
        mode: AblationMode,
    },
    /// Summarize metrics under the output directory.
    Report,
}

fn experiment(cli: &Cli) -> Result<Experiment> {
    let path = cli
        .manifest
        .as_ref()
        .ok_or_else(|| Error::validation("--manifest", "required for this command"))?;
    let mut manifest = ExperimentManifest::load(path)?;
    if let Some(seed) = cli.seed {
        manifest.seed = seed;
    }
    Experiment::new(manifest, cli.out.clone())
}

fn run(cli: &Cli) -> Result<()> {
    let (verb, outcome) = match &cli.command {
        Command::Report => {
            let dir = match (&cli.out, &cli.manifest) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => experiment(cli)?.out_dir().to_path_buf(),
                (None, None) => return Err(Error::validation("--out", "report needs --out or --manifest")),
            };
            print!("{}", build_report(&dir)?);
            return Ok(());
        }
        Command::PretrainCae => ("pretrain-cae", experiment(cli)?.pretrain_cae()?),
        Command::Decompose { which } => ("decompose", experiment(cli)?.decompose(*which)?),
        Command::Pretext => ("pretext", experiment(cli)?.pretext()?),
        Command::Finetune => ("finetune", experiment(cli)?.finetune()?),
        Command::Evaluate { checkpoint } => ("evaluate", experiment(cli)?.evaluate(checkpoint.as_deref())?),
        Command::Ablate { mode } => ("ablate", experiment(cli)?.ablate(*mode)?),
    };
    match outcome {
        Outcome::Computed => println!("{verb}: done"),
        Outcome::UpToDate => println!("{verb}: up to date"),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. } | Error::Config { .. } => 2,
        Error::Dependency { .. } => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
