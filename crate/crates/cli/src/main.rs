// `tgavc` — one entrypoint over the whole workspace: synthetic-corpus
// generation, feature preparation, the named training regimes, file
// conversion, objective evaluation, and plot emission.
//
// Exit codes: 0 success, 1 rejected input (bad flags, bad config, bad
// request), 2 runtime failure (I/O, numerical abort).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::json;

use config::{ConfigBuilder, ENV_PREFIX};
use tgavc_core::error::Result;

#[derive(Parser)]
#[command(
    name = "tgavc",
    version,
    about = "Text-guided voice conversion at desk scale",
    after_help = "Configuration is layered: defaults < --config file (TOML or JSON) < \
                  TGAVC_SECTION_FIELD environment variables < flags. Every override is \
                  logged at startup and each subcommand writes the merged result to \
                  resolved_config.json beside its outputs. The full key schema lives in \
                  config.schema.json at the repository root."
)]
struct Cli {
    /// Config file (TOML, or JSON with a .json extension).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.lr_a=2e-4 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", action = ArgAction::Append)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every training subcommand.
#[derive(Args)]
struct TrainArgs {
    /// Corpus directory (holding manifest.jsonl).
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Precomputed feature directory from prepare-data; features are
    /// computed from the audio when omitted.
    #[arg(long, value_name = "DIR")]
    features: Option<PathBuf>,
    /// Output directory for the checkpoint, metrics log, and snapshot.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Training seed. Mandatory: every run must be reproducible.
    #[arg(long)]
    seed: u64,
    /// Total training steps (overrides train.max_steps).
    #[arg(long)]
    steps: Option<u64>,
    /// Pretrained style-encoder checkpoint.
    #[arg(long = "style-ckpt", value_name = "FILE")]
    style_ckpt: Option<PathBuf>,
    /// Pretrained synthesis checkpoint (required by --regime tgavcs).
    #[arg(long = "tts-ckpt", value_name = "FILE")]
    tts_ckpt: Option<PathBuf>,
    /// Checkpoint of an interrupted run of the same regime to continue.
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-speaker verification corpus.
    MakeToyCorpus {
        /// Directory to create the corpus in.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Precompute log-mel features for a corpus.
    PrepareData {
        /// Corpus directory (holding manifest.jsonl).
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Directory to write one .mel file per utterance into.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Pretrain the style encoder on the speaker-verification objective.
    PretrainStyle(TrainArgs),
    /// Train the text-encoder/style/decoder synthesis trio alone.
    TrainTts(TrainArgs),
    /// Train a conversion model under a named regime.
    Train {
        /// Training regime: tgavc, tgavcs, autovc, ge2e, or tts.
        #[arg(long)]
        regime: String,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Convert one utterance to a target speaker's style.
    Convert {
        /// Source WAV to convert.
        #[arg(long, value_name = "FILE")]
        source: PathBuf,
        /// Directory of target-speaker WAVs to enroll the style from.
        #[arg(long = "target-dir", value_name = "DIR")]
        target_dir: PathBuf,
        /// Conversion checkpoint (tgavc, tgavcs, or autovc).
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        /// Output WAV path; a .mel sidecar is written beside it.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score checkpoints on the held-out parallel conversion protocol.
    Evaluate {
        /// Checkpoint under test.
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        /// Baseline checkpoint scored side by side in the same report.
        #[arg(long = "baseline-ckpt", value_name = "FILE")]
        baseline_ckpt: Option<PathBuf>,
        /// Corpus directory (holding manifest.jsonl).
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Precomputed feature directory from prepare-data.
        #[arg(long, value_name = "DIR")]
        features: Option<PathBuf>,
        /// Output directory for eval_report.json and the snapshot.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Draw loss curves, mel triptychs, and MCD bars from run artifacts.
    Plots {
        /// Training metrics log (train_log.jsonl) to draw loss curves from.
        #[arg(long = "metrics-log", value_name = "FILE")]
        metrics_log: Option<PathBuf>,
        /// Evaluation report JSON; its MCD numbers feed the bar chart
        /// (repeatable).
        #[arg(long = "report", value_name = "FILE", action = ArgAction::Append)]
        reports: Vec<PathBuf>,
        /// One triptych as NAME=source.mel,converted.mel,target.mel
        /// (repeatable).
        #[arg(long = "triptych", value_name = "NAME=SRC,CONV,TGT", action = ArgAction::Append)]
        triptychs: Vec<String>,
        /// Output directory for the images.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn build_config(cli: &Cli) -> Result<ConfigBuilder> {
    let mut builder = ConfigBuilder::new();
    if let Some(file) = &cli.config {
        builder.apply_file(file)?;
    }
    builder.apply_env()?;
    for spec in &cli.set {
        builder.apply_set(spec)?;
    }
    Ok(builder)
}

fn run(cli: Cli) -> Result<()> {
    let mut builder = build_config(&cli)?;

    // Subcommand sugar flags land in the same tree as any other override
    // so the snapshot and the provenance log cover them too.
    match &cli.command {
        Command::PretrainStyle(args) => {
            builder.apply_flag("train.regime", json!("ge2e"), "subcommand pretrain-style")?;
            apply_train_flags(&mut builder, args)?;
        }
        Command::TrainTts(args) => {
            builder.apply_flag("train.regime", json!("tts"), "subcommand train-tts")?;
            apply_train_flags(&mut builder, args)?;
        }
        Command::Train { regime, args } => {
            builder.apply_flag("train.regime", json!(regime), "flag --regime")?;
            apply_train_flags(&mut builder, args)?;
        }
        _ => {}
    }

    let (cfg, provenance) = builder.finish()?;
    for line in &provenance {
        log::info!("config: {line}");
    }

    match cli.command {
        Command::MakeToyCorpus { out } => commands::make_toy_corpus(&cfg, &out),
        Command::PrepareData { corpus, out } => commands::prepare_data(&cfg, &corpus, &out),
        Command::PretrainStyle(args) => commands::run_training(&cfg, "pretrain-style", &args),
        Command::TrainTts(args) => commands::run_training(&cfg, "train-tts", &args),
        Command::Train { args, .. } => commands::run_training(&cfg, "train", &args),
        Command::Convert { source, target_dir, ckpt, out } => {
            commands::convert(&cfg, &source, &target_dir, &ckpt, &out)
        }
        Command::Evaluate { ckpt, baseline_ckpt, corpus, features, out } => {
            commands::evaluate(&cfg, &ckpt, baseline_ckpt.as_deref(), &corpus, features.as_deref(), &out)
        }
        Command::Plots { metrics_log, reports, triptychs, out } => {
            commands::plots(&cfg, metrics_log.as_deref(), &reports, &triptychs, &out)
        }
    }
}

fn apply_train_flags(builder: &mut ConfigBuilder, args: &TrainArgs) -> Result<()> {
    builder.apply_flag("train.seed", json!(args.seed), "flag --seed")?;
    if let Some(steps) = args.steps {
        builder.apply_flag("train.max_steps", json!(steps), "flag --steps")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    log::debug!("environment prefix: {ENV_PREFIX}");
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
