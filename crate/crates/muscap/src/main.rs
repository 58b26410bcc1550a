use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use muscap::commands;
use muscap::config::RunConfig;
use muscap::data::{default_vocab, SynthConfig};
use muscap::error::Error;

#[derive(Parser)]
#[command(name = "muscap", about = "Music playlist captioning", version)]
struct Cli {
    /// Print the default configuration JSON and exit.
    #[arg(long, global = true)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration JSON; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the config's training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a JSON report.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Generate captions for playlists in a manifest.
    Caption {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Caption only this playlist.
        #[arg(long)]
        playlist_id: Option<String>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Report caption metrics for a checkpoint against a manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "synthetic")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        playlists: usize,
        #[arg(long, default_value_t = 3)]
        tracks: usize,
        #[arg(long, default_value_t = 3)]
        description_len: usize,
        #[arg(long, default_value_t = 12)]
        bands: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
    },
    /// Summarize an embedding file or checkpoint.
    Inspect { path: PathBuf },
}

fn load_config(common: &Common) -> muscap::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.training.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> muscap::Result<()> {
    if cli.print_defaults {
        println!(
            "{}",
            serde_json::to_string_pretty(&RunConfig::default()).expect("serialize")
        );
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given (try --help)".into()));
    };
    match command {
        Command::Train { common } => {
            let config = load_config(&common)?;
            let report = commands::cmd_train(&config)?;
            eprintln!(
                "trained {} epochs, best epoch {} (val loss {:.6}), checkpoint {}",
                report.train_loss.len(),
                report.best_epoch,
                report.best_val_loss,
                config.paths.checkpoint_out
            );
        }
        Command::Caption {
            common,
            checkpoint,
            manifest,
            embeddings,
            playlist_id,
            max_len,
        } => {
            let config = load_config(&common)?;
            let out = commands::cmd_caption(
                &checkpoint.unwrap_or_else(|| config.paths.checkpoint_out.clone().into()),
                &manifest.unwrap_or_else(|| config.paths.manifest.clone().into()),
                &embeddings.unwrap_or_else(|| config.paths.embeddings.clone().into()),
                playlist_id.as_deref(),
                max_len,
            )?;
            print!("{out}");
        }
        Command::Eval {
            common,
            checkpoint,
            manifest,
            embeddings,
        } => {
            let config = load_config(&common)?;
            let metrics = commands::cmd_eval(
                &checkpoint.unwrap_or_else(|| config.paths.checkpoint_out.clone().into()),
                &manifest.unwrap_or_else(|| config.paths.manifest.clone().into()),
                &embeddings.unwrap_or_else(|| config.paths.embeddings.clone().into()),
            )?;
            println!(
                "{}",
                serde_json::to_string_pretty(&metrics).expect("serialize")
            );
        }
        Command::Synth {
            common,
            out_dir,
            playlists,
            tracks,
            description_len,
            bands,
            frames,
        } => {
            let config = load_config(&common)?;
            let synth = SynthConfig {
                seed: config.training.seed,
                num_playlists: playlists,
                tracks_per_playlist: tracks,
                vocab: default_vocab(),
                d_a: config.dims.d_a,
                d_w: config.dims.d_w,
                bands,
                frames,
                description_len,
                num_labels: config.dims.labels,
            };
            let msg = commands::cmd_synth(&synth, &out_dir)?;
            print!("{msg}");
        }
        Command::Inspect { path } => {
            let out = commands::cmd_inspect(&path)?;
            print!("{out}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) => 2,
                Error::Numeric(_) => 4,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}
