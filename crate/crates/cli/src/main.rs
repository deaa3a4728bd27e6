mod commands;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use convrec_core::recommender::Procedure;

#[derive(Parser, Debug)]
#[command(name = "convrec", version, about = "Conversational movie recommendation")]
pub struct Cli {
    /// TOML configuration file; relative paths inside it are resolved
    /// against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true)]
    pub checkpoint_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub movies: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Corpus statistics.
    Stats {
        /// Dialogue corpus; defaults to `paths.corpus`.
        corpus: Option<PathBuf>,
        #[arg(long)]
        movies: Option<PathBuf>,
    },
    /// Pre-train the recommender on a ratings file.
    PretrainRecommender {
        #[arg(long)]
        procedure: Option<Procedure>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        movies: Option<PathBuf>,
    },
    /// Train the sentiment model and report validation agreement.
    TrainSentiment {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the dialogue model with the sentiment model frozen.
    TrainDialogue {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate sentiment and dialogue models on the validation split.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Chat on stdin/stdout, one seeker line at a time.
    Chat,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Allowed CORS origin; repeatable. Any origin when omitted.
        #[arg(long = "allow-origin")]
        allow_origin: Vec<String>,
    },
    /// Write a synthetic template corpus, movies, ratings and a config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        dialogues: usize,
        #[arg(long, default_value_t = 40)]
        movies: usize,
        #[arg(long, default_value_t = 2000)]
        users: usize,
        #[arg(long, default_value_t = 0.15)]
        density: f64,
    },
}

/// Invalid combination of arguments.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        1
    } else if matches!(e.downcast_ref::<convrec_core::Error>(), Some(convrec_core::Error::Diverged(_))) {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
