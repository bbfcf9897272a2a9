mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "vidgen", version, about = "Depth- and text-conditioned video diffusion")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// `key=value` with a dotted key, e.g. `train.steps=10`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Image,
    Video,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic moving-shape dataset.
    GenData,
    /// Train one stage.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Image-stage checkpoint; required for the video stage.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Continue from the checkpoint already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Generate one video.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene index used for the depth sequence and default caption.
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        caption: Option<String>,
        /// Also write each frame as a PPM image.
        #[arg(long)]
        ppm: bool,
    },
    /// Score generated videos against the dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every adapting variant briefly and compare them.
    Ablate {
        /// Image-stage checkpoint supplying the spatial weights.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        steps: usize,
    },
}

fn fail(category: &str, message: &str, code: u8) -> ExitCode {
    let body = serde_json::json!({ "error": { "category": category, "message": message } });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail("usage", e.to_string().trim(), 2);
        }
    };
    let result = match cli.command {
        Command::GenData => commands::gen_data(&cli.common),
        Command::Train { stage, init, resume } => commands::train(&cli.common, stage, init.as_deref(), resume),
        Command::Sample { checkpoint, index, caption, ppm } => {
            commands::sample(&cli.common, &checkpoint, index, caption.as_deref(), ppm)
        }
        Command::Eval { checkpoint } => commands::eval(&cli.common, &checkpoint),
        Command::Ablate { init, steps } => commands::ablate(&cli.common, init.as_deref(), steps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.category(), &e.to_string(), 1),
    }
}
