//! `htprior` command-line tool: thin argument parsing over the library's
//! command layer.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use htprior::commands::{self, DetectMode};

#[derive(Parser)]
#[command(name = "htprior", version, about = "Hough-transform line priors: data, training, evaluation, detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the Line-Circle dataset (744/256/500 split).
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing dataset directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split (AP + PR table).
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        split: Split,
        #[arg(long)]
        data: PathBuf,
        /// Also write report.txt and pr.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect lines in a PGM image.
    Detect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Checkpoint (learned mode only).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of Hough peaks to extract in classic mode.
        #[arg(long, default_value_t = 5)]
        peaks: usize,
        /// Non-maximum suppression radius in bins.
        #[arg(long, default_value_t = 2)]
        nms: usize,
    },
    /// Compare analytic gradients against central differences.
    Gradcheck {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Learned,
    Classic,
}

fn run(cli: Cli) -> htprior::Result<()> {
    match cli.cmd {
        Cmd::GenData { seed, out, force } => commands::cmd_gen_data(seed, &out, force),
        Cmd::Train { config } => commands::cmd_train(&config).map(|_| ()),
        Cmd::Eval {
            ckpt,
            split,
            data,
            out,
        } => {
            let split = match split {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            };
            let report = commands::cmd_eval(&ckpt, split, &data, out.as_deref())?;
            print!("{report}");
            Ok(())
        }
        Cmd::Detect {
            image,
            mode,
            ckpt,
            out,
            peaks,
            nms,
        } => {
            let mode = match mode {
                Mode::Learned => DetectMode::Learned,
                Mode::Classic => DetectMode::Classic,
            };
            commands::cmd_detect(&image, mode, ckpt.as_deref(), &out, peaks, nms)
        }
        Cmd::Gradcheck { model, seed } => commands::cmd_gradcheck(&model, seed).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
