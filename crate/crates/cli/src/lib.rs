//! Subcommands of the `proxyattn` binary.

mod commands;
mod export;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use proxyattn::Error;

pub use commands::{cmd_eval, cmd_gradcheck, cmd_params, cmd_synth, cmd_train, GradcheckOutcome, GRADCHECK_MAX_PARAMS, GRADCHECK_TOL};
pub use export::{cmd_export_attention, ExportSummary, HeadSelect};

/// Environment variable that overrides every `--seed`.
pub const SEED_ENV: &str = "PROXYATTN_SEED";

#[derive(Parser, Debug)]
#[command(name = "proxyattn", version, about = "2D-to-3D pose lifting with an implicit pose proxy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        sequences: usize,
        #[arg(long, default_value_t = 243)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split recorded in the manifest: train or test.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train a model, writing a JSON-lines log and per-epoch checkpoints.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Evaluate on this dataset instead of the training data.
        #[arg(long)]
        eval_data: Option<PathBuf>,
    },
    /// Print the metric report of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Average with the prediction on the mirrored input.
        #[arg(long)]
        flip_tta: bool,
    },
    /// Compare backpropagated gradients with central differences.
    Gradcheck {
        /// Run configuration; the small built-in configuration if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Export attention matrices of one layer, joint and head as CSV.
    ExportAttention {
        #[arg(long)]
        ckpt: PathBuf,
        /// 2D keypoint sequence (tensor stem or JSON fixture).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        joint: usize,
        /// Head index, or `mean` to average over heads.
        #[arg(long)]
        head: HeadSelect,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the parameter count per module.
    Params {
        /// Run configuration; the full-size default if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// A failed invocation and its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let internal = matches!(
            e,
            Error::NonScalarLoss(_)
                | Error::NonFiniteLoss { .. }
                | Error::DuplicateParameter(_)
                | Error::UnknownParameter(_)
                | Error::ShapeMismatch { .. }
                | Error::InvalidShape { .. }
                | Error::Invalid(_)
        );
        CliError {
            code: if internal { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// `PROXYATTN_SEED` if set, else `flag`.
pub fn resolve_seed(flag: u64) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::user(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<i32> {
    match command {
        Command::Synth {
            out: dir,
            sequences,
            frames,
            seed,
            split,
        } => cmd_synth(&dir, sequences, frames, resolve_seed(seed)?, &split, out).map(|_| 0),
        Command::Train {
            data,
            out: dir,
            config,
            resume,
            eval_data,
        } => cmd_train(&data, &dir, &config, resume.as_deref(), eval_data.as_deref(), out).map(|_| 0),
        Command::Eval { data, ckpt, flip_tta } => cmd_eval(&data, &ckpt, flip_tta, out).map(|_| 0),
        Command::Gradcheck {
            config,
            seed,
            inject_fault,
        } => {
            let outcome = cmd_gradcheck(config.as_deref(), resolve_seed(seed)?, inject_fault.as_deref(), out)?;
            Ok(if outcome.passed { 0 } else { 2 })
        }
        Command::ExportAttention {
            ckpt,
            input,
            layer,
            joint,
            head,
            out: dir,
        } => cmd_export_attention(&ckpt, &input, layer, joint, head, &dir, out).map(|_| 0),
        Command::Params { config } => cmd_params(config.as_deref(), out).map(|_| 0),
    }
}
