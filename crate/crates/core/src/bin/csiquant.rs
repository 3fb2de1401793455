use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use csiquant::cli::{self, BerArgs, EvalArgs, GenerateArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "csiquant", version, about = "Bit-level CSI feedback autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic channel dataset.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train an autoencoder and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint, including its optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report NMSE through the bit codec.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the concatenated feedback payloads here.
        #[arg(long)]
        dump_codewords: Option<PathBuf>,
    },
    /// Link-level BER with MRT precoding from recovered and perfect CSI.
    Ber {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated SNR values in dB.
        #[arg(long)]
        snr: Option<String>,
        #[arg(long)]
        symbols: Option<usize>,
        #[arg(long)]
        noise_seed: Option<u64>,
    },
}

fn run(cmd: Command, out: &mut dyn Write) -> csiquant::Result<()> {
    match cmd {
        Command::Generate { config, out: path, count, seed } => {
            cli::cmd_generate(&GenerateArgs { config, out: path, count, seed }, out)
        }
        Command::Train { config, data, val, out: path, steps, resume } => {
            cli::cmd_train(&TrainArgs { config, data, val, out: path, steps, resume }, out).map(drop)
        }
        Command::Eval { ckpt, data, dump_codewords } => {
            cli::cmd_eval(&EvalArgs { ckpt, data, dump_codewords }, out).map(drop)
        }
        Command::Ber { ckpt, data, config, snr, symbols, noise_seed } => {
            let snr = snr.as_deref().map(cli::parse_snr_list).transpose()?;
            cli::cmd_ber(&BerArgs { ckpt, data, config, snr, symbols, noise_seed }, out).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Cli::parse();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(args.command, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
