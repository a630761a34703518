use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcu_cli::commands::{cmd_eval, cmd_run, cmd_sweep, cmd_synth, Axis, Mode};
use mcu_cli::config::ExperimentConfig;
use mcu_cli::CliError;

/// MatrixConv unmixing experiments. Set MCU_LOG (error, warn, info,
/// debug, trace) to control verbosity.
#[derive(Parser)]
#[command(name = "mcu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cube with ground truth.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unmix one cube.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Directory written by `synth`; synthetic data is generated from
        /// the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat `run` over an SNR or loss-weight grid and several seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; `inf` is accepted for SNR.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value = "nba")]
        mode: Mode,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an estimate against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config(path: Option<&PathBuf>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config: c, out } => {
            let m = cmd_synth(&config(c.as_ref())?, &out)?;
            println!("config_hash {}\nsnr_realized_db {:.3}", m.config_hash, m.snr_realized_db);
        }
        Command::Run { config: c, mode, data, out } => {
            let res = cmd_run(&config(c.as_ref())?, mode, data.as_deref(), &out)?;
            if let Some(s) = res.scores {
                println!("RMSE {:.6} AAD {:.4} SAD {:.4}", s.rmse, s.aad, s.sad_mean);
            }
        }
        Command::Sweep { config: c, axis, values, seeds, mode, data, out } => {
            let cells = cmd_sweep(&config(c.as_ref())?, axis, &values, &seeds, mode, data.as_deref(), &out)?;
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            println!("{} cells, {failed} failed", cells.len());
        }
        Command::Eval { est, gt, out } => {
            let s = cmd_eval(&est, &gt, out.as_deref())?;
            println!("RMSE {:.6} AAD {:.4} SAD {:.4}", s.rmse, s.aad, s.sad_mean);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MCU_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(mcu_cli::EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
