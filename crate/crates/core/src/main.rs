use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fractumour::cli::{cmd_run, cmd_sweep_alpha, cmd_verify, exit_code, EXIT_CONFIG};
use fractumour::verify::VerifyOptions;

/// Subdiffusive tumour growth simulator.
///
/// Environment variables `TUMOUR_<SECTION>__<NAME>=value` override keys of
/// the config file, e.g. `TUMOUR_TIME__DT=0.05`.
///
/// Exit codes: 0 success, 1 configuration error, 2 solver failure,
/// 3 verification failure.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and write its time series and snapshots.
    Run { config: PathBuf },
    /// Run one simulation per fractional order and a combined radius table.
    SweepAlpha {
        config: PathBuf,
        /// Comma-separated orders in (0, 1].
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        alphas: Vec<f64>,
        /// Output directory; defaults to the directory of output.series_path.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the acceptance criteria and report pass or fail for each.
    Verify {
        /// Only these criteria (comma-separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let mut stdout = std::io::stdout().lock();
    let code = match cli.command {
        Command::Run { config } => match cmd_run(&config, &mut stdout) {
            Ok(_) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
        Command::SweepAlpha {
            config,
            alphas,
            out_dir,
        } => cmd_sweep_alpha(&config, &alphas, out_dir.as_deref(), &mut stdout),
        Command::Verify { only } => cmd_verify(&only, &VerifyOptions::default(), &mut stdout),
    };
    ExitCode::from(code as u8)
}
