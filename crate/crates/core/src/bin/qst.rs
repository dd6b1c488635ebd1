use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qst_core::cli::{run_from_path, Command};

/// Sequential conjugate-variable measurement simulator and state reconstruction.
///
/// Exit status: 0 success, 1 self-test mismatch, 2 invalid input,
/// 3 insufficient probe coverage or divergent deconvolution.
#[derive(Parser, Debug)]
#[command(name = "qst", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// INI configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if args.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run_from_path(args.command, &args.config, args.out.as_deref()) {
        Ok(report) => {
            print!("{}", report.to_text());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qst: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
