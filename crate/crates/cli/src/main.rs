use std::process::ExitCode;

use clap::Parser;

use disentangle_cli::args::Cli;
use disentangle_cli::commands;
use disentangle_cli::config::RunConfig;
use disentangle_cli::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let cmd = &cli.command;
    let overrides = cmd.overrides()?;
    let cfg = RunConfig::resolve(cmd.kind(), cmd.common().config.as_deref(), &overrides)?;
    commands::dispatch(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
