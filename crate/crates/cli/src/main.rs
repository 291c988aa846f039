mod commands;
mod config;
mod error;
mod output;

use clap::Parser;

use config::{Cli, Command};
use error::CliError;

fn run(cli: &Cli) -> Result<(), CliError> {
    let args = cli.command.args();
    if let Some(n) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set worker count: {e}")))?;
    }
    match &cli.command {
        c @ Command::Analyze(_) => commands::analyze(c),
        c @ Command::Reduce(_) => commands::reduce(c),
        c @ Command::Validate(_) => commands::validate(c),
        c @ Command::Sweep(_) => commands::sweep(c),
    }
}

fn main() {
    let cli = Cli::parse();
    let level = if cli.command.args().verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
