mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, CodebookCmd, Command, HardnessCmd, IdealCmd};

fn run(cli: &Cli) -> pixdisc::Result<()> {
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Codebook(CodebookCmd::Build(a)) => commands::codebook_build(a),
        Command::Discretize(a) => commands::discretize(a),
        Command::Hardness(HardnessCmd::Cdf(a)) => commands::hardness_cdf(a),
        Command::Hardness(HardnessCmd::Neighborhoods(a)) => commands::hardness_neighborhoods(a),
        Command::Hardness(HardnessCmd::Histogram(a)) => commands::hardness_histogram(a),
        Command::Certify(a) => commands::certify(a),
        Command::Idealmodel(IdealCmd::Validate(a)) => commands::idealmodel_validate(a),
    }
}

fn main() -> ExitCode {
    // clap exits with 0 for --help/--version and 2 for usage errors.
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
