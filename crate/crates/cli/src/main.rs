//! `glyphtext`: dataset generation, augmentation previews, alignment training,
//! attention-mask dumps, the region SDEdit demo and metric evaluation.

mod cli;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command, GlobalFlags};
use commands::{augment, eval, gen_dataset, mask_dump, sdedit_demo, train_align};
use config::{to_table, ConfigFile};
use error::CliError;

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let global = to_table(&GlobalFlags {
        workers: cli.workers,
        sequential: cli.sequential,
    })?;
    let section = cli.command.name();
    macro_rules! dispatch {
        ($module:ident, $args:expr) => {{
            let cfg: $module::Config = file.resolve(section, &[global, to_table($args)?])?;
            $module::run(&cfg)
        }};
    }
    match &cli.command {
        Command::GenDataset(a) => dispatch!(gen_dataset, a),
        Command::Augment(a) => dispatch!(augment, a),
        Command::TrainAlign(a) => dispatch!(train_align, a),
        Command::MaskDump(a) => dispatch!(mask_dump, a),
        Command::SdeditDemo(a) => dispatch!(sdedit_demo, a),
        Command::Eval(a) => dispatch!(eval, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
