mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOFTNEG_LOG", "warn"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            Cli::command().error(ErrorKind::ValueValidation, "--threads must be at least 1").exit();
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let needs_out = !matches!(cli.command, Command::GradCheck(_));
    if needs_out && cli.global.out_dir.is_none() {
        Cli::command()
            .error(ErrorKind::MissingRequiredArgument, "--out-dir is required for this command")
            .exit();
    }
    let g = &cli.global;
    let out = g.out_dir.as_deref();
    let result = match &cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(g, a, out.unwrap()),
        Command::Train(a) => commands::train(g, a, out.unwrap()),
        Command::GenAlign(a) => commands::gen_align(g, a, out.unwrap()),
        Command::Eval(a) => commands::eval(g, a, out.unwrap()),
        Command::Ablate(a) => commands::ablate(g, a, out.unwrap()),
        Command::GradCheck(a) => match commands::grad_check(g, a, out) {
            Ok(true) => Ok(()),
            Ok(false) => Err(anyhow::anyhow!("gradient check failed")),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
