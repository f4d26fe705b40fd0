mod cli;
mod cmd;
mod run;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use run::{CmdResult, Failure};

fn dispatch(cli: Cli) -> CmdResult {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs as usize)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot size the worker pool: {e}")))?;
    }
    let seed = cli.seed;
    match &cli.command {
        Command::Quantize(a) => cmd::codec::quantize_cmd(a, seed.unwrap_or(0)),
        Command::Dequantize(a) => cmd::codec::dequantize_cmd(a, seed.unwrap_or(0)),
        Command::Memtable(a) => cmd::codec::memtable_cmd(a, seed.unwrap_or(0)),
        Command::Train(a) => cmd::train::train_cmd(a, seed),
        Command::GenData(a) => cmd::train::gen_data_cmd(a, seed.unwrap_or(0)),
        Command::Shardsim(a) => cmd::shard::shardsim_cmd(a, seed),
        Command::Ptq(a) => cmd::ptq::ptq_cmd(a, seed),
        Command::Sweep(a) => cmd::ptq::sweep_cmd(a, seed),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors by itself.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
