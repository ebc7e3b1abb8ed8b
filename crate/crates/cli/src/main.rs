//! `ape`: a batch command-line pipeline for automatic post-editing. The
//! subcommands cover corpus preparation, training, decoding, scoring, data
//! selection, and n-gram language models. Logs go to standard error; data
//! goes to files or standard output. Exit codes: 0 success, 2 input or
//! usage error, 3 runtime or numerical failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ape", version, about = "Automatic post-editing toolkit")]
struct Cli {
    /// Cap the number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Truecase, learn and apply subword segmentation, and build the
    /// vocabulary for a triplet corpus.
    Prepare(commands::prepare::Args),
    /// Train a dual-source post-editing model on a prepared corpus.
    Train(commands::train::Args),
    /// Post-edit a corpus with one model or an ensemble.
    Postedit(commands::postedit::Args),
    /// Score a hypothesis file against a reference file.
    Score(commands::score::Args),
    /// Rank a general corpus by domain fit and write nested subsets.
    Select(commands::select::Args),
    /// Train and save an n-gram language model.
    Lm(commands::lm::Args),
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            log::warn!("thread pool already set: {e}");
        }
    }
    let result = match cli.command {
        Command::Prepare(args) => commands::prepare::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Postedit(args) => commands::postedit::run(args),
        Command::Score(args) => commands::score::run(args),
        Command::Select(args) => commands::select::run(args),
        Command::Lm(args) => commands::lm::run(args),
    };
    if let Err(e) = result {
        log::error!("{e}");
        std::process::exit(i32::from(e.exit_code()));
    }
}
