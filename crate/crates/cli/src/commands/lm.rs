//! `ape lm`: train a Witten-Bell smoothed n-gram language model on a text
//! corpus and save its counts.

use std::path::PathBuf;

use ape_core::dataselect::{lm_train, sample_words};
use ape_core::text::read_lines;
use ape_core::Result;

#[derive(clap::Args)]
pub struct Args {
    /// Training corpus, one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Model order (n-gram length).
    #[arg(long, default_value_t = 5)]
    order: usize,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Cap the training data at roughly this many words, sampled at
    /// sentence granularity.
    #[arg(long)]
    sample_words: Option<usize>,
    /// Sampling seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

pub fn run(args: Args) -> Result<()> {
    let corpus = read_lines(&args.corpus)?;
    let train = match args.sample_words {
        Some(budget) => sample_words(&corpus, budget, args.seed)?,
        None => corpus,
    };
    let model = lm_train(&train, args.order)?;
    model.save(&args.out)?;
    log::info!(
        "trained order-{} model on {} sentences ({} types) -> {}",
        model.order(),
        train.len(),
        model.prediction_vocab_size(),
        args.out.display()
    );
    Ok(())
}
