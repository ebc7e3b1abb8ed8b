//! `ape select`: cross-entropy difference data selection. Trains an
//! in-domain and a general-domain language model, scores a target corpus,
//! and writes the score file plus one nested subset file per requested size.

use std::path::PathBuf;

use ape_core::dataselect::{lm_train, moore_lewis, sample_words, select_subset, write_scores};
use ape_core::text::{read_lines, write_lines};
use ape_core::Result;

#[derive(clap::Args)]
pub struct Args {
    /// In-domain corpus, one sentence per line.
    #[arg(long = "in-domain")]
    in_domain: PathBuf,
    /// General-domain corpus used to train the contrast model.
    #[arg(long)]
    general: PathBuf,
    /// Corpus to rank; defaults to the general corpus.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Output prefix: scores go to `<prefix>.scores`, each subset to
    /// `<prefix>.<size>`.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset sizes, e.g. 1000,2000,4000.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Language-model order.
    #[arg(long, default_value_t = 5)]
    order: usize,
    /// Cap the general model's training data at roughly this many words,
    /// sampled at sentence granularity.
    #[arg(long)]
    sample_words: Option<usize>,
    /// Sampling seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

pub fn run(args: Args) -> Result<()> {
    let in_domain = read_lines(&args.in_domain)?;
    let general = read_lines(&args.general)?;
    let target = match &args.target {
        Some(path) => read_lines(path)?,
        None => general.clone(),
    };
    let in_model = lm_train(&in_domain, args.order)?;
    let general_train = match args.sample_words {
        Some(budget) => sample_words(&general, budget, args.seed)?,
        None => general,
    };
    let general_model = lm_train(&general_train, args.order)?;
    let scores = moore_lewis(&in_model, &general_model, &target);
    let scores_path = args.out.with_extension("scores");
    write_scores(&scores_path, &scores)?;
    log::info!("scored {} sentences -> {}", scores.len(), scores_path.display());
    for &size in &args.sizes {
        let subset = select_subset(&target, &scores, size)?;
        let path = args.out.with_extension(size.to_string());
        write_lines(&path, &subset)?;
        log::info!("subset of {} -> {}", subset.len(), path.display());
    }
    Ok(())
}
