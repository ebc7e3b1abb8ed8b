//! `ape train`: build the training mix, train a dual-source model on a
//! prepared corpus, and write the best checkpoint, the last state, the
//! optimizer state, and a validation log.

use std::path::{Path, PathBuf};

use ape_core::dataprep::{load_triplets, Triplet, Vocabulary};
use ape_core::model::{load_params, save_params};
use ape_core::text::write_lines;
use ape_core::training::{
    build_training_mix, encode_triplets, load_state, save_state, train_from, IdTriplet,
    OptimizerState,
};
use ape_core::Result;

use super::{CORPUS_MT, CORPUS_PE, CORPUS_SRC, VOCAB};
use crate::config;

#[derive(clap::Args)]
pub struct Args {
    /// Prepared training directory (corpus.src/mt/pe and vocab.txt).
    #[arg(long)]
    data: PathBuf,
    /// Prepared development directory; the early-stopping metric runs here.
    #[arg(long)]
    dev: PathBuf,
    /// Additional prepared directories with artificial triplets. The
    /// original corpus is oversampled by train.oversample_factor when any
    /// are given.
    #[arg(long = "artificial")]
    artificial: Vec<PathBuf>,
    /// Where to write the best model. The final state goes to
    /// `<out>.last`, the optimizer state to `<out>.state`, and the
    /// validation log to `<out>.log`.
    #[arg(long)]
    out: PathBuf,
    /// Resume from this model file (requires --resume-state).
    #[arg(long, requires = "resume_state")]
    resume: Option<PathBuf>,
    /// Optimizer state matching --resume.
    #[arg(long, requires = "resume")]
    resume_state: Option<PathBuf>,
    /// Run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. train.seed=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn load_corpus(dir: &Path) -> Result<Vec<Triplet>> {
    load_triplets(
        &dir.join(CORPUS_SRC),
        &dir.join(CORPUS_MT),
        &dir.join(CORPUS_PE),
    )
}

pub fn run(args: Args) -> Result<()> {
    let rc = config::resolve(args.config.as_deref(), &args.sets)?;
    let tc = rc.train_config()?;
    let vocab = Vocabulary::load(&args.data.join(VOCAB))?;
    let original = load_corpus(&args.data)?;
    let dev = load_corpus(&args.dev)?;
    let artificial = args
        .artificial
        .iter()
        .map(|dir| load_corpus(dir))
        .collect::<Result<Vec<_>>>()?;
    let mix = if artificial.is_empty() {
        // Nothing to balance against: oversampling would only duplicate work.
        original
    } else {
        build_training_mix(&original, &artificial, tc.oversample_factor, tc.seed)
    };
    let train_data: Vec<IdTriplet> = encode_triplets(&mix, &vocab);
    let dev_data: Vec<IdTriplet> = encode_triplets(&dev, &vocab);
    log::info!(
        "training on {} triplets ({} original), validating on {}, seed {}",
        train_data.len(),
        mix.len(),
        dev_data.len(),
        tc.seed
    );

    let (params, state) = match (&args.resume, &args.resume_state) {
        (Some(model), Some(state_path)) => {
            let params = load_params::<f32>(model)?;
            let state = load_state(state_path)?;
            log::info!("resuming at step {}", state.step());
            (params, state)
        }
        _ => {
            let mc = rc.model_config(vocab.len())?;
            let params = ape_core::model::build_model::<f32>(&mc, tc.seed)?;
            let state = OptimizerState::new(&params);
            (params, state)
        }
    };

    let outcome = train_from(params, state, &train_data, &dev_data, &tc)?;
    save_params(&outcome.best, &args.out)?;
    save_params(&outcome.last, &with_suffix(&args.out, "last"))?;
    save_state(&with_suffix(&args.out, "state"), &outcome.state)?;
    let log_lines: Vec<String> = outcome.log.iter().map(|r| r.to_string()).collect();
    write_lines(&with_suffix(&args.out, "log"), &log_lines)?;
    log::info!(
        "finished after {} steps: best dev loss {:.4} -> {}",
        outcome.steps,
        outcome.best_dev_loss,
        args.out.display()
    );
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}
