//! `ape postedit`: run raw src/mt text through the prepared preprocessing,
//! decode with one model or an ensemble, and undo the segmentation and
//! casing so the output is plain text, one line per input line.

use std::path::PathBuf;

use ape_core::dataprep::{bpe_undo, detruecase, BpeCodes, TruecaseModel, Vocabulary};
use ape_core::decoding::{postedit_corpus, Ensemble};
use ape_core::model::load_params;
use ape_core::text::{detokenize, read_lines, tokenize, write_lines};
use ape_core::{CoreError, Result};

use super::{BPE_CODES, TRUECASE_SRC, TRUECASE_TGT, VOCAB};
use crate::config;

#[derive(clap::Args)]
pub struct Args {
    /// Model file; repeat the flag for an ensemble.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Directory with the preprocessing resources from `ape prepare`.
    #[arg(long)]
    prep: PathBuf,
    /// Raw source sentences, one per line.
    #[arg(long)]
    src: PathBuf,
    /// Raw machine translations, line-aligned with --src.
    #[arg(long)]
    mt: PathBuf,
    /// Output file for the post-edited sentences.
    #[arg(long)]
    out: PathBuf,
    /// Emit truecased subword output instead of undoing the preprocessing.
    #[arg(long)]
    keep_subwords: bool,
    /// Run configuration file (decode.* keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. decode.beam_size=8.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

pub fn run(args: Args) -> Result<()> {
    let rc = config::resolve(args.config.as_deref(), &args.sets)?;
    let dc = rc.decode_config()?;
    let vocab = Vocabulary::load(&args.prep.join(VOCAB))?;
    let truecase_src = TruecaseModel::load(&args.prep.join(TRUECASE_SRC))?;
    let truecase_tgt = TruecaseModel::load(&args.prep.join(TRUECASE_TGT))?;
    let codes = BpeCodes::load(&args.prep.join(BPE_CODES))?;

    let src = read_lines(&args.src)?;
    let mt = read_lines(&args.mt)?;
    if src.len() != mt.len() {
        return Err(CoreError::LineCountMismatch {
            left: args.src.clone(),
            left_lines: src.len(),
            right: args.mt.clone(),
            right_lines: mt.len(),
        });
    }

    let members = args
        .models
        .iter()
        .map(|path| load_params::<f32>(path))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = Ensemble::new(members)?;
    for (member, path) in args.models.iter().enumerate() {
        let found = ensemble.members()[member].config().vocab_size;
        if found != vocab.len() {
            return Err(CoreError::VocabMismatch {
                member,
                expected: vocab.len(),
                found,
            });
        }
        log::info!("member {member}: {}", path.display());
    }

    let encode = |model: &TruecaseModel, line: &String| -> Vec<u32> {
        vocab.encode(&tokenize(&codes.apply(&model.apply(line)))).0
    };
    let inputs: Vec<(Vec<u32>, Vec<u32>)> = src
        .iter()
        .zip(&mt)
        .map(|(s, m)| (encode(&truecase_src, s), encode(&truecase_tgt, m)))
        .collect();

    let decoded = postedit_corpus(&ensemble, &inputs, &dc)?;
    let lines: Vec<String> = decoded
        .iter()
        .map(|ids| {
            let subwords = detokenize(&vocab.decode_clean(ids));
            if args.keep_subwords {
                subwords
            } else {
                detruecase(&bpe_undo(&subwords))
            }
        })
        .collect();
    write_lines(&args.out, &lines)?;
    log::info!(
        "post-edited {} sentences with {} model(s), beam {} -> {}",
        lines.len(),
        ensemble.members().len(),
        dc.beam_size,
        args.out.display()
    );
    Ok(())
}
