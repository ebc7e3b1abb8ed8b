//! `ape prepare`: truecase all three sides, apply subword segmentation
//! (learning the merges unless codes are supplied), build the joint
//! vocabulary, and write everything plus a content-hash manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ape_core::dataprep::{BpeCodes, TruecaseModel, Vocabulary};
use ape_core::text::{read_lines, tokenize, write_lines};
use ape_core::{CoreError, Result};
use sha2::{Digest, Sha256};

use super::{
    create_dir, BPE_CODES, CORPUS_MT, CORPUS_PE, CORPUS_SRC, MANIFEST, TRUECASE_SRC, TRUECASE_TGT,
    VOCAB,
};

#[derive(clap::Args)]
pub struct Args {
    /// Source-language sentences, one per line.
    #[arg(long)]
    src: PathBuf,
    /// Raw machine translations, line-aligned with --src.
    #[arg(long)]
    mt: PathBuf,
    /// Human post-edits, line-aligned with --src.
    #[arg(long)]
    pe: PathBuf,
    /// Output directory for the prepared corpus and its resources.
    #[arg(long)]
    out: PathBuf,
    /// Existing merge codes to apply verbatim instead of learning.
    #[arg(long)]
    codes: Option<PathBuf>,
    /// Existing source-side truecasing model.
    #[arg(long)]
    truecase_src: Option<PathBuf>,
    /// Existing target-side truecasing model (used for mt and pe).
    #[arg(long)]
    truecase_tgt: Option<PathBuf>,
    /// Number of merges to learn when no codes file is given.
    #[arg(long, default_value_t = 4000)]
    bpe_merges: usize,
    /// Maximum vocabulary size, reserved symbols included.
    #[arg(long, default_value_t = 8000)]
    vocab_size: usize,
}

pub fn run(args: Args) -> Result<()> {
    let src = read_lines(&args.src)?;
    let mt = read_lines(&args.mt)?;
    let pe = read_lines(&args.pe)?;
    for (name, lines) in [(&args.mt, &mt), (&args.pe, &pe)] {
        if lines.len() != src.len() {
            return Err(CoreError::LineCountMismatch {
                left: args.src.clone(),
                left_lines: src.len(),
                right: name.clone(),
                right_lines: lines.len(),
            });
        }
    }
    create_dir(&args.out)?;

    let truecase_src = match &args.truecase_src {
        Some(path) => TruecaseModel::load(path)?,
        None => TruecaseModel::train(&src),
    };
    let target_side: Vec<String> = mt.iter().chain(&pe).cloned().collect();
    let truecase_tgt = match &args.truecase_tgt {
        Some(path) => TruecaseModel::load(path)?,
        None => TruecaseModel::train(&target_side),
    };
    let src_tc: Vec<String> = src.iter().map(|l| truecase_src.apply(l)).collect();
    let mt_tc: Vec<String> = mt.iter().map(|l| truecase_tgt.apply(l)).collect();
    let pe_tc: Vec<String> = pe.iter().map(|l| truecase_tgt.apply(l)).collect();

    let codes = match &args.codes {
        Some(path) => BpeCodes::load(path)?,
        None => {
            let mut all = src_tc.clone();
            all.extend_from_slice(&mt_tc);
            all.extend_from_slice(&pe_tc);
            BpeCodes::learn(&all, args.bpe_merges)
        }
    };
    let segment = |lines: &[String]| -> Vec<String> {
        lines.iter().map(|l| codes.apply(l)).collect()
    };
    let src_bpe = segment(&src_tc);
    let mt_bpe = segment(&mt_tc);
    let pe_bpe = segment(&pe_tc);

    let sentences: Vec<Vec<String>> = src_bpe
        .iter()
        .chain(&mt_bpe)
        .chain(&pe_bpe)
        .map(|l| tokenize(l))
        .collect();
    let vocab = Vocabulary::build(sentences.iter().map(Vec::as_slice), args.vocab_size)?;

    write_lines(&args.out.join(CORPUS_SRC), &src_bpe)?;
    write_lines(&args.out.join(CORPUS_MT), &mt_bpe)?;
    write_lines(&args.out.join(CORPUS_PE), &pe_bpe)?;
    truecase_src.save(&args.out.join(TRUECASE_SRC))?;
    truecase_tgt.save(&args.out.join(TRUECASE_TGT))?;
    codes.save(&args.out.join(BPE_CODES))?;
    vocab.save(&args.out.join(VOCAB))?;
    write_manifest(&args.out)?;
    log::info!(
        "prepared {} triplets: {} merges, {} vocabulary entries -> {}",
        src.len(),
        codes.merges().len(),
        vocab.len(),
        args.out.display()
    );
    Ok(())
}

/// Hash every produced file into `manifest.txt`, sorted by name, so a rerun
/// over identical inputs is byte-comparable at a glance.
fn write_manifest(dir: &Path) -> Result<()> {
    let mut entries = String::new();
    for name in [
        BPE_CODES,
        CORPUS_MT,
        CORPUS_PE,
        CORPUS_SRC,
        TRUECASE_SRC,
        TRUECASE_TGT,
        VOCAB,
    ] {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|source| CoreError::File {
            path: path.clone(),
            source,
        })?;
        let digest = Sha256::digest(&bytes);
        let _ = writeln!(entries, "{digest:x}  {name}");
    }
    std::fs::write(dir.join(MANIFEST), entries).map_err(|source| CoreError::File {
        path: dir.join(MANIFEST),
        source,
    })
}
