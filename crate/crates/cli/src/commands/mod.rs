pub mod lm;
pub mod postedit;
pub mod prepare;
pub mod score;
pub mod select;
pub mod train;

use std::path::Path;

use ape_core::{CoreError, Result};

/// Conventional file names inside a prepared-corpus directory.
pub const CORPUS_SRC: &str = "corpus.src";
pub const CORPUS_MT: &str = "corpus.mt";
pub const CORPUS_PE: &str = "corpus.pe";
pub const TRUECASE_SRC: &str = "truecase.src";
pub const TRUECASE_TGT: &str = "truecase.tgt";
pub const BPE_CODES: &str = "bpe.codes";
pub const VOCAB: &str = "vocab.txt";
pub const MANIFEST: &str = "manifest.txt";

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| CoreError::File {
        path: path.to_path_buf(),
        source,
    })
}
