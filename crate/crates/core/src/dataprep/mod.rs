//! Corpus ingestion and preprocessing: aligned triplets, truecasing, BPE.

pub mod bpe;
pub mod truecase;
pub mod vocab;

use std::path::Path;

use crate::error::{CoreError, Result};
use crate::text::{read_lines, tokenize};

pub use bpe::{bpe_undo, BpeCodes};
pub use truecase::{detruecase, TruecaseModel};
pub use vocab::{Vocabulary, RESERVED, BOS_ID, BOS_TOKEN, EOS_ID, EOS_TOKEN, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

/// One post-editing training example: source sentence, raw machine
/// translation, and the human post-edit, all whitespace-tokenized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub src: Vec<String>,
    pub mt: Vec<String>,
    pub pe: Vec<String>,
}

/// Load three line-aligned files into triplets. Line counts must agree.
pub fn load_triplets(src: &Path, mt: &Path, pe: &Path) -> Result<Vec<Triplet>> {
    let src_lines = read_lines(src)?;
    let mt_lines = read_lines(mt)?;
    let pe_lines = read_lines(pe)?;
    check_aligned(src, src_lines.len(), mt, mt_lines.len())?;
    check_aligned(src, src_lines.len(), pe, pe_lines.len())?;
    Ok(src_lines
        .iter()
        .zip(&mt_lines)
        .zip(&pe_lines)
        .map(|((s, m), p)| Triplet {
            src: tokenize(s),
            mt: tokenize(m),
            pe: tokenize(p),
        })
        .collect())
}

fn check_aligned(left: &Path, left_lines: usize, right: &Path, right_lines: usize) -> Result<()> {
    if left_lines != right_lines {
        return Err(CoreError::LineCountMismatch {
            left: left.to_path_buf(),
            left_lines,
            right: right.to_path_buf(),
            right_lines,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::write_lines;

    #[test]
    fn aligned_files_load_as_triplets() {
        let dir = tempfile::tempdir().unwrap();
        let (s, m, p) = (
            dir.path().join("s"),
            dir.path().join("m"),
            dir.path().join("p"),
        );
        write_lines(&s, &["a b", "c"]).unwrap();
        write_lines(&m, &["A B", "C"]).unwrap();
        write_lines(&p, &["x y", "z"]).unwrap();
        let t = load_triplets(&s, &m, &p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].src, vec!["a", "b"]);
        assert_eq!(t[1].pe, vec!["z"]);
    }

    #[test]
    fn mismatched_counts_are_rejected_with_both_names() {
        let dir = tempfile::tempdir().unwrap();
        let (s, m, p) = (
            dir.path().join("s"),
            dir.path().join("m"),
            dir.path().join("p"),
        );
        write_lines(&s, &["a", "b"]).unwrap();
        write_lines(&m, &["A"]).unwrap();
        write_lines(&p, &["x", "y"]).unwrap();
        match load_triplets(&s, &m, &p) {
            Err(CoreError::LineCountMismatch {
                left_lines,
                right_lines,
                ..
            }) => {
                assert_eq!((left_lines, right_lines), (2, 1));
            }
            other => panic!("expected mismatch error, got {other:?}"),
        }
    }
}
