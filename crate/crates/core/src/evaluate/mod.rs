//! Task metrics: TER (primary) and corpus BLEU (secondary).

pub mod bleu;
pub mod oracle;
pub mod ter;

pub use bleu::{bleu_corpus, BleuResult};
pub use oracle::{ter_oracle, ter_oracle_edits};
pub use ter::{ter, ter_corpus, TerResult, MAX_SHIFT_SPAN};

/// Lowercase a tokenized corpus in place copies; used by the `--lowercase`
/// scoring mode.
pub fn lowercase_corpus(corpus: &[Vec<String>]) -> Vec<Vec<String>> {
    corpus
        .iter()
        .map(|sent| sent.iter().map(|t| t.to_lowercase()).collect())
        .collect()
}

/// The plain-text score report line: TER to 4 decimals, BLEU to 2.
pub fn report_line(ter: &TerResult, bleu: &BleuResult) -> String {
    format!("TER {:.4} BLEU {:.2}", ter.score(), bleu.score)
}
