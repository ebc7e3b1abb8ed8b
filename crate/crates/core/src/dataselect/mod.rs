//! Domain data selection: cross-entropy difference scoring over two n-gram
//! language models (in-domain vs general), plus word-budget sampling and
//! sorted subset extraction.

mod ngram;

pub use ngram::NGramModel;

use std::path::Path;

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::text::{read_lines, tokenize, write_lines};
use ape_tensor::SplitRng;

/// Cross-entropy difference for one sentence; lower means more in-domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainScore {
    pub index: usize,
    /// H_in(s) − H_gen(s) in bits per token.
    pub score: f64,
}

/// Train an n-gram language model; thin alias kept for discoverability.
pub fn lm_train(corpus: &[String], order: usize) -> Result<NGramModel> {
    NGramModel::train(corpus, order)
}

/// Uniformly sample sentences without replacement until the cumulative word
/// count reaches `budget`, stopping after the first overshoot. The selection
/// is returned in original corpus order.
pub fn sample_words(corpus: &[String], budget: usize, seed: u64) -> Result<Vec<String>> {
    if budget < 1 {
        return Err(CoreError::Invalid {
            what: "word budget",
            detail: "budget must be at least 1".to_string(),
        });
    }
    let total: usize = corpus.iter().map(|l| tokenize(l).len()).sum();
    if total < budget {
        log::warn!("corpus has {total} words, below the {budget}-word budget; keeping all");
        return Ok(corpus.to_vec());
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    SplitRng::seed(seed).shuffle(&mut order);
    let mut picked = Vec::new();
    let mut words = 0;
    for &i in &order {
        picked.push(i);
        words += tokenize(&corpus[i]).len();
        if words >= budget {
            break;
        }
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| corpus[i].clone()).collect())
}

/// Score every sentence by cross-entropy difference. Pure per-sentence
/// function, evaluated in parallel.
pub fn moore_lewis(
    in_model: &NGramModel,
    gen_model: &NGramModel,
    corpus: &[String],
) -> Vec<DomainScore> {
    corpus
        .par_iter()
        .enumerate()
        .map(|(index, line)| {
            let tokens = tokenize(line);
            DomainScore {
                index,
                score: in_model.cross_entropy(&tokens) - gen_model.cross_entropy(&tokens),
            }
        })
        .collect()
}

/// Keep the `size` best-scoring sentences (ascending score, ties by original
/// index) and return them in their original relative order.
pub fn select_subset(
    corpus: &[String],
    scores: &[DomainScore],
    size: usize,
) -> Result<Vec<String>> {
    if scores.len() != corpus.len() {
        return Err(CoreError::ScoresLengthMismatch {
            corpus: corpus.len(),
            scores: scores.len(),
        });
    }
    if size >= corpus.len() {
        if size > corpus.len() {
            log::warn!(
                "subset size {size} exceeds corpus size {}; keeping all",
                corpus.len()
            );
        }
        return Ok(corpus.to_vec());
    }
    let mut ranked: Vec<&DomainScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.index.cmp(&b.index))
    });
    let mut keep: Vec<usize> = ranked[..size].iter().map(|s| s.index).collect();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| corpus[i].clone()).collect())
}

// ── Scores file: "index<TAB>score", six decimal places ──

pub fn write_scores(path: &Path, scores: &[DomainScore]) -> Result<()> {
    let lines: Vec<String> = scores
        .iter()
        .map(|s| format!("{}\t{:.6}", s.index, s.score))
        .collect();
    write_lines(path, &lines)
}

pub fn read_scores(path: &Path) -> Result<Vec<DomainScore>> {
    let mut scores = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let parsed = line.split_once('\t').and_then(|(idx, score)| {
            Some(DomainScore {
                index: idx.parse().ok()?,
                score: score.parse().ok()?,
            })
        });
        match parsed {
            Some(s) => scores.push(s),
            None => {
                return Err(CoreError::BadModelLine {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: "expected index<TAB>score".to_string(),
                })
            }
        }
    }
    Ok(scores)
}
