//! Corpus BLEU-4 with clipped n-gram precisions and brevity penalty.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, Serialize)]
pub struct BleuResult {
    /// Clipped n-gram matches, pooled over the corpus, for n = 1..=4.
    pub matches: [usize; 4],
    /// Total hypothesis n-gram counts for n = 1..=4.
    pub totals: [usize; 4],
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// In [0, 100]; 0 whenever any precision is 0 (unsmoothed).
    pub score: f64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Standard single-reference corpus BLEU: clipped counts pooled over all
/// segments, brevity penalty from aggregate lengths.
pub fn bleu_corpus(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<BleuResult> {
    if hyps.len() != refs.len() {
        return Err(CoreError::Invalid {
            what: "corpus",
            detail: format!("{} hypotheses vs {} references", hyps.len(), refs.len()),
        });
    }
    if hyps.is_empty() {
        return Err(CoreError::Empty { what: "corpus" });
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (hyp, reference) in hyps.iter().zip(refs) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=4 {
            let hyp_counts = ngram_counts(hyp, n);
            let ref_counts = ngram_counts(reference, n);
            for (gram, &count) in &hyp_counts {
                totals[n - 1] += count;
                matches[n - 1] += count.min(*ref_counts.get(gram).unwrap_or(&0));
            }
        }
    }
    let mut precisions = [0.0f64; 4];
    for n in 0..4 {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        brevity_penalty * mean_log.exp() * 100.0
    };
    Ok(BleuResult {
        matches,
        totals,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        score,
    })
}
