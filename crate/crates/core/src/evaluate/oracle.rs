//! Exhaustive shift-search oracle for validating the greedy TER search.
//!
//! Breadth-first over all legal shift sequences up to a depth bound, deduped
//! by resulting word sequence; the first visit to a sequence is at its
//! minimal shift count, so `depth + edit_distance` minimized over all visited
//! states is the exact optimum within the bound. Intended for tiny inputs.

use std::collections::HashSet;

use crate::error::{CoreError, Result};
use crate::evaluate::ter::{apply_shift, edit_distance, legal_shifts};

/// Minimal `shifts + edit_distance` over all legal shift sequences of length
/// at most `max_shift_depth`, using the same shift legality rules as the
/// greedy search. Returns the total edit count (numerator of the TER score).
pub fn ter_oracle_edits(
    hyp: &[String],
    reference: &[String],
    max_shift_depth: usize,
) -> Result<usize> {
    if reference.is_empty() {
        return Err(CoreError::EmptyReference { segment: 0 });
    }
    let mut best = edit_distance(hyp, reference);
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    seen.insert(hyp.to_vec());
    let mut frontier = vec![hyp.to_vec()];
    for depth in 1..=max_shift_depth {
        if best <= depth {
            // Even a free remainder cannot beat what we already have.
            break;
        }
        let mut next = Vec::new();
        for seq in &frontier {
            let matched = match_flags(seq, reference);
            for (from, len, to) in legal_shifts(seq, reference, &matched) {
                let moved = apply_shift(seq, from, len, to);
                if seen.insert(moved.clone()) {
                    best = best.min(depth + edit_distance(&moved, reference));
                    next.push(moved);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(best)
}

/// Oracle TER score: minimal edits over reference length.
pub fn ter_oracle(hyp: &[String], reference: &[String], max_shift_depth: usize) -> Result<f64> {
    Ok(ter_oracle_edits(hyp, reference, max_shift_depth)? as f64 / reference.len() as f64)
}

/// Per-word matched flags under one optimal alignment, recomputed the same
/// way the greedy search does (via the shared legality helper's contract).
fn match_flags(seq: &[String], reference: &[String]) -> Vec<bool> {
    // Any optimal alignment works for legality; reuse the DP in ter.rs by
    // reconstructing flags from scratch here to keep the oracle independent
    // of greedy internals beyond the legality rule itself.
    let (n, m) = (seq.len(), reference.len());
    let mut d = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        d[idx(i, 0)] = i;
    }
    for j in 0..=m {
        d[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[idx(i - 1, j - 1)] + usize::from(seq[i - 1] != reference[j - 1]);
            let ins = d[idx(i - 1, j)] + 1;
            let del = d[idx(i, j - 1)] + 1;
            d[idx(i, j)] = sub.min(ins).min(del);
        }
    }
    let mut matched = vec![false; n];
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let eq = seq[i - 1] == reference[j - 1];
            if d[idx(i, j)] == d[idx(i - 1, j - 1)] + usize::from(!eq) {
                if eq {
                    matched[i - 1] = true;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[idx(i, j)] == d[idx(i - 1, j)] + 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    matched
}
