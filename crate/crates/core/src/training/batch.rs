//! Length-bucketed token batching.
//!
//! Triplets are sorted by (target, src, mt) length and packed greedily until
//! the padded target token count of a batch would exceed the budget, then
//! batch order is shuffled. Bucketing keeps sentences of similar length
//! together, which minimizes padding waste.

use ape_tensor::SplitRng;

use crate::dataprep::{Triplet, Vocabulary, BOS_ID, EOS_ID, PAD_ID};
use crate::error::{CoreError, Result};

/// One triplet as vocabulary ids, without any sentinel tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdTriplet {
    pub src: Vec<u32>,
    pub mt: Vec<u32>,
    pub pe: Vec<u32>,
}

impl IdTriplet {
    pub fn encode(triplet: &Triplet, vocab: &Vocabulary) -> IdTriplet {
        IdTriplet {
            src: vocab.encode(&triplet.src).0,
            mt: vocab.encode(&triplet.mt).0,
            pe: vocab.encode(&triplet.pe).0,
        }
    }

    /// Longest sequence once sentinels are attached (EOS on the sources,
    /// BOS/EOS around the target).
    fn widest(&self) -> usize {
        (self.src.len() + 1)
            .max(self.mt.len() + 1)
            .max(self.pe.len() + 1)
    }
}

pub fn encode_triplets(triplets: &[Triplet], vocab: &Vocabulary) -> Vec<IdTriplet> {
    triplets.iter().map(|t| IdTriplet::encode(t, vocab)).collect()
}

/// A padded batch. Rows are stored at equal width per field; `*_len` gives
/// each row's true length. Scored target positions are exactly
/// `tgt_out[i][..tgt_len[i]]`, so the pad id is never scored.
#[derive(Clone, Debug)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub mt: Vec<Vec<u32>>,
    pub tgt_in: Vec<Vec<u32>>,
    pub tgt_out: Vec<Vec<u32>>,
    pub src_len: Vec<usize>,
    pub mt_len: Vec<usize>,
    pub tgt_len: Vec<usize>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.src.len()
    }

    /// Scored target tokens in this batch.
    pub fn target_tokens(&self) -> usize {
        self.tgt_len.iter().sum()
    }

    /// Pad tokens across all four padded fields (packing-efficiency metric).
    pub fn padding_waste(&self) -> usize {
        let count = |rows: &[Vec<u32>], lens: &[usize]| -> usize {
            rows.iter()
                .zip(lens)
                .map(|(row, &len)| row.len() - len)
                .sum()
        };
        count(&self.src, &self.src_len)
            + count(&self.mt, &self.mt_len)
            + count(&self.tgt_in, &self.tgt_len)
            + count(&self.tgt_out, &self.tgt_len)
    }

    fn build(rows: &[&IdTriplet]) -> Batch {
        let pad = |mut v: Vec<u32>, w: usize| {
            v.resize(w, PAD_ID);
            v
        };
        let src_w = rows.iter().map(|t| t.src.len() + 1).max().unwrap_or(0);
        let mt_w = rows.iter().map(|t| t.mt.len() + 1).max().unwrap_or(0);
        let tgt_w = rows.iter().map(|t| t.pe.len() + 1).max().unwrap_or(0);
        let mut batch = Batch {
            src: Vec::new(),
            mt: Vec::new(),
            tgt_in: Vec::new(),
            tgt_out: Vec::new(),
            src_len: Vec::new(),
            mt_len: Vec::new(),
            tgt_len: Vec::new(),
        };
        for t in rows {
            let mut src = t.src.clone();
            src.push(EOS_ID);
            let mut mt = t.mt.clone();
            mt.push(EOS_ID);
            let mut tgt_in = vec![BOS_ID];
            tgt_in.extend_from_slice(&t.pe);
            let mut tgt_out = t.pe.clone();
            tgt_out.push(EOS_ID);
            batch.src_len.push(src.len());
            batch.mt_len.push(mt.len());
            batch.tgt_len.push(tgt_out.len());
            batch.src.push(pad(src, src_w));
            batch.mt.push(pad(mt, mt_w));
            batch.tgt_in.push(pad(tgt_in, tgt_w));
            batch.tgt_out.push(pad(tgt_out, tgt_w));
        }
        batch
    }
}

/// Partition a corpus into batches whose padded target token count stays
/// within `batch_tokens` (a single over-long sentence gets its own batch).
/// Triplets longer than `max_len` after sentinels are skipped; the skip
/// count is returned alongside the batches.
pub fn make_batches(
    corpus: &[IdTriplet],
    batch_tokens: usize,
    max_len: usize,
    seed: u64,
) -> Result<(Vec<Batch>, usize)> {
    if corpus.is_empty() {
        return Err(CoreError::Empty { what: "training corpus" });
    }
    if batch_tokens == 0 {
        return Err(CoreError::Invalid {
            what: "batch size",
            detail: "batch_tokens must be at least 1".to_string(),
        });
    }
    let mut kept: Vec<&IdTriplet> = Vec::with_capacity(corpus.len());
    let mut skipped = 0usize;
    for t in corpus {
        if t.widest() > max_len {
            skipped += 1;
        } else {
            kept.push(t);
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} triplets longer than {max_len} tokens");
    }
    kept.sort_by_key(|t| (t.pe.len(), t.src.len(), t.mt.len()));
    let mut batches = Vec::new();
    let mut current: Vec<&IdTriplet> = Vec::new();
    let mut widest_tgt = 0usize;
    for t in kept {
        let tgt = t.pe.len() + 1;
        let padded = (current.len() + 1) * widest_tgt.max(tgt);
        if !current.is_empty() && padded > batch_tokens {
            batches.push(Batch::build(&current));
            current.clear();
            widest_tgt = 0;
        }
        widest_tgt = widest_tgt.max(tgt);
        current.push(t);
    }
    if !current.is_empty() {
        batches.push(Batch::build(&current));
    }
    SplitRng::seed(seed).shuffle(&mut batches);
    Ok((batches, skipped))
}
