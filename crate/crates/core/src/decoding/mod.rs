//! Beam-search decoding over an ensemble of models. Member predictions are
//! combined as the arithmetic mean of their log-probabilities (a geometric
//! mean in probability space), and finished hypotheses compete under a
//! length-normalized score.

use std::cmp::Ordering;

use ape_tensor::{wide, Mode, Scalar, SplitRng, Tape};
use rayon::prelude::*;

use crate::dataprep::{BOS_ID, EOS_ID, PAD_ID};
use crate::error::{CoreError, Result};
use crate::model::{
    decode_forward, decode_step, encode, CrossMemory, DecoderCache, ParameterSet, Source,
};

const DEFAULT_MAX_LEN_RATIO: f64 = 1.5;
const DEFAULT_MAX_LEN_OFFSET: usize = 3;

#[derive(Clone, Debug)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Output length cap: `max_len_offset + max_len_ratio * mt_len`.
    pub max_len_ratio: f64,
    pub max_len_offset: usize,
    /// Length-normalization exponent; 0 disables normalization.
    pub alpha: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 4,
            max_len_ratio: DEFAULT_MAX_LEN_RATIO,
            max_len_offset: DEFAULT_MAX_LEN_OFFSET,
            alpha: 0.6,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size < 1 {
            return Err(CoreError::Invalid {
                what: "decode config",
                detail: "beam_size must be at least 1".to_string(),
            });
        }
        let non_negative = |x: f64| x.is_finite() && x >= 0.0;
        if !non_negative(self.max_len_ratio) || !non_negative(self.alpha) {
            return Err(CoreError::Invalid {
                what: "decode config",
                detail: "max_len_ratio and alpha must be non-negative".to_string(),
            });
        }
        Ok(())
    }

    fn cap(&self, mt_len: usize, model_max_len: usize) -> usize {
        let by_input = self.max_len_offset + (self.max_len_ratio * mt_len as f64).floor() as usize;
        by_input.min(model_max_len.saturating_sub(1)).max(1)
    }
}

/// Output length cap under the default ratio and offset.
pub fn max_output_len(mt_len: usize, model_max_len: usize) -> usize {
    DecodeConfig::default().cap(mt_len, model_max_len)
}

/// Arithmetic mean of per-member log-probability rows.
fn average_logprobs(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut avg = vec![0.0; rows[0].len()];
    for row in rows {
        for (a, &v) in avg.iter_mut().zip(row) {
            *a += v;
        }
    }
    for a in &mut avg {
        *a /= n;
    }
    avg
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    peak + row.iter().map(|&v| (v - peak).exp()).sum::<f64>().ln()
}

/// The combined step distribution: mean of member log-probabilities,
/// renormalized so the geometric-mean mass sums to one.
fn combine_logprobs(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut avg = average_logprobs(rows);
    let z = log_sum_exp(&avg);
    for v in &mut avg {
        *v -= z;
    }
    avg
}

fn normalized(logp: f64, len: usize, alpha: f64) -> f64 {
    logp / (len.max(1) as f64).powf(alpha)
}

/// A set of models decoded jointly. All members must share a vocabulary size.
pub struct Ensemble<F: Scalar> {
    members: Vec<ParameterSet<F>>,
}

impl<F: Scalar> Ensemble<F> {
    pub fn new(members: Vec<ParameterSet<F>>) -> Result<Ensemble<F>> {
        if members.is_empty() {
            return Err(CoreError::Empty { what: "ensemble" });
        }
        let expected = members[0].config().vocab_size;
        for (member, m) in members.iter().enumerate() {
            let found = m.config().vocab_size;
            if found != expected {
                return Err(CoreError::VocabMismatch {
                    member,
                    expected,
                    found,
                });
            }
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[ParameterSet<F>] {
        &self.members
    }

    pub fn vocab_size(&self) -> usize {
        self.members[0].config().vocab_size
    }

    fn min_max_len(&self) -> usize {
        self.members
            .iter()
            .map(|m| m.config().max_len)
            .min()
            .expect("ensemble is non-empty")
    }
}

struct Hypothesis<F: Scalar> {
    /// Generated tokens, excluding start and end markers.
    tokens: Vec<u32>,
    /// Sum of member-averaged log-probabilities of every emitted symbol.
    logp: f64,
    caches: Vec<DecoderCache<F>>,
    finished: bool,
}

impl<F: Scalar> Hypothesis<F> {
    fn score(&self, alpha: f64) -> f64 {
        normalized(self.logp, self.tokens.len() + usize::from(self.finished), alpha)
    }
}

fn rank<F: Scalar>(a: &Hypothesis<F>, b: &Hypothesis<F>, alpha: f64) -> Ordering {
    b.score(alpha)
        .partial_cmp(&a.score(alpha))
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Decode one sentence with beam search over the ensemble.
pub fn beam_search<F: Scalar>(
    ensemble: &Ensemble<F>,
    src: &[u32],
    mt: &[u32],
    config: &DecodeConfig,
) -> Result<Vec<u32>> {
    config.validate()?;
    let tape = Tape::new(Mode::Infer);
    let mut rng = SplitRng::seed(0);
    let with_eos = |ids: &[u32]| -> Vec<u32> {
        let mut v = ids.to_vec();
        v.push(EOS_ID);
        v
    };
    let src = with_eos(src);
    let mt = with_eos(mt);
    let mut memories = Vec::with_capacity(ensemble.members.len());
    let mut fresh_caches = Vec::with_capacity(ensemble.members.len());
    for member in &ensemble.members {
        let s = encode(&tape, member, &src, Source::Src, &mut rng)?;
        let m = encode(&tape, member, &mt, Source::Mt, &mut rng)?;
        memories.push(CrossMemory::new(&tape, member, &s, &m)?);
        fresh_caches.push(DecoderCache::new(member.config().n_layers));
    }
    let cap = config.cap(mt.len() - 1, ensemble.min_max_len());
    let vocab = ensemble.vocab_size();
    let mut beams = vec![Hypothesis::<F> {
        tokens: Vec::new(),
        logp: 0.0,
        caches: fresh_caches,
        finished: false,
    }];
    for _ in 0..cap {
        if beams.iter().all(|h| h.finished) {
            break;
        }
        let mut candidates: Vec<Hypothesis<F>> = Vec::new();
        for h in beams.drain(..) {
            if h.finished {
                candidates.push(h);
                continue;
            }
            let last = *h.tokens.last().unwrap_or(&BOS_ID);
            let mut caches = h.caches;
            let mut rows = Vec::with_capacity(ensemble.members.len());
            for (i, member) in ensemble.members.iter().enumerate() {
                let lp = decode_step(&tape, member, &memories[i], &mut caches[i], last, &mut rng)?;
                rows.push(lp.data().iter().map(|&v| wide(v)).collect::<Vec<f64>>());
            }
            let mut avg = combine_logprobs(&rows);
            // Never emit padding or a spurious start marker.
            avg[PAD_ID as usize] = f64::NEG_INFINITY;
            avg[BOS_ID as usize] = f64::NEG_INFINITY;
            let mut order: Vec<usize> = (0..vocab).collect();
            order.sort_by(|&a, &b| {
                avg[b].partial_cmp(&avg[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
            });
            for &tok in order.iter().take(config.beam_size) {
                if avg[tok] == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                let finished = tok as u32 == EOS_ID;
                if !finished {
                    tokens.push(tok as u32);
                }
                candidates.push(Hypothesis {
                    tokens,
                    logp: h.logp + avg[tok],
                    caches: caches.clone(),
                    finished,
                });
            }
        }
        candidates.sort_by(|a, b| rank(a, b, config.alpha));
        candidates.truncate(config.beam_size);
        beams = candidates;
    }
    // Prefer a finished hypothesis; fall back to the best running one.
    beams.sort_by(|a, b| rank(a, b, config.alpha));
    let winner = beams
        .iter()
        .find(|h| h.finished)
        .or_else(|| beams.first())
        .ok_or(CoreError::Empty { what: "beam" })?;
    Ok(winner.tokens.clone())
}

/// Decode a corpus of (src, mt) id pairs in parallel, preserving order.
pub fn postedit_corpus<F: Scalar>(
    ensemble: &Ensemble<F>,
    inputs: &[(Vec<u32>, Vec<u32>)],
    config: &DecodeConfig,
) -> Result<Vec<Vec<u32>>> {
    inputs
        .par_iter()
        .map(|(src, mt)| beam_search(ensemble, src, mt, config))
        .collect()
}

/// Teacher-forced ensemble cross-entropy in nats per token. The combined
/// distribution is the renormalized log-probability mean, exactly as used
/// during beam search.
pub fn ensemble_dev_loss<F: Scalar>(
    ensemble: &Ensemble<F>,
    dev: &[crate::training::IdTriplet],
) -> Result<f64> {
    let tape = Tape::new(Mode::Infer);
    let mut rng = SplitRng::seed(0);
    let mut nats = 0.0;
    let mut tokens = 0usize;
    for t in dev {
        let mut src = t.src.clone();
        src.push(EOS_ID);
        let mut mt = t.mt.clone();
        mt.push(EOS_ID);
        let mut tgt_in = vec![BOS_ID];
        tgt_in.extend_from_slice(&t.pe);
        let mut tgt_out = t.pe.clone();
        tgt_out.push(EOS_ID);
        // Per member, the full teacher-forced log-probability table [T, V].
        let mut tables = Vec::with_capacity(ensemble.members.len());
        for member in &ensemble.members {
            let s = encode(&tape, member, &src, Source::Src, &mut rng)?;
            let m = encode(&tape, member, &mt, Source::Mt, &mut rng)?;
            let logits = decode_forward(&tape, member, &s, &m, &tgt_in, &mut rng)?;
            let lp = tape.log_softmax(&logits)?;
            tables.push(lp.to_f64_vec());
        }
        let vocab = ensemble.vocab_size();
        for (j, &target) in tgt_out.iter().enumerate() {
            let rows: Vec<Vec<f64>> = tables
                .iter()
                .map(|table| table[j * vocab..(j + 1) * vocab].to_vec())
                .collect();
            nats -= combine_logprobs(&rows)[target as usize];
            tokens += 1;
        }
    }
    Ok(nats / tokens.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};
    use crate::training::greedy_decode;

    fn tiny_config(vocab: usize) -> ModelConfig {
        let mut c = ModelConfig::desk(vocab);
        c.d_model = 16;
        c.n_heads = 2;
        c.d_ff = 32;
        c.n_layers = 1;
        c.max_len = 32;
        c.dropout = 0.0;
        c
    }

    #[test]
    fn log_mean_is_geometric_mean_of_probabilities() {
        let a = vec![(0.8f64).ln(), (0.2f64).ln()];
        let b = vec![(0.2f64).ln(), (0.8f64).ln()];
        let avg = average_logprobs(&[a.clone(), b.clone()]);
        // sqrt(0.8 * 0.2) = 0.4 on both entries: disagreement flattens.
        assert!((avg[0] - (0.4f64).ln()).abs() < 1e-12);
        assert!((avg[1] - (0.4f64).ln()).abs() < 1e-12);
        // Renormalized, the combined distribution is uniform here.
        let combined = combine_logprobs(&[a.clone(), b.clone()]);
        assert!((combined[0] - (0.5f64).ln()).abs() < 1e-12);
        assert!((combined[1] - (0.5f64).ln()).abs() < 1e-12);
        // A single member is already normalized: combining is the identity.
        let solo = combine_logprobs(std::slice::from_ref(&a));
        assert!((solo[0] - a[0]).abs() < 1e-12 && (solo[1] - a[1]).abs() < 1e-12);
    }

    #[test]
    fn ensemble_loss_of_identical_members_matches_single() {
        let config = tiny_config(10);
        let m = build_model::<f32>(&config, 4).unwrap();
        let dev: Vec<crate::training::IdTriplet> = (0..4u32)
            .map(|i| crate::training::IdTriplet {
                src: vec![4 + i % 5, 5, 6],
                mt: vec![5, 6 + i % 3],
                pe: vec![5, 6 + i % 3],
            })
            .collect();
        let single = Ensemble::new(vec![m.clone()]).unwrap();
        let triple = Ensemble::new(vec![m.clone(), m.clone(), m]).unwrap();
        let a = ensemble_dev_loss(&single, &dev).unwrap();
        let b = ensemble_dev_loss(&triple, &dev).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        assert!(a.is_finite() && a > 0.0);
    }

    #[test]
    fn length_normalization_can_flip_the_winner() {
        // Raw: A wins. Per-token: B wins.
        let a = (-1.0, 2usize);
        let b = (-1.6, 4usize);
        assert!(normalized(a.0, a.1, 0.0) > normalized(b.0, b.1, 0.0));
        assert!(normalized(a.0, a.1, 1.0) < normalized(b.0, b.1, 1.0));
    }

    #[test]
    fn vocab_mismatch_is_rejected() {
        let m1 = build_model::<f32>(&tiny_config(10), 1).unwrap();
        let m2 = build_model::<f32>(&tiny_config(12), 1).unwrap();
        let err = Ensemble::new(vec![m1, m2]).err().expect("must be rejected");
        match err {
            CoreError::VocabMismatch {
                member: 1,
                expected: 10,
                found: 12,
            } => {}
            other => panic!("expected VocabMismatch, got {other:?}"),
        }
        let err = Ensemble::<f32>::new(vec![]).err().expect("must be rejected");
        assert!(matches!(err, CoreError::Empty { .. }));
    }

    #[test]
    fn duplicated_member_matches_single_member() {
        let config = tiny_config(10);
        let m = build_model::<f32>(&config, 4).unwrap();
        let single = Ensemble::new(vec![m.clone()]).unwrap();
        let triple = Ensemble::new(vec![m.clone(), m.clone(), m]).unwrap();
        let dc = DecodeConfig {
            beam_size: 3,
            ..DecodeConfig::default()
        };
        let src = vec![4, 5, 6];
        let mt = vec![5, 6, 7];
        assert_eq!(
            beam_search(&single, &src, &mt, &dc).unwrap(),
            beam_search(&triple, &src, &mt, &dc).unwrap()
        );
    }

    #[test]
    fn beam_one_equals_greedy() {
        let config = tiny_config(10);
        let m = build_model::<f32>(&config, 9).unwrap();
        let ens = Ensemble::new(vec![m.clone()]).unwrap();
        let dc = DecodeConfig {
            beam_size: 1,
            alpha: 0.0,
            ..DecodeConfig::default()
        };
        for seed in 0..4u32 {
            let src: Vec<u32> = (0..4).map(|k| 4 + (seed + k) % 6).collect();
            let mt: Vec<u32> = (0..3).map(|k| 4 + (seed + 2 * k) % 6).collect();
            assert_eq!(
                beam_search(&ens, &src, &mt, &dc).unwrap(),
                greedy_decode(&m, &src, &mt).unwrap()
            );
        }
    }

    /// Combined log-probability of emitting `tokens` then EOS, stepped
    /// directly with the same renormalized-mean rule the beam uses.
    fn sequence_logp(ens: &Ensemble<f64>, src: &[u32], mt: &[u32], tokens: &[u32]) -> f64 {
        let tape = Tape::new(Mode::Infer);
        let mut rng = SplitRng::seed(0);
        let mut full_src = src.to_vec();
        full_src.push(EOS_ID);
        let mut full_mt = mt.to_vec();
        full_mt.push(EOS_ID);
        let mut total = 0.0;
        let member = &ens.members()[0];
        let s = encode(&tape, member, &full_src, Source::Src, &mut rng).unwrap();
        let m = encode(&tape, member, &full_mt, Source::Mt, &mut rng).unwrap();
        let memory = CrossMemory::new(&tape, member, &s, &m).unwrap();
        let mut cache = DecoderCache::new(member.config().n_layers);
        let mut prev = BOS_ID;
        for &t in tokens.iter().chain(std::iter::once(&EOS_ID)) {
            let lp = decode_step(&tape, member, &memory, &mut cache, prev, &mut rng).unwrap();
            let row: Vec<f64> = lp.data().iter().map(|&v| wide(v)).collect();
            total += combine_logprobs(&[row])[t as usize];
            prev = t;
        }
        total
    }

    #[test]
    fn wide_beam_matches_exhaustive_enumeration() {
        // Vocabulary {4, 5} plus markers, cap 3: fifteen finished sequences.
        // A beam wide enough to hold every live prefix is exhaustive, so the
        // search must return the true argmax of the normalized score.
        let mut config = tiny_config(6);
        config.max_len = 16;
        let m = build_model::<f64>(&config, 21).unwrap();
        let ens = Ensemble::new(vec![m]).unwrap();
        let dc = DecodeConfig {
            beam_size: 16,
            max_len_ratio: 0.0,
            max_len_offset: 3,
            alpha: 0.6,
        };
        let src = vec![4, 5, 4];
        let mt = vec![5, 4];
        let got = beam_search(&ens, &src, &mt, &dc).unwrap();
        let mut best: Option<(f64, Vec<u32>)> = None;
        let mut stack: Vec<Vec<u32>> = vec![vec![]];
        while let Some(seq) = stack.pop() {
            let score = normalized(
                sequence_logp(&ens, &src, &mt, &seq),
                seq.len() + 1,
                dc.alpha,
            );
            let better = match &best {
                None => true,
                Some((s, b)) => score > *s || (score == *s && seq < *b),
            };
            if better {
                best = Some((score, seq.clone()));
            }
            if seq.len() < 3 {
                for t in [4u32, 5u32] {
                    let mut next = seq.clone();
                    next.push(t);
                    stack.push(next);
                }
            }
        }
        assert_eq!(got, best.unwrap().1);
    }

    #[test]
    fn parallel_corpus_decode_matches_serial() {
        let config = tiny_config(10);
        let m = build_model::<f32>(&config, 2).unwrap();
        let ens = Ensemble::new(vec![m]).unwrap();
        let dc = DecodeConfig::default();
        let inputs: Vec<(Vec<u32>, Vec<u32>)> = (0..8u32)
            .map(|i| {
                let src: Vec<u32> = (0..3).map(|k| 4 + (i + k) % 6).collect();
                let mt: Vec<u32> = (0..4).map(|k| 4 + (i + 2 * k) % 6).collect();
                (src, mt)
            })
            .collect();
        let par = postedit_corpus(&ens, &inputs, &dc).unwrap();
        let ser: Vec<Vec<u32>> = inputs
            .iter()
            .map(|(s, t)| beam_search(&ens, s, t, &dc).unwrap())
            .collect();
        assert_eq!(par, ser);
    }

    #[test]
    fn output_length_respects_cap() {
        assert_eq!(max_output_len(10, 1024), 18);
        assert_eq!(max_output_len(0, 1024), 3);
        assert_eq!(max_output_len(100, 32), 31);
    }
}
