//! Dual-source transformer forward passes.
//!
//! One decoder attends to two encoders (src and mt). Per decoder layer the
//! sub-blocks run in order: masked self-attention, cross-attention to the
//! first configured encoder, cross-attention to the second, feed-forward —
//! each followed by a residual add and layer normalization (post-norm).
//!
//! Masking is additive: blocked positions get -inf before the softmax, which
//! produces exact zero probabilities, so masked values can never leak into
//! other rows (bit-exact causality and padding isolation).

use ape_tensor::{Scalar, SplitRng, Tape, Tensor};

use crate::dataprep::PAD_ID;
use crate::error::{CoreError, Result};
use crate::model::config::Source;
use crate::model::params::ParameterSet;

const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct EncoderOutput<F: Scalar> {
    /// `[len, d_model]`, one row per input token (padding rows included).
    pub activations: Tensor<F>,
    /// true where the token is real, false at padding positions.
    pub mask: Vec<bool>,
}

impl<F: Scalar> EncoderOutput<F> {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// Sinusoidal position encodings for positions `offset .. offset+len`.
fn positional_encoding<F: Scalar>(len: usize, offset: usize, d: usize) -> Tensor<F> {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        let p = (pos + offset) as f64;
        for i in 0..d {
            let exponent = (i - i % 2) as f64 / d as f64;
            let angle = p / 10_000f64.powf(exponent);
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::from_f64s(&data, &[len, d]).expect("consistent by construction")
}

/// Scaled embedding lookup plus position encoding plus dropout.
fn embed_sequence<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    table: &str,
    ids: &[u32],
    offset: usize,
    rng: &mut SplitRng,
) -> Result<Tensor<F>> {
    let config = params.config();
    if ids.is_empty() {
        return Err(CoreError::Empty { what: "token sequence" });
    }
    if offset + ids.len() > config.max_len {
        return Err(CoreError::Invalid {
            what: "sequence length",
            detail: format!(
                "{} tokens exceed the positional-encoding horizon {}",
                offset + ids.len(),
                config.max_len
            ),
        });
    }
    let e = tape.embedding_lookup(params.get(table)?, ids)?;
    let scaled = tape.scale(&e, (config.d_model as f64).sqrt())?;
    let positioned = tape.add(
        &scaled,
        &positional_encoding(ids.len(), offset, config.d_model),
    )?;
    tape.dropout(&positioned, config.dropout, rng).map_err(Into::into)
}

/// Additive attention mask `[n, m]`: 0 where allowed, -inf where blocked.
/// Returns None when nothing is blocked so fully-permissive attention skips
/// the add entirely.
fn additive_mask<F: Scalar>(
    n: usize,
    key_mask: Option<&[bool]>,
    causal: bool,
) -> Option<Tensor<F>> {
    let m = key_mask.map_or(n, <[bool]>::len);
    let mut any = false;
    let mut data = vec![0.0f64; n * m];
    for q in 0..n {
        for k in 0..m {
            let blocked =
                (causal && k > q) || key_mask.is_some_and(|mask| !mask[k]);
            if blocked {
                data[q * m + k] = f64::NEG_INFINITY;
                any = true;
            }
        }
    }
    any.then(|| Tensor::from_f64s(&data, &[n, m]).expect("consistent by construction"))
}

fn linear<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    prefix: &str,
    which: char,
    x: &Tensor<F>,
) -> Result<Tensor<F>> {
    let w = params.get(&format!("{prefix}.w{which}"))?;
    let b = params.get(&format!("{prefix}.b{which}"))?;
    Ok(tape.add_bias(&tape.matmul(x, w)?, b)?)
}

/// Project a memory into attention keys and values under `prefix`.
fn project_kv<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    prefix: &str,
    memory: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    Ok((
        linear(tape, params, prefix, 'k', memory)?,
        linear(tape, params, prefix, 'v', memory)?,
    ))
}

/// Multi-head attention: queries from `q_in`, pre-projected keys/values.
/// Output is the wo projection with dropout applied; the caller adds the
/// residual and normalizes.
#[allow(clippy::too_many_arguments)]
fn attention_block<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    prefix: &str,
    q_in: &Tensor<F>,
    k: &Tensor<F>,
    v: &Tensor<F>,
    mask: Option<&Tensor<F>>,
    rng: &mut SplitRng,
) -> Result<Tensor<F>> {
    let config = params.config();
    let (heads, dh) = (config.n_heads, config.head_dim());
    let q = linear(tape, params, prefix, 'q', q_in)?;
    let mut contexts = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(&q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let scores = tape.scale(
            &tape.matmul(&qh, &tape.transpose(&kh)?)?,
            1.0 / (dh as f64).sqrt(),
        )?;
        let masked = match mask {
            Some(m) => tape.add(&scores, m)?,
            None => scores,
        };
        let probs = tape.softmax(&masked, 1)?;
        let probs = tape.dropout(&probs, config.dropout, rng)?;
        contexts.push(tape.matmul(&probs, &vh)?);
    }
    let refs: Vec<&Tensor<F>> = contexts.iter().collect();
    let merged = tape.concat_cols(&refs)?;
    let out = linear(tape, params, prefix, 'o', &merged)?;
    Ok(tape.dropout(&out, config.dropout, rng)?)
}

fn ffn_block<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    prefix: &str,
    x: &Tensor<F>,
    rng: &mut SplitRng,
) -> Result<Tensor<F>> {
    let inner = tape.relu(&linear(tape, params, prefix, '1', x)?)?;
    let out = linear(tape, params, prefix, '2', &inner)?;
    Ok(tape.dropout(&out, params.config().dropout, rng)?)
}

/// Residual add followed by layer normalization under `prefix`.
fn add_norm<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    prefix: &str,
    residual: &Tensor<F>,
    sublayer: &Tensor<F>,
) -> Result<Tensor<F>> {
    let sum = tape.add(residual, sublayer)?;
    Ok(tape.layer_norm(
        &sum,
        params.get(&format!("{prefix}.gain"))?,
        params.get(&format!("{prefix}.bias"))?,
        LN_EPS,
    )?)
}

/// Run one encoder stack over a token sequence. Padding positions are
/// blocked as attention keys everywhere, so they cannot influence non-pad
/// rows here or in the decoder.
pub fn encode<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    tokens: &[u32],
    which: Source,
    rng: &mut SplitRng,
) -> Result<EncoderOutput<F>> {
    let mask: Vec<bool> = tokens.iter().map(|&t| t != PAD_ID).collect();
    if !mask.iter().any(|&m| m) {
        return Err(CoreError::Empty { what: "encoder input" });
    }
    let table = match which {
        Source::Src => "embed.src",
        Source::Mt => "embed.mt",
    };
    let mut x = embed_sequence(tape, params, table, tokens, 0, rng)?;
    let attn_mask = additive_mask::<F>(tokens.len(), Some(&mask), false);
    for i in 0..params.config().n_layers {
        let p = format!("enc.{}.layer{i}", which.name());
        let sa = format!("{p}.self_attn");
        let (k, v) = project_kv(tape, params, &sa, &x)?;
        let a = attention_block(tape, params, &sa, &x, &k, &v, attn_mask.as_ref(), rng)?;
        let h = add_norm(tape, params, &format!("{p}.norm1"), &x, &a)?;
        let f = ffn_block(tape, params, &format!("{p}.ffn"), &h, rng)?;
        x = add_norm(tape, params, &format!("{p}.norm2"), &h, &f)?;
    }
    Ok(EncoderOutput { activations: x, mask })
}

/// Supplies a decoder layer's pre-projected cross keys/values per source.
type CrossKv<'a, F> = &'a dyn Fn(&Tape<F>, Source) -> Result<(Tensor<F>, Tensor<F>)>;
/// Supplies the padding mask for one source at a given query length.
type CrossMask<'a, F> = &'a dyn Fn(Source, usize) -> Option<Tensor<F>>;

/// One decoder layer given the target-side activations and both encoder
/// outputs, using pre-projected self-attention keys/values.
#[allow(clippy::too_many_arguments)]
fn decoder_layer<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    layer: usize,
    x: &Tensor<F>,
    self_kv: (&Tensor<F>, &Tensor<F>),
    self_mask: Option<&Tensor<F>>,
    cross: CrossKv<'_, F>,
    masks: CrossMask<'_, F>,
    rng: &mut SplitRng,
) -> Result<Tensor<F>> {
    let p = format!("dec.layer{layer}");
    let a = attention_block(
        tape,
        params,
        &format!("{p}.self_attn"),
        x,
        self_kv.0,
        self_kv.1,
        self_mask,
        rng,
    )?;
    let mut h = add_norm(tape, params, &format!("{p}.norm_self"), x, &a)?;
    let n = x.shape()[0];
    for source in params.config().cross_attention_order {
        let (k, v) = cross(tape, source)?;
        let m = masks(source, n);
        let c = attention_block(
            tape,
            params,
            &format!("{p}.cross_attn.{}", source.name()),
            &h,
            &k,
            &v,
            m.as_ref(),
            rng,
        )?;
        h = add_norm(
            tape,
            params,
            &format!("{p}.norm_cross.{}", source.name()),
            &h,
            &c,
        )?;
    }
    let f = ffn_block(tape, params, &format!("{p}.ffn"), &h, rng)?;
    add_norm(tape, params, &format!("{p}.norm_ffn"), &h, &f)
}

fn output_logits<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    hidden: &Tensor<F>,
) -> Result<Tensor<F>> {
    Ok(tape.matmul(hidden, &tape.transpose(params.get("out.w")?)?)?)
}

/// Full teacher-forced decoder pass: `[n]` target-input ids to `[n, V]`
/// logits. Causal masking guarantees row t sees only targets at or before t.
pub fn decode_forward<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    src_out: &EncoderOutput<F>,
    mt_out: &EncoderOutput<F>,
    target_in: &[u32],
    rng: &mut SplitRng,
) -> Result<Tensor<F>> {
    let n = target_in.len();
    let mut x = embed_sequence(tape, params, "embed.tgt", target_in, 0, rng)?;
    let causal = additive_mask::<F>(n, None, true);
    for i in 0..params.config().n_layers {
        let sa = format!("dec.layer{i}.self_attn");
        let (k, v) = project_kv(tape, params, &sa, &x)?;
        x = decoder_layer(
            tape,
            params,
            i,
            &x,
            (&k, &v),
            causal.as_ref(),
            &|tape, source| {
                let enc = match source {
                    Source::Src => src_out,
                    Source::Mt => mt_out,
                };
                project_kv(
                    tape,
                    params,
                    &format!("dec.layer{i}.cross_attn.{}", source.name()),
                    &enc.activations,
                )
            },
            &|source, rows| {
                let enc = match source {
                    Source::Src => src_out,
                    Source::Mt => mt_out,
                };
                additive_mask::<F>(rows, Some(&enc.mask), false)
            },
            rng,
        )?;
    }
    output_logits(tape, params, &x)
}

// ── Incremental decoding ──

/// Pre-projected cross-attention keys/values for every decoder layer, plus
/// the encoder padding masks. Built once per sentence, shared by all steps
/// (and all beam hypotheses).
pub struct CrossMemory<F: Scalar> {
    layers: Vec<[(Tensor<F>, Tensor<F>); 2]>,
    masks: [Vec<bool>; 2],
}

impl<F: Scalar> CrossMemory<F> {
    pub fn new(
        tape: &Tape<F>,
        params: &ParameterSet<F>,
        src_out: &EncoderOutput<F>,
        mt_out: &EncoderOutput<F>,
    ) -> Result<CrossMemory<F>> {
        let mut layers = Vec::with_capacity(params.config().n_layers);
        for i in 0..params.config().n_layers {
            let project = |source: Source| {
                let enc = match source {
                    Source::Src => src_out,
                    Source::Mt => mt_out,
                };
                project_kv(
                    tape,
                    params,
                    &format!("dec.layer{i}.cross_attn.{}", source.name()),
                    &enc.activations,
                )
            };
            layers.push([project(Source::Src)?, project(Source::Mt)?]);
        }
        Ok(CrossMemory {
            layers,
            masks: [src_out.mask.clone(), mt_out.mask.clone()],
        })
    }

    fn kv(&self, layer: usize, source: Source) -> &(Tensor<F>, Tensor<F>) {
        &self.layers[layer][source as usize]
    }

    fn mask(&self, source: Source) -> &[bool] {
        &self.masks[source as usize]
    }
}

/// Per-layer cached self-attention keys/values for incremental decoding.
/// The cache length always equals the number of tokens fed so far.
#[derive(Clone)]
pub struct DecoderCache<F: Scalar> {
    layers: Vec<Option<(Tensor<F>, Tensor<F>)>>,
    len: usize,
}

impl<F: Scalar> DecoderCache<F> {
    pub fn new(n_layers: usize) -> DecoderCache<F> {
        DecoderCache {
            layers: vec![None; n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Feed one more target token; returns log-probabilities `[1, V]` for the
/// next position. Identical (to single-precision tolerance) to the matching
/// row of [`decode_forward`] on the full prefix.
pub fn decode_step<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    memory: &CrossMemory<F>,
    cache: &mut DecoderCache<F>,
    token: u32,
    rng: &mut SplitRng,
) -> Result<Tensor<F>> {
    let config = params.config();
    if cache.layers.len() != config.n_layers {
        return Err(CoreError::Invalid {
            what: "decoder cache",
            detail: format!(
                "cache built for {} layers, model has {}",
                cache.layers.len(),
                config.n_layers
            ),
        });
    }
    let mut x = embed_sequence(tape, params, "embed.tgt", &[token], cache.len, rng)?;
    for i in 0..config.n_layers {
        let sa = format!("dec.layer{i}.self_attn");
        let (k_new, v_new) = project_kv(tape, params, &sa, &x)?;
        let (k, v) = match cache.layers[i].take() {
            Some((k_old, v_old)) => (
                tape.concat_rows(&[&k_old, &k_new])?,
                tape.concat_rows(&[&v_old, &v_new])?,
            ),
            None => (k_new, v_new),
        };
        cache.layers[i] = Some((k.clone(), v.clone()));
        x = decoder_layer(
            tape,
            params,
            i,
            &x,
            (&k, &v),
            None,
            &|_, source| {
                let (k, v) = memory.kv(i, source);
                Ok((k.clone(), v.clone()))
            },
            &|source, rows| additive_mask::<F>(rows, Some(memory.mask(source)), false),
            rng,
        )?;
    }
    cache.len += 1;
    let logits = output_logits(tape, params, &x)?;
    Ok(tape.log_softmax(&logits)?)
}
