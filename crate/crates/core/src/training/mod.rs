//! Teacher-forced training: oversampled data mix, token batches, Adam with
//! inverse-square-root warmup, label smoothing, gradient clipping, periodic
//! validation and early stopping on dev cross-entropy (optionally dev TER).

mod batch;
mod optim;

pub use batch::{encode_triplets, make_batches, Batch, IdTriplet};
pub use optim::{adam_step, load_state, lr_schedule, save_state, AdamConfig, OptimizerState};

use std::time::Instant;

use ape_tensor::{wide, Mode, RngCore, Scalar, SplitRng, Tape, Tensor};

use crate::dataprep::{Triplet, BOS_ID, EOS_ID};
use crate::error::{CoreError, Result};
use crate::evaluate::ter_corpus;
use crate::model::{
    build_model, decode_forward, decode_step, encode, CrossMemory, DecoderCache, ModelConfig,
    ParameterSet, Source,
};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub warmup_steps: u64,
    /// Multiplier on the schedule (the d_model^-0.5 factor is built in).
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub label_smoothing: f64,
    /// Batch budget in padded target tokens.
    pub batch_tokens: usize,
    pub max_epochs: usize,
    /// Steps between validations.
    pub validate_every: u64,
    /// Consecutive non-improving validations tolerated before stopping;
    /// 0 stops at the first non-improvement.
    pub patience: usize,
    pub oversample_factor: usize,
    pub seed: u64,
    pub max_steps: Option<u64>,
    pub clip_norm: f64,
    /// Also greedy-decode the dev set each validation and report TER.
    pub dev_ter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warmup_steps: 4000,
            lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            label_smoothing: 0.1,
            batch_tokens: 2000,
            max_epochs: 100,
            validate_every: 200,
            patience: 5,
            oversample_factor: 20,
            seed: 1,
            max_steps: None,
            clip_norm: 5.0,
            dev_ter: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(CoreError::Invalid {
            what: "train config",
            detail,
        });
        if self.warmup_steps < 1 {
            return bad("warmup_steps must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.oversample_factor < 1 {
            return bad("oversample_factor must be at least 1".to_string());
        }
        if self.batch_tokens < 1 || self.max_epochs < 1 || self.validate_every < 1 {
            return bad("batch_tokens, max_epochs and validate_every must be positive".to_string());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }
}

/// One validation record of the training log.
#[derive(Clone, Debug)]
pub struct LogRecord {
    pub step: u64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_ter: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

impl std::fmt::Display for LogRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step {} train {:.4} dev {:.4}",
            self.step, self.train_loss, self.dev_loss
        )?;
        if let Some(ter) = self.dev_ter {
            write!(f, " ter {ter:.4}")?;
        }
        write!(f, " lr {:.6} {:.1}s", self.lr, self.seconds)
    }
}

pub struct TrainOutcome<F: Scalar> {
    pub best: ParameterSet<F>,
    pub last: ParameterSet<F>,
    /// Optimizer state matching `last`, for checkpoint resume.
    pub state: OptimizerState,
    pub log: Vec<LogRecord>,
    pub best_dev_loss: f64,
    pub steps: u64,
}

/// Oversample the original corpus `factor` times, append every artificial
/// set, and shuffle deterministically.
pub fn build_training_mix(
    original: &[Triplet],
    artificial: &[Vec<Triplet>],
    factor: usize,
    seed: u64,
) -> Vec<Triplet> {
    let mut mix = Vec::with_capacity(original.len() * factor);
    for _ in 0..factor {
        mix.extend_from_slice(original);
    }
    for set in artificial {
        mix.extend_from_slice(set);
    }
    SplitRng::seed(seed).shuffle(&mut mix);
    mix
}

/// Token-weighted smoothed cross-entropy of one batch: sum of per-sentence
/// mean losses weighted by their token counts, divided by total tokens.
fn batch_loss<F: Scalar>(
    tape: &Tape<F>,
    params: &ParameterSet<F>,
    batch: &Batch,
    label_smoothing: f64,
    rng: &mut SplitRng,
) -> Result<Tensor<F>> {
    let total = batch.target_tokens() as f64;
    let mut acc: Option<Tensor<F>> = None;
    for i in 0..batch.rows() {
        let src = &batch.src[i][..batch.src_len[i]];
        let mt = &batch.mt[i][..batch.mt_len[i]];
        let n = batch.tgt_len[i];
        let tgt_in = &batch.tgt_in[i][..n];
        let tgt_out = &batch.tgt_out[i][..n];
        let s = encode(tape, params, src, Source::Src, rng)?;
        let m = encode(tape, params, mt, Source::Mt, rng)?;
        let logits = decode_forward(tape, params, &s, &m, tgt_in, rng)?;
        let loss = tape.cross_entropy(&logits, tgt_out, label_smoothing)?;
        let scaled = tape.scale(&loss, n as f64 / total)?;
        acc = Some(match acc {
            None => scaled,
            Some(prev) => tape.add(&prev, &scaled)?,
        });
    }
    acc.ok_or(CoreError::Empty { what: "batch" })
}

/// Unsmoothed dev cross-entropy in nats per token (the early-stop metric).
pub fn dev_loss<F: Scalar>(params: &ParameterSet<F>, dev: &[IdTriplet]) -> Result<f64> {
    let tape = Tape::new(Mode::Infer);
    let mut rng = SplitRng::seed(0);
    let mut nats = 0.0;
    let mut tokens = 0usize;
    for t in dev {
        let s = encode(&tape, params, &with_eos(&t.src), Source::Src, &mut rng)?;
        let m = encode(&tape, params, &with_eos(&t.mt), Source::Mt, &mut rng)?;
        let mut tgt_in = vec![BOS_ID];
        tgt_in.extend_from_slice(&t.pe);
        let logits = decode_forward(&tape, params, &s, &m, &tgt_in, &mut rng)?;
        let loss = tape.cross_entropy(&logits, &with_eos(&t.pe), 0.0)?;
        let n = t.pe.len() + 1;
        nats += wide(loss.item()) * n as f64;
        tokens += n;
    }
    Ok(nats / tokens.max(1) as f64)
}

fn with_eos(ids: &[u32]) -> Vec<u32> {
    let mut v = ids.to_vec();
    v.push(EOS_ID);
    v
}

/// Greedy (beam-1) decode used for the optional dev-TER metric.
pub fn greedy_decode<F: Scalar>(
    params: &ParameterSet<F>,
    src: &[u32],
    mt: &[u32],
) -> Result<Vec<u32>> {
    let tape = Tape::new(Mode::Infer);
    let mut rng = SplitRng::seed(0);
    let s = encode(&tape, params, &with_eos(src), Source::Src, &mut rng)?;
    let m = encode(&tape, params, &with_eos(mt), Source::Mt, &mut rng)?;
    let memory = CrossMemory::new(&tape, params, &s, &m)?;
    let mut cache = DecoderCache::new(params.config().n_layers);
    let cap = crate::decoding::max_output_len(mt.len(), params.config().max_len);
    let mut out = Vec::new();
    let mut token = BOS_ID;
    while out.len() < cap {
        let lp = decode_step(&tape, params, &memory, &mut cache, token, &mut rng)?;
        let row = lp.data();
        // Never emit padding or a spurious start marker.
        let mut best = EOS_ID as usize;
        for (i, &v) in row.iter().enumerate() {
            if i as u32 != crate::dataprep::PAD_ID && i as u32 != BOS_ID && v > row[best] {
                best = i;
            }
        }
        if best as u32 == EOS_ID {
            break;
        }
        out.push(best as u32);
        token = best as u32;
    }
    Ok(out)
}

fn dev_ter_score<F: Scalar>(params: &ParameterSet<F>, dev: &[IdTriplet]) -> Result<f64> {
    let as_words = |ids: &[u32]| -> Vec<String> { ids.iter().map(u32::to_string).collect() };
    let mut hyps = Vec::with_capacity(dev.len());
    let mut refs = Vec::with_capacity(dev.len());
    for t in dev {
        hyps.push(as_words(&greedy_decode(params, &t.src, &t.mt)?));
        refs.push(as_words(&t.pe));
    }
    Ok(ter_corpus(&hyps, &refs)?.score())
}

/// Early-stopping bookkeeping: strict improvement resets the counter, and
/// the run stops once `patience` consecutive non-improvements are exceeded.
struct EarlyStop {
    best: f64,
    since: usize,
    patience: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> EarlyStop {
        EarlyStop {
            best: f64::INFINITY,
            since: 0,
            patience,
        }
    }

    /// Returns (improved, should_stop).
    fn observe(&mut self, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.since = 0;
            (true, false)
        } else {
            self.since += 1;
            (false, self.since > self.patience)
        }
    }
}

/// Train a fresh model, validating every `validate_every` steps. Returns the
/// best checkpoint (by dev loss), the last state, and the validation log.
pub fn train<F: Scalar>(
    model_config: &ModelConfig,
    train_data: &[IdTriplet],
    dev_data: &[IdTriplet],
    tc: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    let params = build_model::<F>(model_config, tc.seed)?;
    let state = OptimizerState::new(&params);
    train_from(params, state, train_data, dev_data, tc)
}

/// Continue training from an existing checkpoint. The schedule resumes at
/// the optimizer's recorded step, so the learning rate picks up where the
/// interrupted run left off.
pub fn train_from<F: Scalar>(
    mut params: ParameterSet<F>,
    mut state: OptimizerState,
    train_data: &[IdTriplet],
    dev_data: &[IdTriplet],
    tc: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    tc.validate()?;
    if dev_data.is_empty() {
        return Err(CoreError::Empty { what: "dev corpus" });
    }
    if !state.matches(&params) {
        return Err(CoreError::Invalid {
            what: "optimizer state",
            detail: "moment vectors do not match the model's parameter slots".to_string(),
        });
    }
    let model_config = params.config().clone();
    let start = Instant::now();
    let adam = tc.adam();
    let mut root = SplitRng::seed(tc.seed);
    let mut dropout_rng = root.split();
    let mut epoch_rng = root.split();
    let mut best = params.clone();
    let mut stopper = EarlyStop::new(tc.patience);
    let mut log = Vec::new();
    let mut step = state.step();
    let mut recent_train = f64::NAN;
    'epochs: for _epoch in 0..tc.max_epochs {
        let (batches, _skipped) = make_batches(
            train_data,
            tc.batch_tokens,
            model_config.max_len,
            epoch_rng.next_u64(),
        )?;
        for b in &batches {
            step += 1;
            let rate = lr_schedule(step, model_config.d_model, tc.warmup_steps)? * tc.lr_scale;
            let tape = Tape::new(Mode::Train);
            let loss = batch_loss(&tape, &params, b, tc.label_smoothing, &mut dropout_rng)?;
            let loss_value = wide(loss.item());
            if !loss_value.is_finite() {
                return Err(CoreError::Diverged { step });
            }
            recent_train = loss_value;
            tape.backward(&loss)?;
            adam_step(&mut params, &mut state, rate, &adam)?;
            let done = tc.max_steps.is_some_and(|m| step >= m);
            if step.is_multiple_of(tc.validate_every) || done {
                let dev = dev_loss(&params, dev_data)?;
                let ter = if tc.dev_ter {
                    Some(dev_ter_score(&params, dev_data)?)
                } else {
                    None
                };
                let record = LogRecord {
                    step,
                    train_loss: recent_train,
                    dev_loss: dev,
                    dev_ter: ter,
                    lr: rate,
                    seconds: start.elapsed().as_secs_f64(),
                };
                log::info!("{record}");
                log.push(record);
                let (improved, stop) = stopper.observe(dev);
                if improved {
                    best = params.clone();
                }
                if stop || done {
                    break 'epochs;
                }
            }
        }
    }
    if log.is_empty() {
        // Short runs that never hit the validation cadence still record one
        // final measurement so `best` is meaningful.
        let dev = dev_loss(&params, dev_data)?;
        let (improved, _) = stopper.observe(dev);
        if improved {
            best = params.clone();
        }
        log.push(LogRecord {
            step,
            train_loss: recent_train,
            dev_loss: dev,
            dev_ter: None,
            lr: lr_schedule(step.max(1), model_config.d_model, tc.warmup_steps)? * tc.lr_scale,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome {
        best,
        last: params,
        state,
        log,
        best_dev_loss: stopper.best,
        steps: step,
    })
}
