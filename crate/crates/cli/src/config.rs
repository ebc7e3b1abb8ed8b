//! Flat run configuration: `section.key = value` lines with `#` comments.
//! Keys mirror the model, training, and decoding configs; any key can be
//! overridden on the command line with `--set key=value`. Unknown keys are
//! rejected and the effective configuration is echoed to the log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ape_core::decoding::DecodeConfig;
use ape_core::model::{ModelConfig, Source};
use ape_core::text::read_lines;
use ape_core::training::TrainConfig;
use ape_core::{CoreError, Result};

const KNOWN_KEYS: &[&str] = &[
    "model.preset",
    "model.d_model",
    "model.n_heads",
    "model.d_ff",
    "model.n_layers",
    "model.vocab_size",
    "model.dropout",
    "model.tie_embeddings",
    "model.share_encoders",
    "model.cross_attention_order",
    "model.max_len",
    "train.warmup_steps",
    "train.lr_scale",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.label_smoothing",
    "train.batch_tokens",
    "train.max_epochs",
    "train.validate_every",
    "train.patience",
    "train.oversample_factor",
    "train.seed",
    "train.max_steps",
    "train.clip_norm",
    "train.dev_ter",
    "decode.beam_size",
    "decode.max_len_ratio",
    "decode.max_len_offset",
    "decode.alpha",
];

fn bad(detail: String) -> CoreError {
    CoreError::BadConfig { detail }
}

#[derive(Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn empty() -> RunConfig {
        RunConfig::default()
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let mut config = RunConfig::empty();
        for (number, line) in read_lines(path)?.iter().enumerate() {
            let text = line.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let (key, value) = text
                .split_once('=')
                .ok_or_else(|| bad(format!("{etc}:{n}: expected `key = value`, got {line:?}", etc = path.display(), n = number + 1)))?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Apply `key=value` command-line overrides on top of the file.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for item in sets {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| bad(format!("--set expects key=value, got {item:?}")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(bad(format!("unknown configuration key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse_into<T: std::str::FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(raw) = self.get(key) {
            *slot = raw
                .parse()
                .map_err(|_| bad(format!("{key}: cannot parse {raw:?}")))?;
        }
        Ok(())
    }

    /// Model architecture: a preset as the base, individual keys on top.
    /// The vocabulary size comes from the vocabulary file; a configured
    /// `model.vocab_size` must agree with it.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut mc = match self.get("model.preset").unwrap_or("desk") {
            "desk" => ModelConfig::desk(vocab_size),
            "transformer_base" => ModelConfig::transformer_base(vocab_size),
            other => return Err(bad(format!("model.preset: unknown preset {other:?}"))),
        };
        if let Some(raw) = self.get("model.vocab_size") {
            let configured: usize = raw
                .parse()
                .map_err(|_| bad(format!("model.vocab_size: cannot parse {raw:?}")))?;
            if configured != vocab_size {
                return Err(bad(format!(
                    "model.vocab_size {configured} does not match the vocabulary file ({vocab_size} entries)"
                )));
            }
        }
        self.parse_into("model.d_model", &mut mc.d_model)?;
        self.parse_into("model.n_heads", &mut mc.n_heads)?;
        self.parse_into("model.d_ff", &mut mc.d_ff)?;
        self.parse_into("model.n_layers", &mut mc.n_layers)?;
        self.parse_into("model.dropout", &mut mc.dropout)?;
        self.parse_into("model.tie_embeddings", &mut mc.tie_embeddings)?;
        self.parse_into("model.share_encoders", &mut mc.share_encoders)?;
        self.parse_into("model.max_len", &mut mc.max_len)?;
        if let Some(raw) = self.get("model.cross_attention_order") {
            let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(bad(format!(
                    "model.cross_attention_order: expected two comma-separated sources, got {raw:?}"
                )));
            }
            let parse = |s: &str| -> Result<Source> {
                s.parse()
                    .map_err(|_| bad(format!("model.cross_attention_order: unknown source {s:?}")))
            };
            mc.cross_attention_order = [parse(parts[0])?, parse(parts[1])?];
        }
        mc.validate()?;
        Ok(mc)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut tc = TrainConfig::default();
        self.parse_into("train.warmup_steps", &mut tc.warmup_steps)?;
        self.parse_into("train.lr_scale", &mut tc.lr_scale)?;
        self.parse_into("train.beta1", &mut tc.beta1)?;
        self.parse_into("train.beta2", &mut tc.beta2)?;
        self.parse_into("train.eps", &mut tc.eps)?;
        self.parse_into("train.label_smoothing", &mut tc.label_smoothing)?;
        self.parse_into("train.batch_tokens", &mut tc.batch_tokens)?;
        self.parse_into("train.max_epochs", &mut tc.max_epochs)?;
        self.parse_into("train.validate_every", &mut tc.validate_every)?;
        self.parse_into("train.patience", &mut tc.patience)?;
        self.parse_into("train.oversample_factor", &mut tc.oversample_factor)?;
        self.parse_into("train.seed", &mut tc.seed)?;
        self.parse_into("train.clip_norm", &mut tc.clip_norm)?;
        self.parse_into("train.dev_ter", &mut tc.dev_ter)?;
        if let Some(raw) = self.get("train.max_steps") {
            tc.max_steps = match raw {
                "none" => None,
                n => Some(
                    n.parse()
                        .map_err(|_| bad(format!("train.max_steps: cannot parse {raw:?}")))?,
                ),
            };
        }
        tc.validate()?;
        Ok(tc)
    }

    pub fn decode_config(&self) -> Result<DecodeConfig> {
        let mut dc = DecodeConfig::default();
        self.parse_into("decode.beam_size", &mut dc.beam_size)?;
        self.parse_into("decode.max_len_ratio", &mut dc.max_len_ratio)?;
        self.parse_into("decode.max_len_offset", &mut dc.max_len_offset)?;
        self.parse_into("decode.alpha", &mut dc.alpha)?;
        dc.validate()?;
        Ok(dc)
    }

    /// The effective configuration, one sorted `key = value` line each.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.values {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

/// Load an optional config file and fold in `--set` overrides, logging the
/// effective result.
pub fn resolve(config: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut rc = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::empty(),
    };
    rc.apply_overrides(sets)?;
    let echo = rc.echo();
    if echo.is_empty() {
        log::info!("effective config: all defaults");
    } else {
        log::info!("effective config:\n{}", echo.trim_end());
    }
    Ok(rc)
}
