//! Model hyperparameters and the two built-in presets.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Which input stream an encoder (or a cross-attention block) reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Src,
    Mt,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Src => "src",
            Source::Mt => "mt",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Source> {
        match s {
            "src" => Ok(Source::Src),
            "mt" => Ok(Source::Mt),
            other => Err(CoreError::Invalid {
                what: "source name",
                detail: format!("expected src or mt, got {other}"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding and hidden width.
    pub d_model: usize,
    pub n_heads: usize,
    /// Feed-forward inner width.
    pub d_ff: usize,
    /// Encoder and decoder depth.
    pub n_layers: usize,
    /// Joint subword vocabulary size, including the 4 reserved ids.
    pub vocab_size: usize,
    pub dropout: f64,
    /// One shared embedding table for both encoders, the decoder input and
    /// the (transposed) output projection.
    pub tie_embeddings: bool,
    /// src and mt encoders share all weights (they still produce different
    /// activations because their inputs differ).
    pub share_encoders: bool,
    /// Stacking order of the two decoder cross-attention blocks, bottom
    /// first.
    pub cross_attention_order: [Source; 2],
    /// Positional-encoding horizon.
    pub max_len: usize,
}

impl ModelConfig {
    /// The standard base configuration.
    pub fn transformer_base(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: 512,
            n_heads: 8,
            d_ff: 2048,
            n_layers: 6,
            vocab_size,
            dropout: 0.1,
            tie_embeddings: true,
            share_encoders: true,
            cross_attention_order: [Source::Src, Source::Mt],
            max_len: 1024,
        }
    }

    /// A small preset sized so end-to-end runs finish in minutes on a CPU.
    pub fn desk(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            n_layers: 2,
            vocab_size,
            dropout: 0.1,
            tie_embeddings: true,
            share_encoders: true,
            cross_attention_order: [Source::Src, Source::Mt],
            max_len: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(CoreError::BadConfig { detail });
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.n_layers == 0 {
            return bad("d_model, n_heads, d_ff and n_layers must be positive".to_string());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size <= crate::dataprep::RESERVED.len() {
            return bad(format!(
                "vocab_size {} leaves no room beyond the {} reserved tokens",
                self.vocab_size,
                crate::dataprep::RESERVED.len()
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.cross_attention_order[0] == self.cross_attention_order[1] {
            return bad("cross_attention_order must name both src and mt".to_string());
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".to_string());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
