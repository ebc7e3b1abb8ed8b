//! Named model parameters with an explicit alias table.
//!
//! Every parameter has a dotted path (`dec.layer0.self_attn.wq`). Paths map
//! to *slots*, the distinct underlying tensors. Tying and sharing are pure
//! aliasing: several paths resolving to one slot. The optimizer updates
//! slots, so an update is observed through every alias path at once.

use std::collections::BTreeMap;

use ape_tensor::{fl, Scalar, SplitRng, Tensor};

use crate::error::{CoreError, Result};
use crate::model::config::ModelConfig;

#[derive(Clone, Debug)]
pub struct ParameterSet<F: Scalar> {
    config: ModelConfig,
    slots: Vec<Tensor<F>>,
    paths: BTreeMap<String, usize>,
}

/// One named parameter in the canonical layout: its path, shape, and the
/// path it aliases (itself when it owns its storage).
struct Layout {
    path: String,
    shape: Vec<usize>,
    owner: String,
}

fn attention_entries(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>)>) {
    for w in ["wq", "wk", "wv", "wo"] {
        out.push((format!("{prefix}.{w}"), vec![d, d]));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        out.push((format!("{prefix}.{b}"), vec![d]));
    }
}

fn norm_entries(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((format!("{prefix}.gain"), vec![d]));
    out.push((format!("{prefix}.bias"), vec![d]));
}

fn ffn_entries(prefix: &str, d: usize, d_ff: usize, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((format!("{prefix}.w1"), vec![d, d_ff]));
    out.push((format!("{prefix}.b1"), vec![d_ff]));
    out.push((format!("{prefix}.w2"), vec![d_ff, d]));
    out.push((format!("{prefix}.b2"), vec![d]));
}

/// The full canonical layout for a config, alias resolution included.
fn layout(config: &ModelConfig) -> Vec<Layout> {
    let (d, d_ff, v) = (config.d_model, config.d_ff, config.vocab_size);
    let mut entries: Vec<(String, Vec<usize>)> = vec![
        ("embed.src".to_string(), vec![v, d]),
        ("embed.mt".to_string(), vec![v, d]),
        ("embed.tgt".to_string(), vec![v, d]),
        ("out.w".to_string(), vec![v, d]),
    ];
    for enc in ["src", "mt"] {
        for i in 0..config.n_layers {
            let p = format!("enc.{enc}.layer{i}");
            attention_entries(&format!("{p}.self_attn"), d, &mut entries);
            norm_entries(&format!("{p}.norm1"), d, &mut entries);
            ffn_entries(&format!("{p}.ffn"), d, d_ff, &mut entries);
            norm_entries(&format!("{p}.norm2"), d, &mut entries);
        }
    }
    for i in 0..config.n_layers {
        let p = format!("dec.layer{i}");
        attention_entries(&format!("{p}.self_attn"), d, &mut entries);
        norm_entries(&format!("{p}.norm_self"), d, &mut entries);
        for enc in ["src", "mt"] {
            attention_entries(&format!("{p}.cross_attn.{enc}"), d, &mut entries);
            norm_entries(&format!("{p}.norm_cross.{enc}"), d, &mut entries);
        }
        ffn_entries(&format!("{p}.ffn"), d, d_ff, &mut entries);
        norm_entries(&format!("{p}.norm_ffn"), d, &mut entries);
    }
    entries
        .into_iter()
        .map(|(path, shape)| {
            let owner = if config.tie_embeddings
                && ["embed.src", "embed.mt", "out.w"].contains(&path.as_str())
            {
                "embed.tgt".to_string()
            } else if config.share_encoders && path.starts_with("enc.mt.") {
                path.replacen("enc.mt.", "enc.src.", 1)
            } else {
                path.clone()
            };
            Layout { path, shape, owner }
        })
        .collect()
}

impl<F: Scalar> ParameterSet<F> {
    /// Initialize all parameters. Weight matrices are uniform in
    /// ±sqrt(6/(fan_in+fan_out)), norm gains 1, all biases 0. Each owning
    /// path draws from its own child RNG stream in sorted path order, so the
    /// result is bit-reproducible for a given seed.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<ParameterSet<F>> {
        config.validate()?;
        let entries = layout(config);
        let mut owners: Vec<(&str, &[usize])> = entries
            .iter()
            .filter(|e| e.owner == e.path)
            .map(|e| (e.path.as_str(), e.shape.as_slice()))
            .collect();
        owners.sort();
        let mut rng = SplitRng::seed(seed);
        let mut slots = Vec::with_capacity(owners.len());
        let mut slot_of_owner: BTreeMap<&str, usize> = BTreeMap::new();
        for (path, shape) in owners {
            let mut stream = rng.split();
            let data: Vec<f64> = if shape.len() == 2 {
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..shape[0] * shape[1])
                    .map(|_| stream.uniform(-bound, bound))
                    .collect()
            } else if path.ends_with(".gain") {
                vec![1.0; shape[0]]
            } else {
                vec![0.0; shape[0]]
            };
            slot_of_owner.insert(path, slots.len());
            slots.push(Tensor::param(data.iter().map(|&v| fl(v)).collect(), shape)?);
        }
        let paths = entries
            .iter()
            .map(|e| (e.path.clone(), slot_of_owner[e.owner.as_str()]))
            .collect();
        Ok(ParameterSet {
            config: config.clone(),
            slots,
            paths,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, path: &str) -> Result<&Tensor<F>> {
        self.paths
            .get(path)
            .map(|&i| &self.slots[i])
            .ok_or_else(|| CoreError::UnknownParameter {
                path: path.to_string(),
            })
    }

    /// Slot index a path resolves to.
    pub fn slot_of(&self, path: &str) -> Result<usize> {
        self.paths
            .get(path)
            .copied()
            .ok_or_else(|| CoreError::UnknownParameter {
                path: path.to_string(),
            })
    }

    pub fn slots(&self) -> &[Tensor<F>] {
        &self.slots
    }

    /// Replace a slot's tensor (optimizer step). Every alias path observes
    /// the new value.
    pub fn set_slot(&mut self, slot: usize, tensor: Tensor<F>) {
        assert_eq!(self.slots[slot].shape(), tensor.shape(), "slot shape fixed");
        self.slots[slot] = tensor;
    }

    /// All paths in sorted order with their slot indices.
    pub fn path_table(&self) -> &BTreeMap<String, usize> {
        &self.paths
    }

    /// Scalar count over unique underlying tensors, not paths.
    pub fn distinct_parameter_count(&self) -> usize {
        self.slots.iter().map(|t| t.numel()).sum()
    }

    /// Rebuild from explicit parts (deserialization).
    pub(crate) fn from_parts(
        config: ModelConfig,
        slots: Vec<Tensor<F>>,
        paths: BTreeMap<String, usize>,
    ) -> Result<ParameterSet<F>> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != paths.len()
            || expected.iter().any(|e| !paths.contains_key(&e.path))
        {
            return Err(CoreError::Invalid {
                what: "parameter table",
                detail: "stored paths do not match the config's layout".to_string(),
            });
        }
        for e in &expected {
            let &slot = paths.get(&e.path).unwrap();
            let found = slots.get(slot).map(|t| t.shape().to_vec()).unwrap_or_default();
            if found != e.shape {
                return Err(CoreError::StoredShapeMismatch {
                    path: e.path.clone(),
                    expected: e.shape.clone(),
                    found,
                });
            }
        }
        Ok(ParameterSet { config, slots, paths })
    }
}

/// Closed-form distinct scalar count for a config; used to cross-check the
/// structural arithmetic of tying and sharing.
pub fn expected_parameter_count(config: &ModelConfig) -> usize {
    let (d, f, v, l) = (
        config.d_model,
        config.d_ff,
        config.vocab_size,
        config.n_layers,
    );
    let attn = 4 * d * d + 4 * d;
    let norm = 2 * d;
    let ffn = 2 * d * f + f + d;
    let enc_layer = attn + ffn + 2 * norm;
    let dec_layer = 3 * attn + ffn + 4 * norm;
    let tables = if config.tie_embeddings { 1 } else { 4 };
    let encoders = if config.share_encoders { 1 } else { 2 };
    tables * v * d + encoders * l * enc_layer + l * dec_layer
}
