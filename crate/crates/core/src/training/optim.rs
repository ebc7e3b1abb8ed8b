//! Inverse-square-root learning-rate schedule and bias-corrected Adam.
//!
//! The optimizer walks parameter *slots* (distinct tensors), so tied or
//! shared paths are updated exactly once per step; their gradient already
//! contains the summed contributions of every alias use.

use std::path::Path;

use ape_tensor::{fl, wide, Scalar, Tensor};

use crate::error::{CoreError, Result};
use crate::model::ParameterSet;

/// `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_schedule(step: u64, d_model: usize, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(CoreError::Invalid {
            what: "schedule step",
            detail: "steps are counted from 1".to_string(),
        });
    }
    let s = step as f64;
    let w = (warmup.max(1)) as f64;
    Ok((d_model as f64).powf(-0.5) * (s.powf(-0.5)).min(s * w.powf(-1.5)))
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping threshold; None disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: Some(5.0),
        }
    }
}

/// First/second moment accumulators per distinct tensor, plus the step
/// counter. Moments are kept in f64 regardless of the model dtype.
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new<F: Scalar>(params: &ParameterSet<F>) -> OptimizerState {
        OptimizerState {
            m: params.slots().iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: params.slots().iter().map(|t| vec![0.0; t.numel()]).collect(),
            step: 0,
        }
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Whether the moment vectors line up with the parameter slots.
    pub fn matches<F: Scalar>(&self, params: &ParameterSet<F>) -> bool {
        self.m.len() == params.slots().len()
            && self
                .m
                .iter()
                .zip(params.slots())
                .all(|(m, t)| m.len() == t.numel())
    }
}

/// The element-wise update rule, factored out for direct arithmetic checks:
/// bias-corrected Adam, epsilon outside the square root.
pub(crate) fn adam_update(
    data: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
    rate: f64,
) {
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..data.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        data[i] -= rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Apply one Adam step from the gradients accumulated on the parameter
/// slots, then clear them. Every alias observes the update through its slot.
pub fn adam_step<F: Scalar>(
    params: &mut ParameterSet<F>,
    state: &mut OptimizerState,
    rate: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n_slots = params.slots().len();
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(n_slots);
    for (i, tensor) in params.slots().iter().enumerate() {
        let g = tensor.grad().ok_or_else(|| CoreError::MissingGrad {
            path: params
                .path_table()
                .iter()
                .find(|(_, &s)| s == i)
                .map(|(p, _)| p.clone())
                .unwrap_or_else(|| format!("slot {i}")),
        })?;
        grads.push(g.iter().map(|&x| wide(x)).collect());
    }
    if let Some(clip) = cfg.clip_norm {
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&x| x * x)
            .sum::<f64>()
            .sqrt();
        if norm > clip {
            let scale = clip / norm;
            for g in &mut grads {
                for x in g.iter_mut() {
                    *x *= scale;
                }
            }
        }
    }
    let t = state.step + 1;
    for (i, grad) in grads.iter().enumerate() {
        let tensor = &params.slots()[i];
        let mut data = tensor.to_f64_vec();
        adam_update(&mut data, grad, &mut state.m[i], &mut state.v[i], t, cfg, rate);
        let shape = tensor.shape().to_vec();
        params.set_slot(
            i,
            Tensor::param(data.iter().map(|&x| fl(x)).collect(), &shape)
                .map_err(CoreError::Tensor)?,
        );
    }
    state.step = t;
    Ok(())
}

// ── Checkpoint state file ──
//
// Layout: magic, format version, completed step count, then per slot its
// element count followed by the first- and second-moment vectors, all
// little-endian. Saving alongside the model file allows a resumed run to
// continue the schedule at the recorded step.

const STATE_MAGIC: &[u8; 8] = b"APESTATE";
const STATE_VERSION: u32 = 1;

pub fn save_state(path: &Path, state: &OptimizerState) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(STATE_MAGIC);
    bytes.extend_from_slice(&STATE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&state.step.to_le_bytes());
    bytes.extend_from_slice(&(state.m.len() as u32).to_le_bytes());
    for (m, v) in state.m.iter().zip(&state.v) {
        bytes.extend_from_slice(&(m.len() as u32).to_le_bytes());
        for x in m.iter().chain(v) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|source| CoreError::File {
        path: path.to_path_buf(),
        source,
    })
}

struct StateReader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> StateReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CoreError::CorruptModel {
            path: self.path.to_path_buf(),
            detail: "truncated state file".to_string(),
        })?;
        let slice = &self.bytes[self.at..end];
        self.at = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_state(path: &Path) -> Result<OptimizerState> {
    let bytes = std::fs::read(path).map_err(|source| CoreError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = StateReader {
        bytes: &bytes,
        at: 0,
        path,
    };
    if r.take(8)? != STATE_MAGIC {
        return Err(CoreError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32()?;
    if version != STATE_VERSION {
        return Err(CoreError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: STATE_VERSION,
        });
    }
    let step = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let slots = r.u32()? as usize;
    let mut m = Vec::with_capacity(slots);
    let mut v = Vec::with_capacity(slots);
    for _ in 0..slots {
        let len = r.u32()? as usize;
        m.push(r.f64s(len)?);
        v.push(r.f64s(len)?);
    }
    if r.at != bytes.len() {
        return Err(CoreError::CorruptModel {
            path: path.to_path_buf(),
            detail: "trailing bytes".to_string(),
        });
    }
    Ok(OptimizerState { m, v, step })
}
