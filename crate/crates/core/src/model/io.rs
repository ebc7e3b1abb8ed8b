//! Versioned binary model container.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "APEMODEL"
//! version    u32      currently 1
//! config     u32 length, then JSON bytes
//! paths      u32 count, then per path: u32 length, UTF-8 bytes, u32 slot
//! slots      u32 count, then per slot:
//!              dtype u8 (0 = f32, 1 = f64)
//!              rank  u8
//!              extents rank × u32
//!              raw little-endian element data
//! ```
//!
//! Aliased paths point at the same slot, so shared storage is written once
//! and the file size tracks the distinct parameter count.

use std::collections::BTreeMap;
use std::path::Path;

use ape_tensor::{Scalar, Tensor};

use crate::error::{CoreError, Result};
use crate::model::config::ModelConfig;
use crate::model::params::ParameterSet;

const MAGIC: &[u8; 8] = b"APEMODEL";
const VERSION: u32 = 1;

pub fn save_params<F: Scalar>(params: &ParameterSet<F>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(params.config()).expect("config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(params.path_table().len() as u32).to_le_bytes());
    for (p, &slot) in params.path_table() {
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        out.extend_from_slice(p.as_bytes());
        out.extend_from_slice(&(slot as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.slots().len() as u32).to_le_bytes());
    for tensor in params.slots() {
        out.push(F::DTYPE.code());
        out.push(tensor.rank() as u8);
        for &e in tensor.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    std::fs::write(path, out).map_err(|e| CoreError::File {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Sequential reader with bounds-checked primitives; any overrun becomes a
/// corrupt-model error rather than a panic.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::CorruptModel {
                path: self.path.to_path_buf(),
                detail: format!("truncated while reading {what}"),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_params<F: Scalar>(path: &Path) -> Result<ParameterSet<F>> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    let corrupt = |detail: String| CoreError::CorruptModel {
        path: path.to_path_buf(),
        detail,
    };
    if r.take(8, "magic")? != MAGIC {
        return Err(CoreError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CoreError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: VERSION,
        });
    }
    let config_len = r.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len, "config")?)
        .map_err(|e| corrupt(format!("config does not parse: {e}")))?;
    let path_count = r.u32("path count")? as usize;
    let mut paths = BTreeMap::new();
    for _ in 0..path_count {
        let len = r.u32("path length")? as usize;
        let name = std::str::from_utf8(r.take(len, "path")?)
            .map_err(|_| corrupt("parameter path is not UTF-8".to_string()))?
            .to_string();
        let slot = r.u32("slot index")? as usize;
        paths.insert(name, slot);
    }
    let slot_count = r.u32("slot count")? as usize;
    let mut slots = Vec::with_capacity(slot_count);
    for i in 0..slot_count {
        let dtype = ape_tensor::Dtype::from_code(r.u8("dtype")?)
            .ok_or_else(|| corrupt(format!("slot {i}: unknown dtype code")))?;
        if dtype != F::DTYPE {
            return Err(corrupt(format!(
                "slot {i} stored as {dtype}, requested {}",
                F::DTYPE
            )));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let width = F::DTYPE.byte_width();
        let raw = r.take(numel * width, "tensor data")?;
        let data: Vec<F> = raw.chunks_exact(width).map(F::read_le).collect();
        slots.push(Tensor::param(data, &shape).map_err(CoreError::Tensor)?);
    }
    if r.pos != r.bytes.len() {
        return Err(corrupt(format!(
            "{} trailing bytes after the last tensor",
            r.bytes.len() - r.pos
        )));
    }
    ParameterSet::from_parts(config, slots, paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    fn small() -> ModelConfig {
        let mut c = ModelConfig::desk(40);
        c.d_model = 8;
        c.n_heads = 2;
        c.d_ff = 16;
        c.max_len = 32;
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("model.ape");
        let p = ParameterSet::<f32>::build(&small(), 11).unwrap();
        save_params(&p, &file).unwrap();
        let q = load_params::<f32>(&file).unwrap();
        assert_eq!(p.config(), q.config());
        assert_eq!(p.path_table(), q.path_table());
        for (a, b) in p.slots().iter().zip(q.slots()) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        // Aliases survive the round trip as shared storage.
        assert!(q.get("embed.src").unwrap().same_buffer(q.get("out.w").unwrap()));
        // Saving again is byte-stable.
        let file2 = dir.path().join("model2.ape");
        save_params(&q, &file2).unwrap();
        assert_eq!(std::fs::read(&file).unwrap(), std::fs::read(&file2).unwrap());
    }

    #[test]
    fn tied_files_are_smaller_by_the_shared_tables() {
        let dir = tempfile::tempdir().unwrap();
        let tied_file = dir.path().join("tied.ape");
        let untied_file = dir.path().join("untied.ape");
        let mut untied_cfg = small();
        untied_cfg.tie_embeddings = false;
        save_params(&ParameterSet::<f32>::build(&small(), 1).unwrap(), &tied_file).unwrap();
        save_params(
            &ParameterSet::<f32>::build(&untied_cfg, 1).unwrap(),
            &untied_file,
        )
        .unwrap();
        let tied_len = std::fs::metadata(&tied_file).unwrap().len();
        let untied_len = std::fs::metadata(&untied_file).unwrap().len();
        let c = small();
        let extra_tables = (3 * c.vocab_size * c.d_model * 4) as u64;
        let extra_headers = 3 * (1 + 1 + 2 * 4) as u64;
        // "tie_embeddings":false is one JSON byte longer than true.
        let config_json = 1;
        assert_eq!(untied_len - tied_len, extra_tables + extra_headers + config_json);
    }

    #[test]
    fn bad_magic_version_and_truncation_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("model.ape");
        let p = ParameterSet::<f32>::build(&small(), 2).unwrap();
        save_params(&p, &file).unwrap();
        let good = std::fs::read(&file).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&file, &bad).unwrap();
        assert!(matches!(
            load_params::<f32>(&file),
            Err(CoreError::BadMagic { .. })
        ));

        let mut bad = good.clone();
        bad[8] = 9;
        std::fs::write(&file, &bad).unwrap();
        assert!(matches!(
            load_params::<f32>(&file),
            Err(CoreError::UnsupportedVersion { found: 9, .. })
        ));

        std::fs::write(&file, &good[..good.len() - 10]).unwrap();
        assert!(matches!(
            load_params::<f32>(&file),
            Err(CoreError::CorruptModel { .. })
        ));

        std::fs::write(&file, &good).unwrap();
        assert!(matches!(
            load_params::<f64>(&file),
            Err(CoreError::CorruptModel { .. })
        ));
    }

    #[test]
    fn stored_shape_mismatch_is_reported_per_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("model.ape");
        let p = ParameterSet::<f32>::build(&small(), 2).unwrap();
        save_params(&p, &file).unwrap();
        let mut bytes = std::fs::read(&file).unwrap();
        // Corrupt the stored vocab_size inside the config JSON so layout
        // shapes disagree with the stored tensors. The JSON region starts
        // after magic (8), version (4) and its length prefix (4).
        let json_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[16..16 + json_len]).unwrap();
        let at = 16 + json.find("\"vocab_size\":40").unwrap();
        bytes[at + 13] = b'3';
        bytes[at + 14] = b'9';
        std::fs::write(&file, &bytes).unwrap();
        assert!(matches!(
            load_params::<f32>(&file),
            Err(CoreError::StoredShapeMismatch { .. })
        ));
    }
}
