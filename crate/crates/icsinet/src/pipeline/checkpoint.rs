//! Checkpoint binary format: magic "ICSN", u32 version, u64 metadata-JSON
//! length, metadata JSON, u32 tensor count, then per tensor u16 name length,
//! name, u8 dtype code (0 = f32), u8 rank, u32 dims, raw little-endian data,
//! u32 CRC32 of the data bytes. Everything little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Model;
use crate::optim::DiffGrad;

use super::{write_atomic, PipelineError, RunConfig};

pub const MAGIC: &[u8; 4] = b"ICSN";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("bad magic at offset 0: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (supported: {supported})")]
    BadVersion { found: u32, supported: u32 },
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch for tensor `{name}` at offset {offset}")]
    BadChecksum { name: String, offset: usize },
    #[error("unsupported dtype code {0} (this build stores f32)")]
    BadDtype(u8),
    #[error("checkpoint metadata: {0}")]
    BadMeta(String),
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has {found} elements, model expects {expected}")]
    SizeMismatch {
        name: String,
        found: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub run_config: RunConfig,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

fn push_tensor(out: &mut Vec<u8>, t: &NamedTensor) {
    let name = t.name.as_bytes();
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    out.push(0u8); // dtype: f32
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let start = out.len();
    for &v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

pub fn encode(meta: &CheckpointMeta, tensors: &[NamedTensor]) -> Vec<u8> {
    let meta_json = serde_json::to_vec(meta).expect("meta serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        push_tensor(&mut out, t);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CkptError> {
        if self.pos + n > self.buf.len() {
            return Err(CkptError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CkptError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CkptError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CkptError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, CkptError> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint, CkptError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CkptError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CkptError::BadVersion {
            found: version,
            supported: VERSION,
        });
    }
    let meta_len = r.u64()? as usize;
    let meta_bytes = r.take(meta_len)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(meta_bytes).map_err(|e| CkptError::BadMeta(e.to_string()))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| CkptError::BadMeta(e.to_string()))?;
        let dtype = r.u8()?;
        if dtype != 0 {
            return Err(CkptError::BadDtype(dtype));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data_off = r.pos;
        let raw = r.take(numel * 4)?;
        let crc_found = r.u32()?;
        if crc32fast::hash(raw) != crc_found {
            return Err(CkptError::BadChecksum {
                name,
                offset: data_off,
            });
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok(Checkpoint { meta, tensors })
}

/// Every persistent tensor: parameters, batchnorm running stats, and the
/// optimizer moments (prefixed `opt.`).
pub fn model_tensors(model: &Model<f32>, optim: Option<&DiffGrad<f32>>) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for p in &model.params {
        out.push(NamedTensor {
            name: p.name.clone(),
            shape: p.shape.clone(),
            data: p.data.clone(),
        });
    }
    for s in &model.bn_stats {
        out.push(NamedTensor {
            name: format!("{}.running_mean", s.name),
            shape: vec![s.mean.len()],
            data: s.mean.clone(),
        });
        out.push(NamedTensor {
            name: format!("{}.running_var", s.name),
            shape: vec![s.var.len()],
            data: s.var.clone(),
        });
    }
    if let Some(opt) = optim {
        for (p, st) in model.params.iter().zip(&opt.state) {
            for (suffix, buf) in [("m", &st.m), ("v", &st.v), ("g_prev", &st.g_prev)] {
                out.push(NamedTensor {
                    name: format!("opt.{}.{}", p.name, suffix),
                    shape: vec![buf.len()],
                    data: buf.clone(),
                });
            }
        }
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model<f32>,
    optim: Option<&DiffGrad<f32>>,
    run_config: &RunConfig,
    step: u64,
) -> Result<(), PipelineError> {
    let meta = CheckpointMeta {
        run_config: run_config.clone(),
        step,
    };
    write_atomic(path, &encode(&meta, &model_tensors(model, optim)))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PipelineError> {
    let bytes = std::fs::read(path).map_err(super::io_err(path))?;
    Ok(decode(&bytes)?)
}

/// Rebuild the model from a loaded checkpoint: same architecture from the
/// embedded config, parameters and running stats restored by name.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model<f32>, PipelineError> {
    let mut model: Model<f32> = Model::build(ckpt.meta.run_config.model.clone())?;
    for p in &mut model.params {
        let t = ckpt
            .get(&p.name)
            .ok_or_else(|| CkptError::MissingTensor(p.name.clone()))?;
        if t.data.len() != p.data.len() {
            return Err(CkptError::SizeMismatch {
                name: p.name.clone(),
                found: t.data.len(),
                expected: p.data.len(),
            }
            .into());
        }
        p.data.copy_from_slice(&t.data);
    }
    for s in &mut model.bn_stats {
        for (suffix, buf) in [("running_mean", &mut s.mean), ("running_var", &mut s.var)] {
            let name = format!("{}.{}", s.name, suffix);
            let t = ckpt
                .get(&name)
                .ok_or_else(|| CkptError::MissingTensor(name.clone()))?;
            if t.data.len() != buf.len() {
                return Err(CkptError::SizeMismatch {
                    name,
                    found: t.data.len(),
                    expected: buf.len(),
                }
                .into());
            }
            buf.copy_from_slice(&t.data);
        }
    }
    Ok(model)
}

/// Restore optimizer moments saved alongside the model, if present.
pub fn optimizer_from_checkpoint(
    ckpt: &Checkpoint,
    model: &Model<f32>,
) -> Result<DiffGrad<f32>, PipelineError> {
    let mut opt = DiffGrad::new(ckpt.meta.run_config.optim.clone(), &model.params);
    opt.t = ckpt.meta.step;
    for (p, st) in model.params.iter().zip(&mut opt.state) {
        for (suffix, buf) in [
            ("m", &mut st.m),
            ("v", &mut st.v),
            ("g_prev", &mut st.g_prev),
        ] {
            let name = format!("opt.{}.{}", p.name, suffix);
            if let Some(t) = ckpt.get(&name) {
                if t.data.len() != buf.len() {
                    return Err(CkptError::SizeMismatch {
                        name,
                        found: t.data.len(),
                        expected: buf.len(),
                    }
                    .into());
                }
                buf.copy_from_slice(&t.data);
            }
        }
    }
    Ok(opt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn micro_run_config() -> RunConfig {
        RunConfig {
            model: ModelConfig {
                input_size: 16,
                depth: 1,
                channels: vec![4, 8],
                seg_classes: 2,
                seed: 3,
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let cfg = micro_run_config();
        let mut model: Model<f32> = Model::build(cfg.model.clone()).unwrap();
        // perturb away from init so the roundtrip is not trivially the seed
        for p in &mut model.params {
            for (i, v) in p.data.iter_mut().enumerate() {
                *v += (i % 7) as f32 * 1e-3;
            }
        }
        let opt = DiffGrad::new(cfg.optim.clone(), &model.params);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model, Some(&opt), &cfg, 42).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.meta.step, 42);
        let restored = model_from_checkpoint(&ckpt).unwrap();
        for (a, b) in model.params.iter().zip(&restored.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data, b.data, "{} differs", a.name);
        }
        for (a, b) in model.bn_stats.iter().zip(&restored.bn_stats) {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.var, b.var);
        }
        let opt2 = optimizer_from_checkpoint(&ckpt, &restored).unwrap();
        assert_eq!(opt2.t, 42);
        // saving the restored state reproduces the same bytes
        let path2 = dir.path().join("m2.ckpt");
        save_checkpoint(&path2, &restored, Some(&opt2), &cfg, 42).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corruption_is_rejected() {
        let cfg = micro_run_config();
        let model: Model<f32> = Model::build(cfg.model.clone()).unwrap();
        let bytes = encode(
            &CheckpointMeta {
                run_config: cfg,
                step: 1,
            },
            &model_tensors(&model, None),
        );
        // bad magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CkptError::BadMagic)));
        // future version
        let mut bad = bytes.clone();
        bad[4] = 99;
        assert!(matches!(decode(&bad), Err(CkptError::BadVersion { .. })));
        // truncation
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(decode(cut), Err(CkptError::Truncated { .. })));
        // flipped data bit -> checksum failure
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 20] ^= 0x01;
        assert!(matches!(decode(&bad), Err(CkptError::BadChecksum { .. })));
        // pristine bytes still load
        assert!(decode(&bytes).is_ok());
    }
}
