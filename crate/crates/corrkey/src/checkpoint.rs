//! Versioned binary checkpoint: config echo, vocabulary hash, named tensors
//! with shapes, Adam moments and the step counter. Byte order is
//! little-endian throughout. Loading validates every tensor shape against
//! the model's parameter registry.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::ModelConfig;
use crate::nn::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"CORRKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint parameter {name} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint has unexpected parameter {0}")]
    ExtraParam(String),
    #[error("vocabulary hash mismatch: checkpoint {expected:016x}, supplied vocabulary {found:016x}")]
    VocabHashMismatch { expected: u64, found: u64 },
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

/// FNV-1a 64-bit hash, used to fingerprint vocabulary files.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub struct Checkpoint {
    pub store: ParamStore,
    pub config_json: String,
    pub vocab_hash: u64,
}

fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> io::Result<()> {
    write_u32(w, b.len() as u32)?;
    w.write_all(b)
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>, CheckpointError> {
    let n = read_u32(r)? as usize;
    if n > 1 << 30 {
        return Err(CheckpointError::Corrupt(format!("block of {} bytes", n)));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, CheckpointError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save(
    path: &Path,
    store: &ParamStore,
    config_json: &str,
    vocab_hash: u64,
) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.write_all(MAGIC)?;
    write_u32(&mut buf, VERSION)?;
    write_bytes(&mut buf, config_json.as_bytes())?;
    write_u64(&mut buf, vocab_hash)?;
    write_u64(&mut buf, store.step_count())?;
    write_u32(&mut buf, store.len() as u32)?;
    for name in store.names() {
        let t = store.get(name)?;
        write_bytes(&mut buf, name.as_bytes())?;
        write_u32(&mut buf, t.shape().len() as u32)?;
        for &d in t.shape() {
            write_u64(&mut buf, d as u64)?;
        }
        write_f64s(&mut buf, t.data())?;
        let (m, v) = store.adam_state(name)?;
        write_f64s(&mut buf, m)?;
        write_f64s(&mut buf, v)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let data = fs::read(path)?;
    let mut r = data.as_slice();
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let config_json = String::from_utf8(read_bytes(&mut r)?)
        .map_err(|e| CheckpointError::Corrupt(format!("config echo not UTF-8: {e}")))?;
    let vocab_hash = read_u64(&mut r)?;
    let step = read_u64(&mut r)?;
    let n_params = read_u32(&mut r)? as usize;

    let mut tensors = Vec::with_capacity(n_params);
    let mut adam = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|e| CheckpointError::Corrupt(format!("name not UTF-8: {e}")))?;
        let ndims = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > 1 << 28 {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {} claims {} elements",
                name, numel
            )));
        }
        let values = read_f64s(&mut r, numel)?;
        let m = read_f64s(&mut r, numel)?;
        let v = read_f64s(&mut r, numel)?;
        tensors.push((name, Tensor::new(shape, values)));
        adam.push((m, v));
    }
    if !r.is_empty() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            r.len()
        )));
    }
    let store = ParamStore::from_tensors(tensors, Some(adam), step)?;
    Ok(Checkpoint {
        store,
        config_json,
        vocab_hash,
    })
}

/// Check that a loaded store carries exactly the parameters the model
/// expects, shape for shape.
pub fn validate_shapes(store: &ParamStore, cfg: &ModelConfig) -> Result<(), CheckpointError> {
    let specs = cfg.param_specs();
    for spec in &specs {
        match store.get(&spec.name) {
            Ok(t) if t.shape() == spec.shape.as_slice() => {}
            Ok(t) => {
                return Err(CheckpointError::ShapeMismatch {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: t.shape().to_vec(),
                })
            }
            Err(_) => return Err(CheckpointError::MissingParam(spec.name.clone())),
        }
    }
    for name in store.names() {
        if !specs.iter().any(|s| s.name == name) {
            return Err(CheckpointError::ExtraParam(name.to_string()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_everything() {
        let cfg = ModelConfig::new(12, 4, 5);
        let mut store = cfg.init_params(9);
        // give the optimizer state non-trivial content
        let mut tape = crate::nn::Tape::new();
        let b = store.bind(&mut tape);
        let w = b.node("out.b");
        let probe = tape.constant(Tensor::vector(vec![0.3; 12]));
        let loss = tape.dot(w, probe);
        let g = tape.backward(loss).unwrap();
        store.accumulate_grads(&g, &b);
        store.adam_step(1e-3, 0.9, 0.999, 1e-8);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save(&path, &store, "{\"echo\":true}", 0xdead_beef).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.config_json, "{\"echo\":true}");
        assert_eq!(loaded.vocab_hash, 0xdead_beef);
        assert_eq!(loaded.store.step_count(), 1);
        for name in store.names() {
            assert_eq!(store.get(name).unwrap(), loaded.store.get(name).unwrap());
            assert_eq!(
                store.adam_state(name).unwrap(),
                loaded.store.adam_state(name).unwrap()
            );
        }
        validate_shapes(&loaded.store, &cfg).unwrap();
    }

    #[test]
    fn save_is_byte_deterministic() {
        let cfg = ModelConfig::new(8, 3, 4);
        let store = cfg.init_params(1);
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        save(&p1, &store, "{}", 7).unwrap();
        save(&p2, &store, "{}", 7).unwrap();
        assert_eq!(fs::read(p1).unwrap(), fs::read(p2).unwrap());
    }

    #[test]
    fn wrong_shape_rejected() {
        let cfg = ModelConfig::new(8, 3, 4);
        let store = cfg.init_params(1);
        let other = ModelConfig::new(8, 3, 5);
        assert!(matches!(
            validate_shapes(&store, &other),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn garbage_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_ne!(fnv1a64(b"alpha\n"), fnv1a64(b"beta\n"));
    }
}
