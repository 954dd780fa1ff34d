//! Checkpoint serialization.
//!
//! Format: magic bytes `HTP1`, then per parameter — name length (u32 LE),
//! UTF-8 name, rank (u32 LE), extents (u32 LE each), raw f32 LE data.
//! Readers reject unknown magic.
//!
//! Optimizer state rides along as extra entries named `__adam_m__<name>`,
//! `__adam_v__<name>`, and `__step__`; model loaders skip `__`-prefixed
//! entries.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

pub const MAGIC: &[u8; 4] = b"HTP1";

/// One named tensor in a checkpoint file.
#[derive(Debug, Clone)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn push_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Optimizer progress stored alongside resumable checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptState {
    pub adam_step: u64,
    pub completed_epochs: u64,
}

/// Serializes parameters in order; with `optimizer_state`, appends moment
/// buffers and the progress counters.
pub fn encode(params: &[Parameter], optimizer_state: Option<OptState>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for p in params {
        push_entry(&mut out, &p.name, p.value.shape(), p.value.data());
    }
    if let Some(state) = optimizer_state {
        for p in params {
            push_entry(
                &mut out,
                &format!("__adam_m__{}", p.name),
                &[p.adam_m.len()],
                &p.adam_m,
            );
            push_entry(
                &mut out,
                &format!("__adam_v__{}", p.name),
                &[p.adam_v.len()],
                &p.adam_v,
            );
        }
        push_entry(
            &mut out,
            "__step__",
            &[2],
            &[state.adam_step as f32, state.completed_epochs as f32],
        );
    }
    out
}

/// Parses a checkpoint byte stream into raw entries.
pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Data("unknown checkpoint magic".into()));
    }
    let mut pos = 4usize;
    let mut entries = Vec::new();
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Data("truncated checkpoint".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    while pos < bytes.len() {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Data("checkpoint name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        if rank > crate::tensor::MAX_RANK {
            return Err(Error::Data(format!(
                "checkpoint entry '{name}' has rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    Ok(entries)
}

pub fn save(path: &Path, params: &[Parameter], optimizer_state: Option<OptState>) -> Result<()> {
    fs::write(path, encode(params, optimizer_state)).map_err(|e| Error::io(path, e))
}

/// Loaded checkpoint: model parameters (optimizer buffers restored when
/// present) and the optimizer progress counters.
#[derive(Debug)]
pub struct Loaded {
    pub params: Vec<Parameter>,
    pub opt_state: Option<OptState>,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let entries = decode(&bytes)?;
    let mut params = Vec::new();
    let mut opt_state = None;
    for e in &entries {
        if let Some(rest) = e.name.strip_prefix("__adam_m__") {
            let p = find_param(&mut params, rest, path)?;
            if e.data.len() != p.numel() {
                return Err(Error::Data(format!("adam_m size mismatch for '{rest}'")));
            }
            p.adam_m = e.data.clone();
        } else if let Some(rest) = e.name.strip_prefix("__adam_v__") {
            let p = find_param(&mut params, rest, path)?;
            if e.data.len() != p.numel() {
                return Err(Error::Data(format!("adam_v size mismatch for '{rest}'")));
            }
            p.adam_v = e.data.clone();
        } else if e.name == "__step__" {
            opt_state = Some(OptState {
                adam_step: e.data.first().copied().unwrap_or(0.0) as u64,
                completed_epochs: e.data.get(1).copied().unwrap_or(0.0) as u64,
            });
        } else if e.name.starts_with("__") {
            return Err(Error::Data(format!(
                "unrecognized auxiliary entry '{}'",
                e.name
            )));
        } else {
            let value = Tensor::from_vec(&e.shape, e.data.clone())
                .map_err(|err| Error::Data(format!("entry '{}': {err}", e.name)))?;
            if params.iter().any(|p: &Parameter| p.name == e.name) {
                return Err(Error::Data(format!("duplicate parameter '{}'", e.name)));
            }
            params.push(Parameter::new(e.name.clone(), value));
        }
    }
    if params.is_empty() {
        return Err(Error::Data(format!(
            "{}: checkpoint holds no parameters",
            path.display()
        )));
    }
    Ok(Loaded { params, opt_state })
}

fn find_param<'a>(
    params: &'a mut [Parameter],
    name: &str,
    path: &Path,
) -> Result<&'a mut Parameter> {
    params
        .iter_mut()
        .find(|p| p.name == name)
        .ok_or_else(|| {
            Error::Data(format!(
                "{}: optimizer state for unknown parameter '{name}'",
                path.display()
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> Vec<Parameter> {
        let mut a = Parameter::new(
            "m.w",
            Tensor::from_vec(&[2, 2], vec![1.0, -0.5, 0.25, 3.0e-8]).unwrap(),
        );
        a.adam_m = vec![0.1, 0.2, 0.3, 0.4];
        a.adam_v = vec![0.5, 0.6, 0.7, 0.8];
        let b = Parameter::new("m.b", Tensor::from_vec(&[1], vec![-2.5]).unwrap());
        vec![a, b]
    }

    #[test]
    fn roundtrip_without_optimizer_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params = sample_params();
        save(&path, &params, None).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.params.len(), 2);
        assert!(loaded.opt_state.is_none());
        for (a, b) in params.iter().zip(&loaded.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            assert_eq!(a.value.data(), b.value.data());
        }
        // Fresh moment buffers when no optimizer state is stored.
        assert!(loaded.params[0].adam_m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn roundtrip_with_optimizer_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params = sample_params();
        let state = OptState { adam_step: 1234, completed_epochs: 7 };
        save(&path, &params, Some(state)).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.opt_state, Some(state));
        assert_eq!(loaded.params[0].adam_m, params[0].adam_m);
        assert_eq!(loaded.params[0].adam_v, params[0].adam_v);
    }

    #[test]
    fn unknown_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut bytes = encode(&sample_params(), None);
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let bytes = encode(&sample_params(), None);
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn encoding_is_byte_stable() {
        let st = OptState { adam_step: 7, completed_epochs: 1 };
        let a = encode(&sample_params(), Some(st));
        let b = encode(&sample_params(), Some(st));
        assert_eq!(a, b);
        // Spot-check the layout: magic, then name length 3 LE.
        assert_eq!(&a[..4], b"HTP1");
        assert_eq!(&a[4..8], &3u32.to_le_bytes());
        assert_eq!(&a[8..11], b"m.w");
    }
}
