// Checkpoint archive: named f64 tensors plus the model configuration and
// a free-form JSON metadata block, in a little-endian binary layout with
// a format tag. One archive holds whatever a training regime needs to
// resume losslessly (parameters and optimizer moments alike, keyed by
// canonical path strings like "dec.in.w" or "opt_a.m.dec.in.w").

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::nn::{Arr, Params};

const MAGIC: &[u8; 4] = b"TGVC";
const VERSION: u32 = 1;
/// Upper bound on any length field; a corrupt archive fails fast instead
/// of driving a huge allocation.
const MAX_LEN: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Which training regime wrote this archive ("tgavc", "autovc", ...).
    /// Consumers route on it.
    pub kind: String,
    pub config: ModelConfig,
    /// Step counter, seed, and any regime-specific scalars.
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Arr>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, config: ModelConfig, meta: serde_json::Value) -> Self {
        Checkpoint { kind: kind.into(), config, meta, tensors: BTreeMap::new() }
    }

    /// Store every tensor of a map under `prefix` + its own name.
    pub fn insert_map(&mut self, prefix: &str, map: &BTreeMap<String, Arr>) {
        for (name, arr) in map {
            self.tensors.insert(format!("{prefix}{name}"), arr.clone());
        }
    }

    pub fn insert_params(&mut self, prefix: &str, params: &Params) {
        for (name, arr) in params.iter() {
            self.tensors.insert(format!("{prefix}{name}"), arr.clone());
        }
    }

    /// All tensors under `prefix`, with the prefix stripped.
    pub fn extract_map(&self, prefix: &str) -> BTreeMap<String, Arr> {
        self.tensors
            .iter()
            .filter_map(|(name, arr)| {
                name.strip_prefix(prefix).map(|rest| (rest.to_string(), arr.clone()))
            })
            .collect()
    }

    pub fn extract_params(&self, prefix: &str) -> Params {
        let mut p = Params::new();
        for (name, arr) in self.extract_map(prefix) {
            p.insert(name, arr);
        }
        p
    }

    pub fn require_kind(&self, accepted: &[&str]) -> Result<()> {
        if accepted.contains(&self.kind.as_str()) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "checkpoint kind '{}' not usable here (expected one of {})",
                self.kind,
                accepted.join(", ")
            )))
        }
    }

    pub fn require_num_speakers(&self, k: usize) -> Result<()> {
        if self.config.num_speakers == k {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "checkpoint was trained with {} speakers but the corpus has {k}",
                self.config.num_speakers
            )))
        }
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::validation(format!("checkpoint metadata missing '{key}'")))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::validation(format!("checkpoint metadata missing '{key}'")))
    }
}

fn put_u32(w: &mut impl Write, v: u32, path: &Path) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))
}

fn put_bytes(w: &mut impl Write, b: &[u8], path: &Path) -> Result<()> {
    put_u32(w, u32::try_from(b.len()).expect("section over 4 GiB"), path)?;
    w.write_all(b).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    put_u32(&mut w, VERSION, path)?;
    put_bytes(&mut w, ckpt.kind.as_bytes(), path)?;
    put_bytes(&mut w, serde_json::to_string(&ckpt.config)?.as_bytes(), path)?;
    put_bytes(&mut w, serde_json::to_string(&ckpt.meta)?.as_bytes(), path)?;
    put_u32(&mut w, u32::try_from(ckpt.tensors.len()).expect("tensor count"), path)?;
    for (name, arr) in &ckpt.tensors {
        put_bytes(&mut w, name.as_bytes(), path)?;
        put_u32(&mut w, u32::try_from(arr.ndim()).expect("ndim"), path)?;
        for &d in arr.shape() {
            put_u32(&mut w, u32::try_from(d).expect("dim"), path)?;
        }
        for &v in arr.iter() {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn take_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(buf))
}

fn take_bytes(r: &mut impl Read, path: &Path) -> Result<Vec<u8>> {
    let len = take_u32(r, path)? as u64;
    if len > MAX_LEN {
        return Err(Error::validation(format!(
            "corrupt checkpoint {}: section length {len} out of range",
            path.display()
        )));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn take_string(r: &mut impl Read, path: &Path, what: &str) -> Result<String> {
    String::from_utf8(take_bytes(r, path)?).map_err(|_| {
        Error::validation(format!("corrupt checkpoint {}: {what} is not UTF-8", path.display()))
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::validation(format!(
            "{} is not a checkpoint archive (bad leading tag)",
            path.display()
        )));
    }
    let version = take_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::validation(format!(
            "checkpoint {} has format version {version}, this build reads {VERSION}",
            path.display()
        )));
    }

    let kind = take_string(&mut r, path, "kind")?;
    let config_json = take_string(&mut r, path, "config")?;
    let config: ModelConfig = serde_json::from_str(&config_json).map_err(|e| {
        Error::validation(format!("corrupt checkpoint {}: bad config: {e}", path.display()))
    })?;
    let meta_json = take_string(&mut r, path, "metadata")?;
    let meta: serde_json::Value = serde_json::from_str(&meta_json).map_err(|e| {
        Error::validation(format!("corrupt checkpoint {}: bad metadata: {e}", path.display()))
    })?;

    let n_tensors = take_u32(&mut r, path)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..n_tensors {
        let name = take_string(&mut r, path, "tensor name")?;
        let ndim = take_u32(&mut r, path)? as usize;
        if ndim > 8 {
            return Err(Error::validation(format!(
                "corrupt checkpoint {}: tensor '{name}' claims {ndim} dimensions",
                path.display()
            )));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut total = 1u64;
        for _ in 0..ndim {
            let d = take_u32(&mut r, path)? as usize;
            total = total.saturating_mul(d as u64);
            shape.push(d);
        }
        if total > MAX_LEN {
            return Err(Error::validation(format!(
                "corrupt checkpoint {}: tensor '{name}' size out of range",
                path.display()
            )));
        }
        let mut data = vec![0f64; total as usize];
        let mut buf = [0u8; 8];
        for slot in data.iter_mut() {
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            *slot = f64::from_le_bytes(buf);
        }
        let arr = Arr::from_shape_vec(ndarray::IxDyn(&shape), data).map_err(|_| {
            Error::validation(format!(
                "corrupt checkpoint {}: tensor '{name}' shape/data mismatch",
                path.display()
            ))
        })?;
        if tensors.insert(name.clone(), arr).is_some() {
            return Err(Error::validation(format!(
                "corrupt checkpoint {}: duplicate tensor '{name}'",
                path.display()
            )));
        }
    }

    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::validation(format!(
                "corrupt checkpoint {}: trailing bytes after tensor table",
                path.display()
            )))
        }
        Err(e) => return Err(Error::io(path, e)),
    }

    Ok(Checkpoint { kind, config, meta, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::xavier_uniform;

    fn sample() -> Checkpoint {
        let mut ckpt = Checkpoint::new(
            "tgavc",
            ModelConfig { num_speakers: 4, ..ModelConfig::default() },
            serde_json::json!({"step": 120, "seed": 7}),
        );
        ckpt.tensors.insert("dec.in.w".into(), xavier_uniform(&[5, 3], 5, 3, 1, "t/a"));
        ckpt.tensors.insert("opt_a.m.dec.in.w".into(), xavier_uniform(&[5, 3], 5, 3, 2, "t/b"));
        ckpt.tensors.insert("opt_a.t".into(), Arr::from_elem(ndarray::IxDyn(&[1]), 120.0));
        ckpt
    }

    #[test]
    fn roundtrip_is_lossless_and_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ckpt = sample();
        save_checkpoint(&p1, &ckpt).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, ckpt);
        assert_eq!(loaded.meta_u64("step").unwrap(), 120);
        save_checkpoint(&p2, &loaded).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "save→load→save changed bytes");
    }

    #[test]
    fn bad_magic_and_version_are_named_failures() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        std::fs::write(&p, b"NOPE0000").unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("not a checkpoint archive"), "{err}");

        let good = dir.path().join("good.ckpt");
        save_checkpoint(&good, &sample()).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes[4] = 99; // version field
        std::fs::write(&p, &bytes).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn truncation_and_trailing_garbage_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.ckpt");
        save_checkpoint(&good, &sample()).unwrap();
        let bytes = std::fs::read(&good).unwrap();

        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&cut).is_err());

        let padded = dir.path().join("padded.ckpt");
        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&padded, &extra).unwrap();
        let err = load_checkpoint(&padded).unwrap_err();
        assert!(err.to_string().contains("trailing bytes"), "{err}");
    }

    #[test]
    fn speaker_count_mismatch_is_a_checkpoint_error() {
        let ckpt = sample();
        ckpt.require_num_speakers(4).unwrap();
        let err = ckpt.require_num_speakers(6).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("4 speakers"), "{err}");
        ckpt.require_kind(&["tgavc", "tgavcs"]).unwrap();
        let err = ckpt.require_kind(&["autovc"]).unwrap_err();
        assert!(err.to_string().contains("'tgavc'"), "{err}");
    }

    #[test]
    fn params_pack_and_extract_under_prefixes() {
        let mut params = Params::new();
        params.insert("ec.conv0.w".to_string(), xavier_uniform(&[3, 2, 4], 6, 4, 3, "t/c"));
        params.insert("ec.conv0.b".to_string(), Arr::zeros(ndarray::IxDyn(&[4])));
        let mut ckpt = sample();
        ckpt.insert_params("model.", &params);
        let back = ckpt.extract_params("model.");
        assert!(back.bit_identical(&params));
        assert!(ckpt.extract_map("opt_a.").contains_key("m.dec.in.w"));
    }
}
