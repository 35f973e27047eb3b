//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes  "HNSEGCK1"
//! version   u32 LE   1
//! meta_len  u64 LE
//! meta      meta_len bytes of UTF-8 JSON (epoch, metrics, config, hash)
//! count     u32 LE   number of arrays
//! count × { name_len u32, name, ndim u32, dims u64 × ndim, f32 LE × prod(dims) }
//! ```
//!
//! Arrays are the network parameters in layout order, followed by the AdamW
//! moments as `adam.m/<name>` and `adam.v/<name>` for every learnable
//! parameter.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{AdamWConfig, OptimizerState, Tensor};
use crate::error::{Error, Result};
use crate::segresnet::{param_layout, NetworkParams, ParamEntry, SegResNetConfig};

pub const MAGIC: &[u8; 8] = b"HNSEGCK1";
pub const VERSION: u32 = 1;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the canonical JSON of the architecture config.
pub fn config_hash(cfg: &SegResNetConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex(&Sha256::digest(&json))
}

/// SHA-256 over every parameter's name and little-endian bytes.
pub fn params_hash(params: &NetworkParams<f32>) -> String {
    let mut h = Sha256::new();
    for e in params.entries() {
        h.update(e.name.as_bytes());
        for v in e.tensor.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_dice: Option<f64>,
    pub best_val: Option<f64>,
    pub config_hash: String,
    pub config: SegResNetConfig,
    pub optimizer_step: u64,
    pub optimizer: AdamWConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: SegResNetConfig,
    pub params: NetworkParams<f32>,
    pub optimizer: OptimizerState<f32>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub val_dice: Option<f64>,
    pub best_val: Option<f64>,
}

fn write_array(w: &mut impl Write, name: &str, shape: &[usize], data: &[f32]) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_u32::<LittleEndian>(shape.len() as u32)?;
    for &d in shape {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &v in data {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_array(r: &mut impl Read) -> std::io::Result<(String, Vec<usize>, Vec<f32>)> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut name = vec![0u8; n];
    r.read_exact(&mut name)?;
    let ndim = r.read_u32::<LittleEndian>()? as usize;
    if ndim > 8 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "too many dimensions"));
    }
    let shape = (0..ndim)
        .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let count: usize = shape.iter().product();
    let mut data = vec![0f32; count];
    r.read_f32_into::<LittleEndian>(&mut data)?;
    let name = String::from_utf8(name).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    Ok((name, shape, data))
}

impl Checkpoint {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            epoch: self.epoch,
            val_dice: self.val_dice,
            best_val: self.best_val,
            config_hash: config_hash(&self.config),
            config: self.config.clone(),
            optimizer_step: self.optimizer.step,
            optimizer: self.optimizer.config,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = BufWriter::new(file);
        let meta = serde_json::to_vec(&self.meta()).map_err(|e| Error::json(path, e))?;
        let learnable = self.params.learnable_indices();
        (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_u32::<LittleEndian>(VERSION)?;
            w.write_u64::<LittleEndian>(meta.len() as u64)?;
            w.write_all(&meta)?;
            w.write_u32::<LittleEndian>((self.params.entries().len() + 2 * learnable.len()) as u32)?;
            for e in self.params.entries() {
                write_array(&mut w, &e.name, e.tensor.shape(), e.tensor.data())?;
            }
            for (prefix, moments) in [("adam.m", &self.optimizer.first), ("adam.v", &self.optimizer.second)] {
                for (slot, &idx) in learnable.iter().enumerate() {
                    let e = &self.params.entries()[idx];
                    write_array(&mut w, &format!("{prefix}/{}", e.name), e.tensor.shape(), &moments[slot])?;
                }
            }
            w.flush()
        })()
        .map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |reason: String| Error::State(format!("checkpoint {}: {reason}", path.display()));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|e| bad(e.to_string()))?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let meta_len = r.read_u64::<LittleEndian>().map_err(|e| bad(e.to_string()))? as usize;
        if meta_len > 1 << 24 {
            return Err(bad("metadata too large".into()));
        }
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta).map_err(|e| bad(e.to_string()))?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta).map_err(|e| Error::json(path, e))?;
        if config_hash(&meta.config) != meta.config_hash {
            return Err(bad("config hash does not match stored config".into()));
        }
        let count = r.read_u32::<LittleEndian>().map_err(|e| bad(e.to_string()))? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            arrays.push(read_array(&mut r).map_err(|e| bad(e.to_string()))?);
        }

        let layout = param_layout(&meta.config);
        if arrays.len() < layout.len() {
            return Err(bad(format!("{} arrays, layout needs {}", arrays.len(), layout.len())));
        }
        let mut rest = arrays.split_off(layout.len());
        let mut entries = Vec::with_capacity(layout.len());
        for ((name, kind, shape), (aname, ashape, data)) in layout.into_iter().zip(arrays) {
            if name != aname || shape != ashape {
                return Err(bad(format!("expected {name} {shape:?}, found {aname} {ashape:?}")));
            }
            entries.push(ParamEntry {
                name,
                kind,
                tensor: Tensor::new(shape, data)?,
            });
        }
        let params = NetworkParams::from_entries(entries)?;
        let learnable = params.learnable_indices();
        if rest.len() != 2 * learnable.len() {
            return Err(bad(format!("expected {} optimizer arrays, found {}", 2 * learnable.len(), rest.len())));
        }
        let second_raw = rest.split_off(learnable.len());
        let moments = |raw: Vec<(String, Vec<usize>, Vec<f32>)>, prefix: &str| -> Result<Vec<Vec<f32>>> {
            raw.into_iter()
                .zip(&learnable)
                .map(|((name, _, data), &idx)| {
                    let e = &params.entries()[idx];
                    if name != format!("{prefix}/{}", e.name) || data.len() != e.tensor.numel() {
                        return Err(bad(format!("unexpected optimizer array {name}")));
                    }
                    Ok(data)
                })
                .collect()
        };
        let first = moments(rest, "adam.m")?;
        let second = moments(second_raw, "adam.v")?;
        Ok(Self {
            config: meta.config,
            optimizer: OptimizerState {
                config: meta.optimizer,
                step: meta.optimizer_step,
                first,
                second,
            },
            params,
            epoch: meta.epoch,
            val_dice: meta.val_dice,
            best_val: meta.best_val,
        })
    }

    /// Loads and checks that the stored architecture matches `expected`.
    pub fn load_for(path: &Path, expected: &SegResNetConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if config_hash(&ck.config) != config_hash(expected) {
            return Err(Error::State(format!(
                "checkpoint {} was trained with a different architecture",
                path.display()
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segresnet::build;

    fn tiny() -> SegResNetConfig {
        SegResNetConfig {
            in_channels: 2,
            out_channels: 3,
            init_filters: 2,
            blocks_down: vec![1, 1],
            ds_levels: 1,
            patch_size: [4; 3],
        }
    }

    fn sample() -> Checkpoint {
        let params = build::<f32>(&tiny(), 3).unwrap();
        let sizes: Vec<usize> = params
            .learnable_indices()
            .iter()
            .map(|&i| params.entries()[i].tensor.numel())
            .collect();
        let mut optimizer = OptimizerState::new(AdamWConfig::default(), &sizes);
        optimizer.step = 7;
        optimizer.first[0][0] = 0.25;
        optimizer.second[1][0] = 1.5;
        Checkpoint {
            config: tiny(),
            params,
            optimizer,
            epoch: 4,
            val_dice: Some(0.5),
            best_val: Some(0.75),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(params_hash(&back.params), params_hash(&ck.params));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        sample().save(&path).unwrap();
        let other = SegResNetConfig {
            init_filters: 4,
            ..tiny()
        };
        assert!(matches!(Checkpoint::load_for(&path, &other), Err(Error::State(_))));
        assert!(Checkpoint::load_for(&path, &tiny()).is_ok());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::State(_))));
    }
}
