//! Binary checkpoint format. Tensors are written in a fixed order with f32
//! little-endian payloads; a JSON config blob rides along as a u8 tensor
//! named "config" so a checkpoint is self-describing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::datamodel::PadConfig;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{LinearHead, ModelBundle, ModelConfig, RealignLayer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WAFLCKP1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild the bundle and reproduce its preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub pad: PadConfig,
}

fn write_tensor<W: Write>(w: &mut W, name: &str, dims: &[u32], data: &[f64]) -> Result<()> {
    w.write_u32::<LittleEndian>(name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_u32::<LittleEndian>(dims.len() as u32)?;
    for &d in dims {
        w.write_u32::<LittleEndian>(d)?;
    }
    debug_assert_eq!(dims.iter().product::<u32>() as usize, data.len());
    for &v in data {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

fn write_blob<W: Write>(w: &mut W, name: &str, bytes: &[u8]) -> Result<()> {
    w.write_u32::<LittleEndian>(name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_u32::<LittleEndian>(1)?;
    w.write_u32::<LittleEndian>(bytes.len() as u32)?;
    w.write_all(bytes)?;
    Ok(())
}

pub fn save_checkpoint<P: AsRef<Path>>(path: P, bundle: &ModelBundle, pad: &PadConfig) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(13)?;
    for (prefix, layer) in [("realign_v", &bundle.realign_v), ("realign_a", &bundle.realign_a)] {
        for (suffix, m) in
            [("W0", &layer.w0), ("phi_up", &layer.phi_up), ("phi_down", &layer.phi_down)]
        {
            write_tensor(&mut w, &format!("{prefix}.{suffix}"), &[m.rows as u32, m.cols as u32], &m.data)?;
        }
    }
    for (prefix, head) in
        [("head_v", &bundle.head_v), ("head_a", &bundle.head_a), ("head_va", &bundle.head_va)]
    {
        write_tensor(&mut w, &format!("{prefix}.W"), &[head.w.len() as u32], &head.w)?;
        write_tensor(&mut w, &format!("{prefix}.b"), &[1], &[head.b])?;
    }
    let meta = CheckpointMeta { model: bundle.cfg, pad: pad.clone() };
    write_blob(&mut w, "config", &serde_json::to_vec(&meta)?)?;
    w.flush()?;
    Ok(())
}

struct RawTensor {
    dims: Vec<u32>,
    bytes: Vec<u8>,
}

impl RawTensor {
    fn as_f64(&self, name: &str) -> Result<Vec<f64>> {
        if self.bytes.len() % 4 != 0 {
            return Err(Error::Format(format!("tensor {name}: payload not f32-aligned")));
        }
        Ok(self
            .bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn expect_dims(&self, name: &str, dims: &[u32]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::DimensionMismatch(format!(
                "tensor {name}: dims {:?} but config implies {:?}",
                self.dims, dims
            )));
        }
        Ok(())
    }
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, RawTensor)> {
    let name_len = r.read_u32::<LittleEndian>().map_err(|_| truncated())? as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes).map_err(|_| truncated())?;
    let name =
        String::from_utf8(name_bytes).map_err(|_| Error::Format("tensor name not UTF-8".into()))?;
    let rank = r.read_u32::<LittleEndian>().map_err(|_| truncated())? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.read_u32::<LittleEndian>().map_err(|_| truncated())?);
    }
    let count: u64 = dims.iter().map(|&d| d as u64).product();
    // the config blob is u8 data, every other tensor is f32
    let width = if name == "config" { 1 } else { 4 };
    let mut bytes = vec![0u8; (count * width) as usize];
    r.read_exact(&mut bytes).map_err(|_| truncated())?;
    Ok((name, RawTensor { dims, bytes }))
}

fn truncated() -> Error {
    Error::Format("checkpoint truncated".into())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(ModelBundle, PadConfig)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("checkpoint too short".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| truncated())?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(|_| truncated())?;
    let mut tensors = std::collections::HashMap::new();
    for _ in 0..count {
        let (name, t) = read_tensor(&mut r)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    let get = |name: &str| {
        tensors.get(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    };

    let meta: CheckpointMeta = serde_json::from_slice(&get("config")?.bytes)?;
    meta.model.validate()?;
    let cfg = meta.model;

    let load_mat = |name: &str, rows: usize, cols: usize| -> Result<Mat> {
        let t = get(name)?;
        t.expect_dims(name, &[rows as u32, cols as u32])?;
        Ok(Mat::from_vec(rows, cols, t.as_f64(name)?))
    };
    let load_head = |prefix: &str, dim: usize| -> Result<LinearHead> {
        let wt = get(&format!("{prefix}.W"))?;
        wt.expect_dims(&format!("{prefix}.W"), &[dim as u32])?;
        let bt = get(&format!("{prefix}.b"))?;
        bt.expect_dims(&format!("{prefix}.b"), &[1])?;
        Ok(LinearHead { w: wt.as_f64(prefix)?, b: bt.as_f64(prefix)?[0] })
    };
    let load_layer = |prefix: &str, k: usize, d: usize| -> Result<RealignLayer> {
        let mut layer = RealignLayer::init(k, d, cfg.rank, cfg.alpha, cfg.dropout_rate, 0)?;
        layer.w0 = load_mat(&format!("{prefix}.W0"), d, k)?;
        layer.phi_up = load_mat(&format!("{prefix}.phi_up"), d, cfg.rank)?;
        layer.phi_down = load_mat(&format!("{prefix}.phi_down"), cfg.rank, k)?;
        Ok(layer)
    };

    let bundle = ModelBundle {
        realign_v: load_layer("realign_v", cfg.k_v, cfg.d_v)?,
        realign_a: load_layer("realign_a", cfg.k_a, cfg.d_a)?,
        head_v: load_head("head_v", cfg.d_v)?,
        head_a: load_head("head_a", cfg.d_a)?,
        head_va: load_head("head_va", cfg.d_v + cfg.d_a)?,
        cfg,
    };
    Ok((bundle, meta.pad))
}
