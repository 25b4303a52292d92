use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::network::config::{ConfigError, NetworkConfig};
use crate::network::model::SegNetwork;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"UMCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("parameter {name}: {detail}")]
    Param { name: String, detail: String },
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Serializes the config and every parameter (as little-endian f64, in registration order).
pub fn write_checkpoint<T: Scalar>(net: &SegNetwork<T>, w: &mut impl Write) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    let cfg = serde_json::to_vec(&net.config)?;
    put_u32(w, cfg.len() as u32)?;
    w.write_all(&cfg)?;
    put_u32(w, net.store.len() as u32)?;
    for (_, p) in net.store.iter() {
        put_u32(w, p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        put_u32(w, p.value.rank() as u32)?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.numel() * 8);
        for &v in p.value.data() {
            buf.extend_from_slice(&v.to_acc().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Rebuilds the network from its stored config and restores every parameter.
pub fn read_checkpoint<T: Scalar>(r: &mut impl Read) -> Result<SegNetwork<T>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut cfg = vec![0u8; get_u32(r)? as usize];
    r.read_exact(&mut cfg)?;
    let config: NetworkConfig = serde_json::from_slice(&cfg)?;
    let mut net = SegNetwork::<T>::build(config, 0)?;
    let count = get_u32(r)? as usize;
    if count != net.store.len() {
        return Err(CheckpointError::Param {
            name: "*".into(),
            detail: format!("checkpoint holds {count} tensors, network has {}", net.store.len()),
        });
    }
    for _ in 0..count {
        let mut name = vec![0u8; get_u32(r)? as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8_lossy(&name).into_owned();
        let rank = get_u32(r)? as usize;
        let shape = (0..rank).map(|_| get_u64(r).map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>()?;
        let id = net.store.find(&name).ok_or_else(|| CheckpointError::Param {
            name: name.clone(),
            detail: "not part of the network".into(),
        })?;
        let expected = net.store.get(id).value.shape().to_vec();
        if shape != expected {
            return Err(CheckpointError::Param { name, detail: format!("shape {shape:?}, expected {expected:?}") });
        }
        let numel: usize = shape.iter().product();
        let mut buf = vec![0u8; numel * 8];
        r.read_exact(&mut buf)?;
        let data: Vec<T> = buf
            .chunks_exact(8)
            .map(|c| T::from_acc(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        net.store.get_mut(id).value = Tensor::new(&shape, data).expect("shape checked");
    }
    Ok(net)
}

pub fn save_checkpoint<T: Scalar>(net: &SegNetwork<T>, path: &Path) -> Result<(), CheckpointError> {
    let mut bytes = Vec::new();
    write_checkpoint(net, &mut bytes)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<SegNetwork<T>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
