use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Dims3;
use crate::volume::{voxel_count, Image, LabelMask, Spacing};

pub const MAGIC: &[u8; 4] = b"SVL1";

#[derive(Debug, Error)]
pub enum VolumeIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic {0:?}, expected \"SVL1\"")]
    BadMagic([u8; 4]),
    #[error("header is shorter than its declared length ({declared} bytes)")]
    HeaderShort { declared: usize },
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("header: {0}")]
    Invalid(String),
    #[error("payload short by {0} bytes")]
    PayloadShort(usize),
    #[error("payload has {0} trailing bytes beyond dims")]
    PayloadLong(usize),
    #[error("mask value {value} at voxel {index} outside {{0, 1, 2}}")]
    BadLabel { value: u8, index: usize },
    #[error("expected a {expected} volume, found {found}")]
    Role { expected: Role, found: Role },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Image,
    Mask,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Image => "image",
            Role::Mask => "mask",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: Dims3,
    pub spacing: Spacing,
    pub dtype: Dtype,
    pub role: Role,
    pub case_id: String,
}

/// Decoded file contents.
#[derive(Clone, Debug, PartialEq)]
pub enum VolumeData {
    Image(Image),
    Mask(LabelMask),
}

fn encode(header: &VolumeHeader, payload: &[u8]) -> Result<Vec<u8>, VolumeIoError> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn encode_image(image: &Image, case_id: &str) -> Result<Vec<u8>, VolumeIoError> {
    let header = VolumeHeader { dims: image.dims, spacing: image.spacing, dtype: Dtype::F32, role: Role::Image, case_id: case_id.into() };
    let payload: Vec<u8> = image.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    encode(&header, &payload)
}

pub fn encode_mask(mask: &LabelMask, case_id: &str) -> Result<Vec<u8>, VolumeIoError> {
    if let Some((index, &value)) = mask.labels.iter().enumerate().find(|(_, &v)| v > 2) {
        return Err(VolumeIoError::BadLabel { value, index });
    }
    let header = VolumeHeader { dims: mask.dims, spacing: mask.spacing, dtype: Dtype::U8, role: Role::Mask, case_id: case_id.into() };
    encode(&header, &mask.labels)
}

pub fn decode(bytes: &[u8]) -> Result<(VolumeHeader, VolumeData), VolumeIoError> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| VolumeIoError::BadMagic(magic))?;
    if &magic != MAGIC {
        return Err(VolumeIoError::BadMagic(magic));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| VolumeIoError::HeaderShort { declared: 4 })?;
    let hlen = u32::from_le_bytes(len) as usize;
    if r.len() < hlen {
        return Err(VolumeIoError::HeaderShort { declared: hlen });
    }
    let header: VolumeHeader = serde_json::from_slice(&r[..hlen])?;
    let payload = &r[hlen..];
    if header.dims.contains(&0) || header.spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(VolumeIoError::Invalid(format!("dims {:?} / spacing {:?} must be positive", header.dims, header.spacing)));
    }
    let expected_dtype = match header.role {
        Role::Image => Dtype::F32,
        Role::Mask => Dtype::U8,
    };
    if header.dtype != expected_dtype {
        return Err(VolumeIoError::Invalid(format!("{} volumes must be {:?}", header.role, expected_dtype)));
    }
    let want = voxel_count(header.dims) * header.dtype.size();
    if payload.len() < want {
        return Err(VolumeIoError::PayloadShort(want - payload.len()));
    }
    if payload.len() > want {
        return Err(VolumeIoError::PayloadLong(payload.len() - want));
    }
    let data = match header.role {
        Role::Image => {
            let v = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            VolumeData::Image(Image::new(header.dims, header.spacing, v))
        }
        Role::Mask => {
            if let Some((index, &value)) = payload.iter().enumerate().find(|(_, &v)| v > 2) {
                return Err(VolumeIoError::BadLabel { value, index });
            }
            VolumeData::Mask(LabelMask::new(header.dims, header.spacing, payload.to_vec()))
        }
    };
    Ok((header, data))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> VolumeIoError + '_ {
    move |source| VolumeIoError::Io { path: path.display().to_string(), source }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), VolumeIoError> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

pub fn write_image(image: &Image, case_id: &str, path: &Path) -> Result<(), VolumeIoError> {
    write_bytes(path, &encode_image(image, case_id)?)
}

pub fn write_mask(mask: &LabelMask, case_id: &str, path: &Path) -> Result<(), VolumeIoError> {
    write_bytes(path, &encode_mask(mask, case_id)?)
}

pub fn read_volume(path: &Path) -> Result<(VolumeHeader, VolumeData), VolumeIoError> {
    decode(&std::fs::read(path).map_err(io_err(path))?)
}

pub fn read_image(path: &Path) -> Result<Image, VolumeIoError> {
    match read_volume(path)? {
        (_, VolumeData::Image(i)) => Ok(i),
        (h, _) => Err(VolumeIoError::Role { expected: Role::Image, found: h.role }),
    }
}

pub fn read_mask(path: &Path) -> Result<LabelMask, VolumeIoError> {
    match read_volume(path)? {
        (_, VolumeData::Mask(m)) => Ok(m),
        (h, _) => Err(VolumeIoError::Role { expected: Role::Mask, found: h.role }),
    }
}
