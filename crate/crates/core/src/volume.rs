use serde::{Deserialize, Serialize};

use crate::tensor::Dims3;

/// Voxel spacing in millimetres along (z, y, x).
pub type Spacing = [f64; 3];

pub fn voxel_count(dims: Dims3) -> usize {
    dims.iter().product()
}

/// Row-major index with z slowest.
#[inline]
pub fn flat_index(dims: Dims3, z: usize, y: usize, x: usize) -> usize {
    (z * dims[1] + y) * dims[2] + x
}

/// Scalar intensity grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub dims: Dims3,
    pub spacing: Spacing,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(dims: Dims3, spacing: Spacing, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), voxel_count(dims), "image data does not match dims {dims:?}");
        Self { dims, spacing, data }
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[flat_index(self.dims, z, y, x)]
    }
}

/// Integer label grid: 0 background, 1 primary tumour, 2 nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMask {
    pub dims: Dims3,
    pub spacing: Spacing,
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(dims: Dims3, spacing: Spacing, labels: Vec<u8>) -> Self {
        assert_eq!(labels.len(), voxel_count(dims), "mask data does not match dims {dims:?}");
        Self { dims, spacing, labels }
    }

    pub fn empty(dims: Dims3, spacing: Spacing) -> Self {
        Self::new(dims, spacing, vec![0; voxel_count(dims)])
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> u8 {
        self.labels[flat_index(self.dims, z, y, x)]
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Binary mask of `label` (or of all foreground when `label` is `None`).
    pub fn select(&self, label: Option<u8>) -> Vec<bool> {
        match label {
            Some(l) => self.labels.iter().map(|&v| v == l).collect(),
            None => self.labels.iter().map(|&v| v > 0).collect(),
        }
    }
}

/// One case: image plus reference segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub case_id: String,
    pub image: Image,
    pub mask: LabelMask,
}

impl Volume {
    pub fn new(case_id: impl Into<String>, image: Image, mask: LabelMask) -> Self {
        assert_eq!(image.dims, mask.dims, "image and mask dims differ");
        Self { case_id: case_id.into(), image, mask }
    }

    pub fn dims(&self) -> Dims3 {
        self.image.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.image.spacing
    }
}
