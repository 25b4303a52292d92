use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::volume_file::{read_image, read_mask, VolumeIoError};
use crate::volume::{Image, LabelMask, Spacing, Volume};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Volume(#[from] VolumeIoError),
    #[error("manifest: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

/// Case list with paths relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub spacing: Spacing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub cases: Vec<CaseEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
        let m: Self = serde_json::from_str(&text)?;
        m.check_ids()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        self.check_ids()?;
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|source| ManifestError::Io { path: path.display().to_string(), source })
    }

    fn check_ids(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        for c in &self.cases {
            if !seen.insert(&c.case_id) {
                return Err(ManifestError::Invalid(format!("duplicate case_id {:?}", c.case_id)));
            }
        }
        Ok(())
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.cases.iter().map(|c| c.case_id.clone()).collect()
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads every case with both image and mask.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<Volume>), ManifestError> {
    let m = DatasetManifest::read(manifest_path)?;
    let base = base_dir(manifest_path);
    let mut out = Vec::with_capacity(m.cases.len());
    for c in &m.cases {
        let (Some(img), Some(mask)) = (&c.image, &c.mask) else {
            return Err(ManifestError::Invalid(format!("case {} needs both image and mask", c.case_id)));
        };
        let image = read_image(&resolve(&base, img))?;
        let mask = read_mask(&resolve(&base, mask))?;
        if image.dims != mask.dims {
            return Err(ManifestError::Invalid(format!("case {}: image {:?} vs mask {:?}", c.case_id, image.dims, mask.dims)));
        }
        out.push(Volume::new(c.case_id.clone(), image, mask));
    }
    Ok((m, out))
}

/// Loads `(case_id, image)` pairs; masks are not required.
pub fn load_images(manifest_path: &Path) -> Result<Vec<(String, Image)>, ManifestError> {
    let m = DatasetManifest::read(manifest_path)?;
    let base = base_dir(manifest_path);
    m.cases
        .iter()
        .map(|c| {
            let p = c.image.as_ref().ok_or_else(|| ManifestError::Invalid(format!("case {} has no image", c.case_id)))?;
            Ok((c.case_id.clone(), read_image(&resolve(&base, p))?))
        })
        .collect()
}

/// Loads `(case_id, mask)` pairs, e.g. a prediction set.
pub fn load_masks(manifest_path: &Path) -> Result<Vec<(String, LabelMask)>, ManifestError> {
    let m = DatasetManifest::read(manifest_path)?;
    let base = base_dir(manifest_path);
    m.cases
        .iter()
        .map(|c| {
            let p = c.mask.as_ref().ok_or_else(|| ManifestError::Invalid(format!("case {} has no mask", c.case_id)))?;
            Ok((c.case_id.clone(), read_mask(&resolve(&base, p))?))
        })
        .collect()
}
