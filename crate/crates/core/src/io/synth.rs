use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::io::manifest::{CaseEntry, DatasetManifest, ManifestError};
use crate::io::volume_file::{write_image, write_mask};
use crate::tensor::Dims3;
use crate::volume::{voxel_count, Image, LabelMask, Spacing, Volume};

/// Phantom generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_cases: usize,
    pub dims: Dims3,
    pub spacing: Spacing,
    /// Tissue background intensity.
    pub background: f64,
    /// Lesion intensity above background.
    pub contrast: f64,
    /// Noise standard deviation as a fraction of `contrast`.
    pub noise: f64,
    /// Node intensity relative to background, as a multiple of `contrast`.
    /// Negative values give hypodense (darker) nodes.
    pub node_contrast: f64,
    /// Distractor intensity above background, as a multiple of `contrast`.
    pub distractor_contrast: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_cases: 20,
            dims: [16, 64, 64],
            spacing: [1.199, 0.5, 0.5],
            background: 100.0,
            contrast: 60.0,
            noise: 0.5,
            node_contrast: -1.0,
            distractor_contrast: 2.5,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum::<f64>() <= 1.0
    }

    /// Conservative separation test on the bounding boxes.
    fn far_from(&self, other: &Ellipsoid, margin: f64) -> bool {
        (0..3).any(|a| (self.center[a] - other.center[a]).abs() > self.radii[a] + other.radii[a] + margin)
    }
}

fn case_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64 + 1);
    r
}

fn scaled(d: usize, frac: f64) -> f64 {
    d as f64 * frac
}

/// Generates one phantom: a central primary lesion (label 1), 0-2 lateral
/// nodes (label 2) and a few brighter unlabelled blobs, on a noisy background
/// with a gentle intensity gradient.
pub fn synth_case(config: &SynthConfig, index: usize) -> Volume {
    let mut rng = case_rng(config.seed, index);
    let d = config.dims;
    let mid = [d[0] as f64 / 2.0 - 0.5, d[1] as f64 / 2.0 - 0.5, d[2] as f64 / 2.0 - 0.5];
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);

    let primary = Ellipsoid {
        center: [mid[0] + u(-0.06, 0.06) * d[0] as f64, mid[1] + u(-0.05, 0.05) * d[1] as f64, mid[2] + u(-0.03, 0.03) * d[2] as f64],
        radii: [scaled(d[0], u(0.18, 0.3)), scaled(d[1], u(0.1, 0.17)), scaled(d[2], u(0.08, 0.13))],
    };
    let n_nodes = rng.random_range(0..=2usize);
    let mut nodes: Vec<Ellipsoid> = Vec::new();
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let sides: [f64; 2] = if u(0.0, 1.0) < 0.5 { [-1.0, 1.0] } else { [1.0, -1.0] };
    for &side in sides.iter().take(n_nodes) {
        // x extents: primary within 16% of the middle, nodes 18-46% out
        let r = [scaled(d[0], u(0.18, 0.26)), scaled(d[1], u(0.09, 0.13)), scaled(d[2], u(0.08, 0.12))];
        let node = Ellipsoid {
            center: [mid[0] + u(-0.1, 0.1) * d[0] as f64, mid[1] + u(-0.2, 0.2) * d[1] as f64, mid[2] + side * u(0.3, 0.34) * d[2] as f64],
            radii: r,
        };
        nodes.push(node);
    }
    let mut distractors: Vec<Ellipsoid> = Vec::new();
    let n_distractors = rng.random_range(2..=4usize);
    let mut attempts = 0;
    while distractors.len() < n_distractors && attempts < 200 {
        attempts += 1;
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let cand = Ellipsoid {
            center: [u(0.2, 0.8) * d[0] as f64, u(0.1, 0.9) * d[1] as f64, u(0.1, 0.9) * d[2] as f64],
            radii: [scaled(d[0], u(0.06, 0.1)).max(1.0), scaled(d[1], u(0.03, 0.05)), scaled(d[2], u(0.03, 0.05))],
        };
        let clear = cand.far_from(&primary, 2.0) && nodes.iter().chain(&distractors).all(|n| cand.far_from(n, 2.0));
        if clear {
            distractors.push(cand);
        }
    }

    let gradient = [u_sym(&mut rng), u_sym(&mut rng), u_sym(&mut rng)];
    let noise = Normal::new(0.0, config.noise * config.contrast).expect("finite noise");
    let n = voxel_count(d);
    let mut image = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for z in 0..d[0] {
        for y in 0..d[1] {
            for x in 0..d[2] {
                let p = [z as f64, y as f64, x as f64];
                let mut v = config.background;
                for a in 0..3 {
                    v += gradient[a] * config.contrast * 0.25 * (p[a] - mid[a]) / d[a] as f64;
                }
                let label = if primary.contains(p) {
                    v += config.contrast;
                    1
                } else if nodes.iter().any(|e| e.contains(p)) {
                    v += config.node_contrast * config.contrast;
                    2
                } else {
                    if distractors.iter().any(|e| e.contains(p)) {
                        v += config.distractor_contrast * config.contrast;
                    }
                    0
                };
                v += noise.sample(&mut rng);
                image.push(v as f32);
                labels.push(label);
            }
        }
    }
    Volume::new(format!("case_{index:03}"), Image::new(d, config.spacing, image), LabelMask::new(d, config.spacing, labels))
}

fn u_sym(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

pub fn synth_cases(config: &SynthConfig) -> Vec<Volume> {
    (0..config.n_cases).map(|i| synth_case(config, i)).collect()
}

/// Writes all cases under `dir` (images/ and masks/) plus `dir/manifest.json`.
pub fn synth_generate(config: &SynthConfig, dir: &Path) -> Result<DatasetManifest, ManifestError> {
    let io = |source, path: &Path| ManifestError::Io { path: path.display().to_string(), source };
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| io(e, &p))?;
    }
    let mut cases = Vec::with_capacity(config.n_cases);
    for i in 0..config.n_cases {
        let v = synth_case(config, i);
        let image = format!("images/{}.svl", v.case_id);
        let mask = format!("masks/{}.svl", v.case_id);
        write_image(&v.image, &v.case_id, &dir.join(&image))?;
        write_mask(&v.mask, &v.case_id, &dir.join(&mask))?;
        cases.push(CaseEntry { case_id: v.case_id, image: Some(image), mask: Some(mask) });
    }
    let manifest = DatasetManifest { spacing: config.spacing, seed: Some(config.seed), cases };
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}
