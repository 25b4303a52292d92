use crate::metrics::dice_binary;
use crate::train::preprocess::zscore_normalize;
use crate::volume::{Image, LabelMask, Volume};

/// Candidate thresholds on z-scored intensity.
const GRID: (f64, f64, usize) = (-1.0, 0.05, 101);

fn above(image: &Image, t: f64) -> Vec<bool> {
    zscore_normalize(image).data.iter().map(|&v| v as f64 > t).collect()
}

/// The single global threshold on z-scored intensity that maximizes mean
/// foreground Dice over `cases`. Ties keep the lowest threshold.
pub fn fit_threshold(cases: &[&Volume]) -> f64 {
    let norm: Vec<(Vec<f32>, Vec<bool>)> =
        cases.iter().map(|c| (zscore_normalize(&c.image).data, c.mask.select(None))).collect();
    let mut best = (GRID.0, f64::NEG_INFINITY);
    for k in 0..GRID.2 {
        let t = GRID.0 + k as f64 * GRID.1;
        let score: f64 = norm
            .iter()
            .map(|(img, gt)| {
                let p: Vec<bool> = img.iter().map(|&v| v as f64 > t).collect();
                dice_binary(&p, gt)
            })
            .sum::<f64>()
            / norm.len().max(1) as f64;
        if score > best.1 {
            best = (t, score);
        }
    }
    best.0
}

/// Labels every voxel above `threshold` (z-scored) as 1.
pub fn threshold_mask(image: &Image, threshold: f64) -> LabelMask {
    let labels = above(image, threshold).into_iter().map(u8::from).collect();
    LabelMask::new(image.dims, image.spacing, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_image_is_segmented_exactly() {
        let data: Vec<f32> = (0..64).map(|i| if i % 4 == 0 { 10.0 } else { 0.0 }).collect();
        let labels: Vec<u8> = data.iter().map(|&v| (v > 5.0) as u8).collect();
        let v = Volume::new("a", Image::new([4, 4, 4], [1.0; 3], data), LabelMask::new([4, 4, 4], [1.0; 3], labels));
        let t = fit_threshold(&[&v]);
        assert_eq!(threshold_mask(&v.image, t).labels.iter().map(|&l| l > 0).collect::<Vec<_>>(), v.mask.select(None));
    }
}
