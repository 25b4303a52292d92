use rand::Rng;

use crate::tensor::Dims3;
use crate::volume::{flat_index, Volume};

/// A training crop. `origin` is the volume coordinate of the patch corner and
/// may be negative when the patch overhangs the volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub dims: Dims3,
    pub origin: [isize; 3],
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
}

/// Inclusive range of admissible corner positions along one axis. Axes shorter
/// than the patch get a single, centred placement.
pub fn origin_range(dim: usize, patch: usize) -> (isize, isize) {
    if dim >= patch {
        (0, (dim - patch) as isize)
    } else {
        let lo = -(((patch - dim) / 2) as isize);
        (lo, lo)
    }
}

/// Copies the window at `origin`, padding the image with 0 and the mask with background.
pub fn extract_patch(volume: &Volume, origin: [isize; 3], dims: Dims3) -> Patch {
    let vd = volume.dims();
    let n: usize = dims.iter().product();
    let mut image = vec![0.0f32; n];
    let mut mask = vec![0u8; n];
    let inside = |c: isize, a: usize| c >= 0 && (c as usize) < vd[a];
    let mut o = 0;
    for z in 0..dims[0] {
        let vz = origin[0] + z as isize;
        for y in 0..dims[1] {
            let vy = origin[1] + y as isize;
            if !inside(vz, 0) || !inside(vy, 1) {
                o += dims[2];
                continue;
            }
            for x in 0..dims[2] {
                let vx = origin[2] + x as isize;
                if inside(vx, 2) {
                    let i = flat_index(vd, vz as usize, vy as usize, vx as usize);
                    image[o] = volume.image.data[i];
                    mask[o] = volume.mask.labels[i];
                }
                o += 1;
            }
        }
    }
    Patch { dims, origin, image, mask }
}

/// With probability `foreground_oversample` the patch is centred on a uniformly
/// chosen foreground voxel (shifted only as far as needed to stay inside the
/// volume, which keeps that voxel in the patch); otherwise the placement is
/// uniform over all admissible positions.
pub fn sample_patch(volume: &Volume, patch: Dims3, foreground_oversample: f64, rng: &mut impl Rng) -> Patch {
    let vd = volume.dims();
    let ranges: Vec<(isize, isize)> = (0..3).map(|a| origin_range(vd[a], patch[a])).collect();
    let force_fg = rng.random::<f64>() < foreground_oversample;
    let fg_count = if force_fg { volume.mask.labels.iter().filter(|&&l| l > 0).count() } else { 0 };
    let origin = if fg_count > 0 {
        let pick = rng.random_range(0..fg_count);
        let idx = volume
            .mask
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0)
            .nth(pick)
            .map(|(i, _)| i)
            .expect("pick < count");
        let voxel = [idx / (vd[1] * vd[2]), (idx / vd[2]) % vd[1], idx % vd[2]];
        std::array::from_fn(|a| (voxel[a] as isize - (patch[a] / 2) as isize).clamp(ranges[a].0, ranges[a].1))
    } else {
        std::array::from_fn(|a| rng.random_range(ranges[a].0 as i64..=ranges[a].1 as i64) as isize)
    };
    extract_patch(volume, origin, patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Image, LabelMask};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn volume(dims: Dims3) -> Volume {
        let n = dims.iter().product();
        Volume::new(
            "c",
            Image::new(dims, [1.0; 3], (0..n).map(|v| v as f32).collect()),
            LabelMask::empty(dims, [1.0; 3]),
        )
    }

    #[test]
    fn forced_foreground_always_inside() {
        let mut v = volume([10, 20, 30]);
        let fg = [9, 1, 27];
        let i = flat_index(v.dims(), fg[0], fg[1], fg[2]);
        v.mask.labels[i] = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p = sample_patch(&v, [4, 8, 8], 1.0, &mut rng);
            for a in 0..3 {
                let rel = fg[a] as isize - p.origin[a];
                assert!(rel >= 0 && rel < p.dims[a] as isize);
            }
            assert_eq!(p.mask.iter().filter(|&&l| l == 2).count(), 1);
        }
    }

    #[test]
    fn uniform_placement_chi_square() {
        let v = volume([1, 1, 14]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 11];
        let draws = 10_000;
        for _ in 0..draws {
            let p = sample_patch(&v, [1, 1, 4], 0.0, &mut rng);
            counts[p.origin[2] as usize] += 1;
        }
        let e = draws as f64 / counts.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 10 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 29.59, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn small_volume_is_padded() {
        let v = volume([2, 3, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_patch(&v, [4, 4, 4], 0.3, &mut rng);
        assert_eq!(p.dims, [4, 4, 4]);
        assert_eq!(p.image.len(), 64);
        assert_eq!(p.origin, [-1, 0, 0]);
        let kept: f32 = p.image.iter().sum();
        assert_eq!(kept, v.image.data.iter().sum::<f32>());
    }
}
