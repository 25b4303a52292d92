use crate::network::SegNetwork;
use crate::ops::softmax_channels;
use crate::scalar::Scalar;
use crate::tensor::{Dims3, Tensor};
use crate::train::preprocess::zscore_normalize;
use crate::train::sampling::origin_range;
use crate::train::TrainError;
use crate::volume::{voxel_count, Image, LabelMask, Volume};

/// Window corners along one axis: stride `patch / 2`, with the last window
/// flush against the far edge. Axes no longer than the patch get one padded window.
pub fn window_starts(dim: usize, patch: usize) -> Vec<isize> {
    if dim <= patch {
        return vec![origin_range(dim, patch).0];
    }
    let step = (patch / 2).max(1);
    let last = dim - patch;
    let mut starts: Vec<isize> = (0..last).step_by(step).map(|s| s as isize).collect();
    starts.push(last as isize);
    starts
}

pub fn window_grid(dims: Dims3, patch: Dims3) -> Vec<[isize; 3]> {
    let (zs, ys, xs) = (window_starts(dims[0], patch[0]), window_starts(dims[1], patch[1]), window_starts(dims[2], patch[2]));
    let mut out = Vec::with_capacity(zs.len() * ys.len() * xs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([z, y, x]);
            }
        }
    }
    out
}

/// Number of windows covering each voxel.
pub fn coverage_map(dims: Dims3, patch: Dims3) -> Vec<f64> {
    let mut acc = vec![0.0; voxel_count(dims)];
    for origin in window_grid(dims, patch) {
        for_each_overlap(dims, patch, origin, |vi, _| acc[vi] += 1.0);
    }
    acc
}

/// Calls `f(volume_index, patch_index)` for every patch voxel inside the volume.
fn for_each_overlap(dims: Dims3, patch: Dims3, origin: [isize; 3], mut f: impl FnMut(usize, usize)) {
    for z in 0..patch[0] {
        let vz = origin[0] + z as isize;
        if vz < 0 || vz as usize >= dims[0] {
            continue;
        }
        for y in 0..patch[1] {
            let vy = origin[1] + y as isize;
            if vy < 0 || vy as usize >= dims[1] {
                continue;
            }
            for x in 0..patch[2] {
                let vx = origin[2] + x as isize;
                if vx < 0 || vx as usize >= dims[2] {
                    continue;
                }
                let vi = (vz as usize * dims[1] + vy as usize) * dims[2] + vx as usize;
                f(vi, (z * patch[1] + y) * patch[2] + x);
            }
        }
    }
}

/// Class probabilities `[K, Z, Y, X]` of one network over an already
/// normalized image, tiled with uniform window weights.
pub fn sliding_window_probs<T: Scalar>(net: &SegNetwork<T>, image: &Image, patch: Dims3) -> Result<Vec<f64>, TrainError> {
    let dims = image.dims;
    let k = net.config.n_classes;
    let nv = voxel_count(dims);
    let np = voxel_count(patch);
    let mut acc = vec![0.0; k * nv];
    let mut weight = vec![0.0; nv];
    let dummy = Volume::new("", image.clone(), LabelMask::empty(dims, image.spacing));
    for origin in window_grid(dims, patch) {
        let crop = crate::train::sampling::extract_patch(&dummy, origin, patch);
        let x = Tensor::new(&[1, 1, patch[0], patch[1], patch[2]], crop.image.iter().map(|&v| T::from_acc(v as f64)).collect())?;
        let probs = softmax_channels(&net.predict_logits(&x)?)?;
        let p = probs.data();
        for_each_overlap(dims, patch, origin, |vi, pi| {
            weight[vi] += 1.0;
            for c in 0..k {
                acc[c * nv + vi] += p[c * np + pi].to_acc();
            }
        });
    }
    for c in 0..k {
        for (a, w) in acc[c * nv..(c + 1) * nv].iter_mut().zip(&weight) {
            *a /= w;
        }
    }
    Ok(acc)
}

/// Z-scores `image`, averages the per-model tiled softmax maps, and takes the
/// per-voxel argmax (ties go to the lower label).
pub fn ensemble_predict<T: Scalar>(nets: &[SegNetwork<T>], image: &Image, patch: Dims3) -> Result<LabelMask, TrainError> {
    if nets.is_empty() {
        return Err(TrainError::Config("ensemble_predict needs at least one checkpoint".into()));
    }
    let norm = zscore_normalize(image);
    let nv = voxel_count(image.dims);
    let k = nets[0].config.n_classes;
    let mut mean = vec![0.0; k * nv];
    for net in nets {
        if net.config.n_classes != k {
            return Err(TrainError::Config("ensemble members disagree on n_classes".into()));
        }
        let p = sliding_window_probs(net, &norm, patch)?;
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / nets.len() as f64;
        }
    }
    let labels = (0..nv)
        .map(|vi| {
            let mut best = 0;
            for c in 1..k {
                if mean[c * nv + vi] > mean[best * nv + vi] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    Ok(LabelMask::new(image.dims, image.spacing, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkConfig, Variant};

    #[test]
    fn starts_cover_and_end_flush() {
        assert_eq!(window_starts(64, 64), vec![0]);
        assert_eq!(window_starts(100, 64), vec![0, 32, 36]);
        assert_eq!(window_starts(128, 64), vec![0, 32, 64]);
        assert_eq!(window_starts(10, 16), vec![-3]);
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        for (dims, patch) in [([20, 70, 45], [8, 32, 16]), ([16, 64, 64], [16, 64, 64]), ([5, 9, 33], [4, 8, 8])] {
            let cov = coverage_map(dims, patch);
            assert!(cov.iter().all(|&c| c >= 1.0));
            // every window contributes 1 / coverage at each voxel it touches
            let mut total = vec![0.0; cov.len()];
            for origin in window_grid(dims, patch) {
                for_each_overlap(dims, patch, origin, |vi, _| total[vi] += 1.0 / cov[vi]);
            }
            assert!(total.iter().all(|t| (t - 1.0).abs() < 1e-12));
        }
    }

    fn tiny_net(seed: u64) -> SegNetwork<f32> {
        let mut c = NetworkConfig::desk().with_variant(Variant::UmambaAdj);
        for (s, f) in c.stages.iter_mut().zip([4, 8, 8, 8]) {
            s.features = f;
        }
        c.mamba.state_size = 2;
        SegNetwork::build(c, seed).unwrap()
    }

    fn image(dims: Dims3) -> Image {
        Image::new(dims, [1.0; 3], (0..voxel_count(dims)).map(|i| ((i * 37) % 11) as f32).collect())
    }

    #[test]
    fn single_window_equals_forward_argmax() {
        let net = tiny_net(2);
        let img = image([4, 8, 8]);
        let pred = ensemble_predict(std::slice::from_ref(&net), &img, [4, 8, 8]).unwrap();
        let norm = zscore_normalize(&img);
        let x = Tensor::new(&[1, 1, 4, 8, 8], norm.data.clone()).unwrap();
        let logits = net.predict_logits(&x).unwrap();
        let expect: Vec<u8> = (0..256)
            .map(|v| {
                let l: Vec<f32> = (0..3).map(|c| logits.data()[c * 256 + v]).collect();
                let mut best = 0;
                for c in 1..3 {
                    if l[c] > l[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        assert_eq!(pred.labels, expect);
    }

    #[test]
    fn duplicate_members_match_single() {
        let net = tiny_net(4);
        let img = image([6, 12, 10]);
        let one = ensemble_predict(std::slice::from_ref(&net), &img, [4, 8, 8]).unwrap();
        let two = ensemble_predict(&[net.clone(), net], &img, [4, 8, 8]).unwrap();
        assert_eq!(one, two);
    }
}
