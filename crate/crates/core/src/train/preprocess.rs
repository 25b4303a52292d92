use crate::tensor::Dims3;
use crate::train::TrainError;
use crate::volume::{Image, LabelMask, Spacing, Volume};

/// Whole-image standardization to mean 0 and population standard deviation 1.
/// A constant image maps to zeros.
pub fn zscore_normalize(image: &Image) -> Image {
    let n = image.data.len().max(1) as f64;
    let mean = image.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let data = if std < 1e-8 {
        vec![0.0; image.data.len()]
    } else {
        image.data.iter().map(|&v| ((v as f64 - mean) / std) as f32).collect()
    };
    Image { data, ..image.clone() }
}

/// Interpolation order for [`resample`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Linear,
    /// Catmull-Rom cubic.
    Cubic,
}

impl Interp {
    pub fn from_order(order: u8) -> Result<Self, TrainError> {
        match order {
            0 => Ok(Interp::Nearest),
            1 => Ok(Interp::Linear),
            3 => Ok(Interp::Cubic),
            o => Err(TrainError::Resample(format!("unsupported interpolation order {o}"))),
        }
    }
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Sample taps `(index, weight)` for output position `i` of a length-`n_in` axis.
fn taps(i: usize, n_in: usize, n_out: usize, interp: Interp) -> Vec<(usize, f64)> {
    let src = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let clamp = |j: isize| j.clamp(0, n_in as isize - 1) as usize;
    match interp {
        Interp::Nearest => vec![(clamp((src + 0.5).floor() as isize), 1.0)],
        Interp::Linear => {
            let j = src.floor() as isize;
            let t = src - j as f64;
            vec![(clamp(j), 1.0 - t), (clamp(j + 1), t)]
        }
        Interp::Cubic => {
            let j = src.floor() as isize;
            let w = catmull_rom(src - j as f64);
            (0..4).map(|k| (clamp(j - 1 + k as isize), w[k])).collect()
        }
    }
}

fn resample_axis(data: &[f64], dims: Dims3, axis: usize, n_out: usize, interp: Interp) -> (Vec<f64>, Dims3) {
    let mut out_dims = dims;
    out_dims[axis] = n_out;
    let table: Vec<Vec<(usize, f64)>> = (0..n_out).map(|i| taps(i, dims[axis], n_out, interp)).collect();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut out = vec![0.0; out_dims.iter().product()];
    let mut o = 0;
    for z in 0..out_dims[0] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[2] {
                let pos = [z, y, x];
                let mut base = 0;
                for a in 0..3 {
                    if a != axis {
                        base += pos[a] * strides[a];
                    }
                }
                out[o] = table[pos[axis]].iter().map(|&(j, w)| w * data[base + j * strides[axis]]).sum();
                o += 1;
            }
        }
    }
    (out, out_dims)
}

fn resample_field(data: Vec<f64>, dims: Dims3, out_dims: Dims3, interp: Interp) -> Vec<f64> {
    let (mut data, mut dims) = (data, dims);
    for axis in 0..3 {
        if dims[axis] != out_dims[axis] {
            (data, dims) = resample_axis(&data, dims, axis, out_dims[axis], interp);
        }
    }
    data
}

pub fn resampled_dims(dims: Dims3, spacing: Spacing, target: Spacing) -> Result<Dims3, TrainError> {
    let mut out = [0; 3];
    for a in 0..3 {
        if !(target[a] > 0.0) || !(spacing[a] > 0.0) {
            return Err(TrainError::Resample(format!("spacings must be positive, got {spacing:?} -> {target:?}")));
        }
        let d = (dims[a] as f64 * spacing[a] / target[a]).round();
        if d < 1.0 {
            return Err(TrainError::Resample(format!("axis {a} would shrink to {d} voxels")));
        }
        out[a] = d as usize;
    }
    Ok(out)
}

pub fn resample_image(image: &Image, target: Spacing, interp: Interp) -> Result<Image, TrainError> {
    let out_dims = resampled_dims(image.dims, image.spacing, target)?;
    let data = resample_field(image.data.iter().map(|&v| v as f64).collect(), image.dims, out_dims, interp);
    Ok(Image::new(out_dims, target, data.into_iter().map(|v| v as f32).collect()))
}

/// Nearest: label lookup. Linear: each label's indicator map is interpolated
/// and the voxel takes the label with the largest value.
pub fn resample_mask(mask: &LabelMask, target: Spacing, interp: Interp) -> Result<LabelMask, TrainError> {
    let out_dims = resampled_dims(mask.dims, mask.spacing, target)?;
    let n_out = out_dims.iter().product();
    let labels = match interp {
        Interp::Nearest => {
            let data = resample_field(mask.labels.iter().map(|&v| v as f64).collect(), mask.dims, out_dims, Interp::Nearest);
            data.into_iter().map(|v| v.round() as u8).collect()
        }
        Interp::Linear | Interp::Cubic => {
            let mut best = vec![(f64::NEG_INFINITY, 0u8); n_out];
            for l in 0..=mask.max_label() {
                let ind = mask.labels.iter().map(|&v| if v == l { 1.0 } else { 0.0 }).collect();
                let field = resample_field(ind, mask.dims, out_dims, interp);
                for (b, v) in best.iter_mut().zip(field) {
                    if v > b.0 {
                        *b = (v, l);
                    }
                }
            }
            best.into_iter().map(|(_, l)| l).collect()
        }
    };
    Ok(LabelMask::new(out_dims, target, labels))
}

/// Resamples image and mask to `target` spacing.
pub fn resample(volume: &Volume, target: Spacing, image_order: u8, mask_order: u8) -> Result<Volume, TrainError> {
    if mask_order > 1 {
        return Err(TrainError::Resample(format!("mask order must be 0 or 1, got {mask_order}")));
    }
    let image = resample_image(&volume.image, target, Interp::from_order(image_order)?)?;
    let mask = resample_mask(&volume.mask, target, Interp::from_order(mask_order)?)?;
    Ok(Volume::new(volume.case_id.clone(), image, mask))
}
