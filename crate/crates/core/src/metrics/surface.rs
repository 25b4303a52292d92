use crate::tensor::Dims3;
use crate::volume::{flat_index, voxel_count, LabelMask, Spacing};

/// Which side of a comparison had no voxels of the label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptySide {
    Pred,
    Gt,
    Both,
}

/// Directed nearest-surface distances in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceDistances {
    pub pred_to_gt: Vec<f64>,
    pub gt_to_pred: Vec<f64>,
}

impl SurfaceDistances {
    pub fn all(&self) -> impl Iterator<Item = f64> + '_ {
        self.pred_to_gt.iter().chain(&self.gt_to_pred).copied()
    }
}

fn boundary_flags(labels: &[u8], dims: Dims3, label: u8) -> Vec<bool> {
    let [nz, ny, nx] = dims;
    let inside = |z: usize, y: usize, x: usize| labels[flat_index(dims, z, y, x)] == label;
    let mut out = vec![false; labels.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !inside(z, y, x) {
                    continue;
                }
                let edge = z == 0 || y == 0 || x == 0 || z + 1 == nz || y + 1 == ny || x + 1 == nx;
                out[flat_index(dims, z, y, x)] = edge
                    || !inside(z - 1, y, x)
                    || !inside(z + 1, y, x)
                    || !inside(z, y - 1, x)
                    || !inside(z, y + 1, x)
                    || !inside(z, y, x - 1)
                    || !inside(z, y, x + 1);
            }
        }
    }
    out
}

/// Label voxels with at least one face neighbour outside the label; the
/// grid exterior counts as outside. Returned in row-major order.
pub fn boundary_voxels(mask: &LabelMask, label: u8) -> Vec<[usize; 3]> {
    let d = mask.dims;
    let flags = boundary_flags(&mask.labels, d, label);
    flags
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| [i / (d[1] * d[2]), (i / d[2]) % d[1], i % d[2]])
        .collect()
}

/// Lower envelope of parabolas along one line: out[p] = min_q f[q] + ((p - q) * step)^2.
fn dt_line(f: &[f64], step: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let pos = |q: usize| q as f64 * step;
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&r) => {
                    let s = ((f[q] + pos(q) * pos(q)) - (f[r] + pos(r) * pos(r))) / (2.0 * (pos(q) - pos(r)));
                    if s <= *z.last().expect("parallel stacks") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < pos(p) {
            k += 1;
        }
        let d = (p as f64 - v[k] as f64) * step;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in mm²) from every voxel to the nearest
/// `true` site, by separable lower envelopes along x, y, then z. Infinite
/// everywhere when there are no sites.
pub fn distance_transform_sq(sites: &[bool], dims: Dims3, spacing: Spacing) -> Vec<f64> {
    let n = voxel_count(dims);
    assert_eq!(sites.len(), n, "site grid does not match dims");
    let mut g: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut zb) = (Vec::new(), Vec::new());
    let strides = [dims[1] * dims[2], dims[2], 1];
    for axis in [2, 1, 0] {
        let len = dims[axis];
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for start in 0..n {
            // visit each line once, from its first element
            if (start / strides[axis]) % len != 0 {
                continue;
            }
            for (i, l) in line.iter_mut().enumerate() {
                *l = g[start + i * strides[axis]];
            }
            dt_line(&line, spacing[axis], &mut out, &mut v, &mut zb);
            for (i, &o) in out.iter().enumerate() {
                g[start + i * strides[axis]] = o;
            }
        }
    }
    g
}

fn directed(from: &[bool], to_dt: &[f64]) -> Vec<f64> {
    from.iter().zip(to_dt).filter(|(&b, _)| b).map(|(_, &d)| d.sqrt()).collect()
}

/// Nearest-opposite-surface distance for every boundary voxel of each side,
/// between voxel centres scaled by `spacing`.
pub fn surface_distances(pred: &LabelMask, gt: &LabelMask, label: u8, spacing: Spacing) -> Result<SurfaceDistances, EmptySide> {
    assert_eq!(pred.dims, gt.dims, "masks differ in dims");
    let d = gt.dims;
    let bp = boundary_flags(&pred.labels, d, label);
    let bg = boundary_flags(&gt.labels, d, label);
    match (bp.contains(&true), bg.contains(&true)) {
        (false, false) => return Err(EmptySide::Both),
        (false, true) => return Err(EmptySide::Pred),
        (true, false) => return Err(EmptySide::Gt),
        _ => {}
    }
    let dt_gt = distance_transform_sq(&bg, d, spacing);
    let dt_pred = distance_transform_sq(&bp, d, spacing);
    Ok(SurfaceDistances { pred_to_gt: directed(&bp, &dt_gt), gt_to_pred: directed(&bg, &dt_pred) })
}

/// Percentile `q` in [0, 100] with linear interpolation between closest ranks.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of no values");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

pub fn hd(d: &SurfaceDistances) -> f64 {
    d.all().fold(0.0, f64::max)
}

pub fn hd95(d: &SurfaceDistances) -> f64 {
    percentile(&d.all().collect::<Vec<_>>(), 95.0)
}

pub fn msd(d: &SurfaceDistances) -> f64 {
    let n = d.pred_to_gt.len() + d.gt_to_pred.len();
    d.all().sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize, lo: usize, hi: usize) -> LabelMask {
        let mut m = LabelMask::empty([n; 3], [1.0; 3]);
        for z in lo..hi {
            for y in lo..hi {
                for x in lo..hi {
                    m.labels[flat_index([n; 3], z, y, x)] = 1;
                }
            }
        }
        m
    }

    #[test]
    fn boundary_of_cube_and_voxel() {
        assert_eq!(boundary_voxels(&cube(5, 1, 4), 1).len(), 26);
        assert_eq!(boundary_voxels(&cube(3, 0, 3), 1).len(), 26);
        assert_eq!(boundary_voxels(&cube(5, 2, 3), 1), vec![[2, 2, 2]]);
        assert!(boundary_voxels(&cube(5, 1, 4), 2).is_empty());
    }

    #[test]
    fn single_voxel_distances() {
        let mut a = LabelMask::empty([2, 1, 1], [1.0; 3]);
        let mut b = a.clone();
        a.labels[0] = 1;
        b.labels[1] = 1;
        let d = surface_distances(&a, &b, 1, [1.0; 3]).unwrap();
        assert_eq!(d.pred_to_gt, vec![1.0]);
        assert_eq!(d.gt_to_pred, vec![1.0]);
        let d = surface_distances(&a, &b, 1, [1.199, 0.5, 0.5]).unwrap();
        assert_eq!(d.pred_to_gt, vec![1.199]);
        let same = surface_distances(&a, &a, 1, [1.0; 3]).unwrap();
        assert!(same.all().all(|v| v == 0.0));
    }

    #[test]
    fn empty_sides_reported() {
        let a = cube(4, 1, 2);
        let e = LabelMask::empty([4; 3], [1.0; 3]);
        assert_eq!(surface_distances(&e, &a, 1, [1.0; 3]), Err(EmptySide::Pred));
        assert_eq!(surface_distances(&a, &e, 1, [1.0; 3]), Err(EmptySide::Gt));
        assert_eq!(surface_distances(&e, &e, 1, [1.0; 3]), Err(EmptySide::Both));
    }

    #[test]
    fn summary_statistics() {
        let d = SurfaceDistances { pred_to_gt: (1..=50).map(f64::from).collect(), gt_to_pred: (51..=100).map(f64::from).collect() };
        assert!((hd95(&d) - 95.05).abs() < 1e-12);
        assert_eq!(hd(&d), 100.0);
        assert_eq!(msd(&d), 50.5);
        let z = SurfaceDistances { pred_to_gt: vec![0.0; 3], gt_to_pred: vec![0.0] };
        assert_eq!((hd(&z), hd95(&z), msd(&z)), (0.0, 0.0, 0.0));
    }

    #[test]
    fn transform_without_sites_is_infinite() {
        assert!(distance_transform_sq(&[false; 8], [2, 2, 2], [1.0; 3]).iter().all(|v| v.is_infinite()));
    }
}
