//! Independent brute-force references. Shared with the acceptance suite via
//! `#[path]`; nothing here calls into the implementation under test.
#![allow(dead_code)]

/// Seven-nested-loop cross-correlation over plain vectors.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_brute(
    x: &[f64],
    xs: [usize; 5],
    w: &[f64],
    ws: [usize; 5],
    bias: Option<&[f64]>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, [usize; 5]) {
    let [b, cin, z, y, xx] = xs;
    let [cout, _, kz, ky, kx] = ws;
    let oz = (z + 2 * pad[0] - kz) / stride[0] + 1;
    let oy = (y + 2 * pad[1] - ky) / stride[1] + 1;
    let ox = (xx + 2 * pad[2] - kx) / stride[2] + 1;
    let mut out = vec![0.0; b * cout * oz * oy * ox];
    for bi in 0..b {
        for co in 0..cout {
            for a in 0..oz {
                for bb in 0..oy {
                    for c in 0..ox {
                        let mut acc = bias.map_or(0.0, |bv| bv[co]);
                        for ci in 0..cin {
                            for i in 0..kz {
                                for j in 0..ky {
                                    for k in 0..kx {
                                        let iz = (a * stride[0] + i) as isize - pad[0] as isize;
                                        let iy = (bb * stride[1] + j) as isize - pad[1] as isize;
                                        let ix = (c * stride[2] + k) as isize - pad[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= z as isize || iy >= y as isize || ix >= xx as isize {
                                            continue;
                                        }
                                        let xi = (((bi * cin + ci) * z + iz as usize) * y + iy as usize) * xx + ix as usize;
                                        let wi = (((co * cin + ci) * kz + i) * ky + j) * kx + k;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[(((bi * cout + co) * oz + a) * oy + bb) * ox + c] = acc;
                    }
                }
            }
        }
    }
    (out, [b, cout, oz, oy, ox])
}

/// Per-timestep recurrence with explicit state vectors.
pub fn scan_naive(
    u: &[f64],
    delta: &[f64],
    a: &[f64],
    bm: &[f64],
    cm: &[f64],
    d: &[f64],
    batch: usize,
    len: usize,
    channels: usize,
    state: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * len * channels];
    for b in 0..batch {
        for c in 0..channels {
            let mut h = vec![0.0; state];
            for t in 0..len {
                let i = (b * len + t) * channels + c;
                for n in 0..state {
                    let abar = (delta[i] * a[c * state + n]).exp();
                    let bbar = delta[i] * bm[(b * len + t) * state + n];
                    h[n] = abar * h[n] + bbar * u[i];
                }
                let mut out = d[c] * u[i];
                for n in 0..state {
                    out += cm[(b * len + t) * state + n] * h[n];
                }
                y[i] = out;
            }
        }
    }
    y
}

/// Boundary voxels by direct neighbor inspection (6-connectivity).
pub fn boundary_brute(mask: &[u8], dims: [usize; 3], label: u8) -> Vec<[usize; 3]> {
    let [z, y, x] = dims;
    let at = |a: isize, b: isize, c: isize| -> bool {
        a >= 0 && b >= 0 && c >= 0 && (a as usize) < z && (b as usize) < y && (c as usize) < x
            && mask[(a as usize * y + b as usize) * x + c as usize] == label
    };
    let mut out = Vec::new();
    for a in 0..z {
        for b in 0..y {
            for c in 0..x {
                if mask[(a * y + b) * x + c] != label {
                    continue;
                }
                let (ai, bi, ci) = (a as isize, b as isize, c as isize);
                let nb = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                if nb.iter().any(|(da, db, dc)| !at(ai + da, bi + db, ci + dc)) {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

/// For every point of `from`, the distance to the nearest point of `to` (all pairs).
pub fn nearest_all_pairs(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|k| ((p[k] as f64 - q[k] as f64) * spacing[k]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile_brute(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}
