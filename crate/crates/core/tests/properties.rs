//! Property tests for invariants that hold for every input.

use proptest::prelude::*;
use umamba_core::io::volume_file::{decode, encode_image, encode_mask, VolumeData};
use umamba_core::mamba::selective_scan;
use umamba_core::metrics::{dice, dsc_agg, hd, hd95, msd, surface_distances};
use umamba_core::train::{kfold_split, poly_lr, window_starts};
use umamba_core::volume::{flat_index, Image, LabelMask};
use umamba_core::Tensor;

const DIMS: [usize; 3] = [5, 6, 7];

fn mask_strategy() -> impl Strategy<Value = LabelMask> {
    prop::collection::vec(prop::sample::select(vec![0u8, 0, 0, 1, 2]), DIMS.iter().product::<usize>())
        .prop_map(|labels| LabelMask::new(DIMS, [1.0; 3], labels))
}

fn spacing_strategy() -> impl Strategy<Value = [f64; 3]> {
    [0.2f64..3.0, 0.2f64..3.0, 0.2f64..3.0]
}

/// Mirrors along z and swaps y/x: an isometry of the voxel grid.
fn flip_transpose(m: &LabelMask) -> LabelMask {
    let [z, y, x] = m.dims;
    let out_dims = [z, x, y];
    let mut out = LabelMask::empty(out_dims, m.spacing);
    for a in 0..z {
        for b in 0..y {
            for c in 0..x {
                out.labels[flat_index(out_dims, z - 1 - a, c, b)] = m.at(a, b, c);
            }
        }
    }
    out
}

fn scan_inputs(len: usize, ch: usize, n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-2.0f64..2.0, len * ch),
        prop::collection::vec(-2.0f64..2.0, len * ch),
        prop::collection::vec(0.001f64..1.5, len * ch),
        prop::collection::vec(-3.0f64..-0.05, ch * n),
        prop::collection::vec(-1.0f64..1.0, len * n),
        prop::collection::vec(-1.0f64..1.0, len * n),
        prop::collection::vec(-1.0f64..1.0, ch),
    )
}

fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scan_is_linear_in_its_input((u1, u2, dl, a, b, c, d) in scan_inputs(9, 3, 2), alpha in -2.0f64..2.0) {
        let (l, ch, n) = (9, 3, 2);
        let run = |u: Vec<f64>| {
            selective_scan(&t(&[1, l, ch], u), &t(&[1, l, ch], dl.clone()), &t(&[ch, n], a.clone()),
                &t(&[1, l, n], b.clone()), &t(&[1, l, n], c.clone()), &t(&[ch], d.clone())).unwrap()
        };
        let mixed: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| alpha * x + y).collect();
        let (y1, y2, ym) = (run(u1), run(u2), run(mixed));
        for ((a1, a2), am) in y1.data().iter().zip(y2.data()).zip(ym.data()) {
            prop_assert!((alpha * a1 + a2 - am).abs() < 1e-9);
        }
    }

    #[test]
    fn scan_is_causal((u, _u2, dl, a, b, c, d) in scan_inputs(8, 2, 3), at in 0usize..8, bump in 0.1f64..5.0) {
        let (l, ch, n) = (8, 2, 3);
        let run = |u: Vec<f64>| {
            selective_scan(&t(&[1, l, ch], u), &t(&[1, l, ch], dl.clone()), &t(&[ch, n], a.clone()),
                &t(&[1, l, n], b.clone()), &t(&[1, l, n], c.clone()), &t(&[ch], d.clone())).unwrap()
        };
        let mut bumped = u.clone();
        bumped[at * ch] += bump;
        let (y0, y1) = (run(u), run(bumped));
        prop_assert_eq!(&y0.data()[..at * ch], &y1.data()[..at * ch]);
    }

    #[test]
    fn dice_is_symmetric_and_bounded(p in mask_strategy(), g in mask_strategy(), label in 1u8..=2) {
        let d = dice(&p, &g, label);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice(&g, &p, label));
        prop_assert_eq!(dsc_agg(&[(&p, &g)], label), d);
    }

    #[test]
    fn dsc_agg_invariant_to_order_and_isometry(ps in prop::collection::vec(mask_strategy(), 1..5), gs in prop::collection::vec(mask_strategy(), 5), label in 1u8..=2) {
        let pairs: Vec<(&LabelMask, &LabelMask)> = ps.iter().zip(&gs).collect();
        let base = dsc_agg(&pairs, label);
        let rev: Vec<_> = pairs.iter().rev().copied().collect();
        prop_assert_eq!(dsc_agg(&rev, label), base);
        let moved: Vec<(LabelMask, LabelMask)> = pairs.iter().map(|(p, g)| (flip_transpose(p), flip_transpose(g))).collect();
        let moved_refs: Vec<(&LabelMask, &LabelMask)> = moved.iter().map(|(p, g)| (p, g)).collect();
        prop_assert_eq!(dsc_agg(&moved_refs, label), base);
    }

    #[test]
    fn distance_summaries_are_ordered(p in mask_strategy(), g in mask_strategy(), label in 1u8..=2, s in spacing_strategy()) {
        if let Ok(d) = surface_distances(&p, &g, label, s) {
            prop_assert!(hd95(&d) >= 0.0);
            prop_assert!(hd(&d) >= hd95(&d));
            prop_assert!(hd(&d) >= msd(&d));
        }
    }

    #[test]
    fn distances_scale_with_spacing(p in mask_strategy(), g in mask_strategy(), label in 1u8..=2, s in spacing_strategy()) {
        let doubled = [2.0 * s[0], 2.0 * s[1], 2.0 * s[2]];
        if let (Ok(a), Ok(b)) = (surface_distances(&p, &g, label, s), surface_distances(&p, &g, label, doubled)) {
            for (x, y) in a.all().zip(b.all()) {
                prop_assert!((2.0 * x - y).abs() <= 1e-9 * y.max(1.0));
            }
        }
    }

    #[test]
    fn volume_files_roundtrip(data in prop::collection::vec(any::<f32>(), 5 * 6 * 7), m in mask_strategy(), s in spacing_strategy()) {
        let image = Image::new(DIMS, s, data);
        let (h, back) = decode(&encode_image(&image, "c").unwrap()).unwrap();
        prop_assert_eq!(h.spacing, s);
        match back {
            VolumeData::Image(i) => prop_assert!(i.data.iter().zip(&image.data).all(|(a, b)| a.to_bits() == b.to_bits())),
            VolumeData::Mask(_) => prop_assert!(false, "decoded an image as a mask"),
        }
        let (_, back) = decode(&encode_mask(&m, "c").unwrap()).unwrap();
        prop_assert_eq!(back, VolumeData::Mask(m));
    }

    #[test]
    fn poly_lr_decreases(initial in 1e-4f64..1.0, max_epochs in 1usize..300, exponent in 0.1f64..3.0) {
        let mut prev = f64::INFINITY;
        for e in 0..max_epochs {
            let lr = poly_lr(initial, e, max_epochs, exponent).unwrap();
            prop_assert!(lr <= prev && lr >= 0.0 && lr <= initial);
            prev = lr;
        }
    }

    #[test]
    fn folds_partition_cases(n in 2usize..60, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let plan = kfold_split(&ids, k, seed).unwrap();
        let mut seen: Vec<String> = plan.folds.iter().flat_map(|f| f.val.clone()).collect();
        seen.sort();
        let mut want = ids.clone();
        want.sort();
        prop_assert_eq!(seen, want);
        for f in &plan.folds {
            prop_assert_eq!(f.train.len() + f.val.len(), n);
            prop_assert!(f.train.iter().all(|id| !f.val.contains(id)));
        }
    }

    #[test]
    fn windows_cover_every_voxel(dim in 1usize..200, patch in 1usize..80) {
        let starts = window_starts(dim, patch);
        for v in 0..dim as isize {
            prop_assert!(starts.iter().any(|&s| s <= v && v < s + patch as isize));
        }
    }
}
