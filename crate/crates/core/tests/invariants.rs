mod common;

use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use semsegdepth::data::{crop_sample, split_dataset, DatasetSplit};
use semsegdepth::depth::unproject;
use semsegdepth::harness::{OptimConfig, Sgd};
use semsegdepth::losses::log_softmax;
use semsegdepth::metrics::{miou, rmse, ConfusionCounts, SquaredError};
use semsegdepth::params::ParamStore;
use semsegdepth::Tensor;

use common::toy_samples;

fn labels(nc: u32, len: usize) -> impl Strategy<Value = Vec<u32>> {
    proptest::collection::vec(0..nc, len)
}

fn label_pair() -> impl Strategy<Value = (u32, Vec<u32>, Vec<u32>)> {
    (2u32..7, 1usize..200).prop_flat_map(|(nc, n)| (Just(nc), labels(nc, n), labels(nc, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn crop_is_a_pure_window(seed in 0u64..40, h in 1usize..24, w in 1usize..24, dr in 0usize..9, dc in 0usize..9) {
        let s = toy_samples(1, seed, 32, 32).remove(0);
        let (row, col) = (dr.min(32 - h), dc.min(32 - w));
        let c = crop_sample(&s, h, w, (row, col)).unwrap();
        prop_assert_eq!(c.dims(), (h, w));
        for r in 0..h {
            for q in 0..w {
                prop_assert_eq!(c.rgb.get(r, q), s.rgb.get(r + row, q + col));
                prop_assert_eq!(c.semantic_gt.as_ref().unwrap().get(r, q), s.semantic_gt.as_ref().unwrap().get(r + row, q + col));
                prop_assert_eq!(c.dense_depth_gt.as_ref().unwrap().get(r, q), s.dense_depth_gt.as_ref().unwrap().get(r + row, q + col));
            }
        }
        // Cropping moves the principal point, so the lifted 3D points of the
        // window are exactly the original points inside it.
        let sparse = c.sparse_depth.as_ref().unwrap();
        if sparse.count_nonzero() > 0 {
            let full = unproject(s.sparse_depth.as_ref().unwrap(), &s.intrinsics).unwrap();
            let inside: Vec<[f64; 3]> = full
                .points
                .iter()
                .zip(&full.pixel_index)
                .filter(|(_, &i)| {
                    let (r, q) = (i / 32, i % 32);
                    (row..row + h).contains(&r) && (col..col + w).contains(&q)
                })
                .map(|(p, _)| *p)
                .collect();
            let window = unproject(sparse, &c.intrinsics).unwrap().points;
            prop_assert_eq!(window.len(), inside.len());
            for (a, b) in window.iter().zip(&inside) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() <= 1e-12 * b[k].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_crop_is_rejected(extra in 1usize..5) {
        let s = toy_samples(1, 1, 16, 16).remove(0);
        prop_assert!(crop_sample(&s, 16, 16, (extra, 0)).is_err());
        prop_assert!(crop_sample(&s, 16 + extra, 8, (0, 0)).is_err());
    }

    #[test]
    fn miou_ignores_pixel_order((nc, pred, gt) in label_pair(), shift in 0usize..200) {
        let n = pred.len();
        let k = shift % n;
        let rot = |v: &Vec<u32>| v[k..].iter().chain(&v[..k]).copied().collect::<Vec<_>>();
        let a = miou(&pred, &gt, nc as usize, None).unwrap();
        let b = miou(&rot(&pred), &rot(&gt), nc as usize, None).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn miou_is_symmetric_and_perfect_on_identity((nc, pred, gt) in label_pair()) {
        prop_assert_eq!(miou(&pred, &gt, nc as usize, None).unwrap(), miou(&gt, &pred, nc as usize, None).unwrap());
        prop_assert_eq!(miou(&gt, &gt, nc as usize, None).unwrap(), 1.0);
    }

    #[test]
    fn pooled_counts_equal_one_pass_over_the_concatenation((nc, pred, gt) in label_pair(), cut in 0usize..200) {
        let cut = cut % (pred.len() + 1);
        let mut a = ConfusionCounts::new(nc as usize);
        a.add(&pred[..cut], &gt[..cut], None).unwrap();
        let mut b = ConfusionCounts::new(nc as usize);
        b.add(&pred[cut..], &gt[cut..], None).unwrap();
        a.merge(&b);
        let mut whole = ConfusionCounts::new(nc as usize);
        whole.add(&pred, &gt, None).unwrap();
        prop_assert_eq!(&a, &whole);
        // Each pixel is one true positive or one fp/fn pair.
        let tp: u64 = whole.tp.iter().sum();
        let fp: u64 = whole.fp.iter().sum();
        prop_assert_eq!(tp + fp, pred.len() as u64);
        prop_assert_eq!(whole.fp.iter().sum::<u64>(), whole.fn_.iter().sum::<u64>());
    }

    #[test]
    fn ignored_pixels_do_not_count((nc, pred, mut gt) in label_pair(), every in 2usize..5) {
        let ignore = nc;
        let mut kept_p = Vec::new();
        let mut kept_g = Vec::new();
        for (i, g) in gt.iter_mut().enumerate() {
            if i % every == 0 {
                *g = ignore;
            } else {
                kept_p.push(pred[i]);
                kept_g.push(*g);
            }
        }
        prop_assume!(!kept_g.is_empty());
        prop_assert_eq!(
            miou(&pred, &gt, nc as usize, Some(ignore)).unwrap(),
            miou(&kept_p, &kept_g, nc as usize, None).unwrap()
        );
    }

    #[test]
    fn rmse_scales_and_vanishes_on_equality(
        pairs in proptest::collection::vec((1.0f64..50_000.0, 1.0f64..50_000.0, any::<bool>()), 1..100),
        k in 0.001f64..100.0,
    ) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let gt: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let mut mask: Vec<bool> = pairs.iter().map(|p| p.2).collect();
        mask[0] = true;
        let base = rmse(&pred, &gt, &mask).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert_eq!(rmse(&gt, &gt, &mask).unwrap(), 0.0);
        let scaled = rmse(
            &pred.iter().map(|v| v * k).collect::<Vec<_>>(),
            &gt.iter().map(|v| v * k).collect::<Vec<_>>(),
            &mask,
        )
        .unwrap();
        prop_assert!((scaled - k * base).abs() <= 1e-9 * (k * base).max(1.0));
        let mut pooled = SquaredError::default();
        pooled.add(&pred, &gt, &mask);
        prop_assert!((pooled.rmse().unwrap() - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn log_softmax_normalizes_and_ignores_shifts(x in proptest::collection::vec(-30.0f64..30.0, 1..12), c in -100.0f64..100.0) {
        let a = log_softmax(&x);
        let total: f64 = a.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        for (p, q) in a.iter().zip(log_softmax(&shifted)) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn split_is_a_disjoint_seeded_subset(n in 0usize..60, a in 0usize..30, b in 0usize..30, c in 0usize..30, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
        match split_dataset(&ids, (a, b, c), seed) {
            Err(_) => prop_assert!(a + b + c > n),
            Ok(s) => {
                prop_assert_eq!((s.train.len(), s.val.len(), s.test.len()), (a, b, c));
                let all: HashSet<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
                prop_assert_eq!(all.len(), a + b + c);
                prop_assert!(all.iter().all(|id| ids.contains(id)));
                prop_assert_eq!(&s, &split_dataset(&ids, (a, b, c), seed).unwrap());
                prop_assert_eq!(&DatasetSplit::parse(&s.to_text()).unwrap(), &s);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_alone(
        values in proptest::collection::vec(-5.0f64..5.0, 1..20),
        grads in proptest::collection::vec(-5.0f64..5.0, 20),
        momentum in 0.0f64..0.99,
        steps in 1usize..5,
    ) {
        let n = values.len();
        let mut params = ParamStore::new();
        params.insert("w", Tensor::new([n], values).unwrap());
        let before = params.clone();
        let g = BTreeMap::from([("w".to_string(), Tensor::new([n], grads[..n].to_vec()).unwrap())]);
        let cfg = OptimConfig { lr: 0.0, momentum, ..OptimConfig::default() };
        let mut sgd = Sgd::new();
        for _ in 0..steps {
            sgd.step(&mut params, &g, &cfg);
        }
        prop_assert_eq!(params, before);
    }

    #[test]
    fn checkpoint_bytes_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 1usize..40) {
        let k = split.min(values.len());
        let mut p = ParamStore::new();
        p.insert("a.weight", Tensor::new([k], values[..k].to_vec()).unwrap());
        p.insert("b.bias", Tensor::new([values.len() - k], values[k..].to_vec()).unwrap());
        let back = ParamStore::from_bytes(&p.to_bytes()).unwrap();
        prop_assert_eq!(back.digest(), p.digest());
        prop_assert_eq!(back, p);
    }
}
