//! Property tests for the model-free invariants.

use ndarray::Array2;
use proptest::prelude::*;
use sliceclr_core::augment::{apply_pipeline, AugmentConfig};
use sliceclr_core::cohort::{preprocess_slice, select_central_slices};
use sliceclr_core::eval::{balanced_accuracy, roc_auc};
use sliceclr_core::losses::{ntxent, supcon, ContrastiveBatch};
use sliceclr_core::optim::cosine_lr;
use sliceclr_core::seeding;

proptest! {
    #[test]
    fn preprocess_stays_in_unit_range_and_is_monotone(
        values in prop::collection::vec(-2000.0f32..2000.0, 2..64),
    ) {
        let n = values.len();
        let raw = Array2::from_shape_vec((1, n), values.clone()).unwrap();
        let img = preprocess_slice(&raw, "p", 0).unwrap();
        for &v in img.pixels.iter() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for i in 0..n {
            for j in 0..n {
                if values[i] <= values[j] {
                    prop_assert!(img.pixels[[0, i]] <= img.pixels[[0, j]]);
                }
            }
        }
    }

    #[test]
    fn central_selection_size_subset_and_shift(
        areas in prop::collection::vec(0usize..50, 1..40),
        fraction in 0.05f64..1.0,
        shift in 0usize..7,
    ) {
        let live = areas.iter().filter(|&&a| a > 0).count();
        prop_assume!(live > 0);
        let picked = select_central_slices(&areas, fraction).unwrap();
        prop_assert_eq!(picked.len(), (fraction * live as f64).ceil() as usize);
        for &i in &picked {
            prop_assert!(areas[i] > 0, "selected an empty slice");
        }
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]), "must be sorted");

        let mut shifted = vec![0usize; shift];
        shifted.extend_from_slice(&areas);
        let picked_shifted = select_central_slices(&shifted, fraction).unwrap();
        let expected: Vec<usize> = picked.iter().map(|&i| i + shift).collect();
        prop_assert_eq!(picked_shifted, expected);
    }

    #[test]
    fn augmented_views_preserve_shape_and_range(
        seed in 0u64..500,
        crop_low in 0.3f64..1.0,
        rot in 0.0f64..45.0,
        flip in 0.0f64..1.0,
        cutout in proptest::bool::ANY,
    ) {
        let mut rng = seeding::stream(&[seed]);
        let img = Array2::from_shape_fn((20, 20), |(r, c)| {
            ((r * 20 + c) as f32 / 400.0 + seed as f32).fract()
        });
        let cfg = AugmentConfig {
            crop_scale_low: crop_low,
            crop_scale_high: 1.0,
            rotation_degrees: rot,
            flip_prob: flip,
            cutout_enabled: cutout,
            cutout_size_fraction: 0.25,
        };
        let view = apply_pipeline(&img, &mut rng, &cfg);
        prop_assert_eq!(view.dim(), (20, 20));
        for &v in view.iter() {
            prop_assert!((0.0..=1.0).contains(&v), "value {} escaped", v);
        }
    }

    #[test]
    fn auc_is_rank_based_and_complementary(
        scores in prop::collection::vec(0.0f64..1.0, 4..40),
        flips in prop::collection::vec(proptest::bool::ANY, 4..40),
    ) {
        let n = scores.len().min(flips.len());
        let scores = &scores[..n];
        let mut labels: Vec<u8> = flips[..n].iter().map(|&b| u8::from(b)).collect();
        labels[0] = 1;
        labels[1] = 0;

        let auc = roc_auc(scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));

        // Invariant under any strictly increasing transform.
        let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).exp()).collect();
        let auc_t = roc_auc(&transformed, &labels).unwrap();
        prop_assert!((auc - auc_t).abs() < 1e-12);

        // Complement identity.
        let flipped: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
        let auc_c = roc_auc(scores, &flipped).unwrap();
        prop_assert!((auc + auc_c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_accuracy_is_permutation_invariant(
        pairs in prop::collection::vec((0.0f64..1.0, proptest::bool::ANY), 4..30),
        swap_a in 0usize..30,
        swap_b in 0usize..30,
    ) {
        let mut probs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut labels: Vec<u8> = pairs.iter().map(|p| u8::from(p.1)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let before = balanced_accuracy(&probs, &labels).unwrap();
        let (a, b) = (swap_a % probs.len(), swap_b % probs.len());
        probs.swap(a, b);
        labels.swap(a, b);
        let after = balanced_accuracy(&probs, &labels).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn cosine_schedule_is_monotone_within_bounds(
        total in 2usize..5000,
        base in 1e-6f64..1.0,
    ) {
        let mut prev = f64::INFINITY;
        for step in [0, 1, total / 4, total / 2, 3 * total / 4, total - 1, total] {
            let lr = cosine_lr(step, total, base);
            prop_assert!(lr <= prev + 1e-18);
            prop_assert!((0.0..=base).contains(&lr));
            prev = lr;
        }
    }

    #[test]
    fn contrastive_losses_are_non_negative_and_finite(
        seed in 0u64..300,
        n_pairs in 1usize..6,
        dim in 2usize..12,
    ) {
        let mut rng = seeding::stream(&[seed, 77]);
        let mut m = Array2::<f64>::zeros((2 * n_pairs, dim));
        for mut row in m.rows_mut() {
            use rand::Rng;
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            row.mapv_inplace(|v| v / norm);
        }
        let labels: Vec<u8> = (0..n_pairs).flat_map(|k| {
            let y = (k % 2) as u8;
            [y, y]
        }).collect();
        let batch = ContrastiveBatch::new(m, Some(labels)).unwrap();
        let ntx = ntxent(&batch, 0.1).unwrap().total;
        let sup = supcon(&batch, 0.1).unwrap().total;
        prop_assert!(ntx.is_finite() && ntx >= -1e-12, "ntxent {}", ntx);
        prop_assert!(sup.is_finite() && sup >= -1e-12, "supcon {}", sup);
    }
}
