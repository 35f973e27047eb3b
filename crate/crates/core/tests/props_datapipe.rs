mod common;

use std::collections::BTreeSet;

use common::synthetic_record;
use hnseg::datapipe::{augment, sample_patch, split_folds, AugmentConfig, SamplerConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sampler() -> SamplerConfig {
    SamplerConfig {
        patch_size: [8; 3],
        class_probs: [0.45, 0.45, 0.1],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampling_is_deterministic_per_seed(case_seed in any::<u64>(), seed in any::<u64>()) {
        let case = synthetic_record("c", case_seed, [10, 12, 11]);
        let a = sample_patch(&case, &sampler(), &mut ChaCha8Rng::seed_from_u64(seed));
        let b = sample_patch(&case, &sampler(), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a.center, b.center);
        prop_assert_eq!(a.input.data(), b.input.data());
        prop_assert_eq!(a.target.data, b.target.data);
    }

    #[test]
    fn patch_centres_on_drawn_class(case_seed in any::<u64>(), seed in any::<u64>()) {
        let case = synthetic_record("c", case_seed, [10, 12, 11]);
        let p = sample_patch(&case, &sampler(), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(p.target.data.iter().all(|&l| l <= 2));
        let centre = (4 * 8 + 4) * 8 + 4;
        if p.class > 0 {
            prop_assert_eq!(p.target.data[centre], p.class);
        }
    }

    #[test]
    fn augmentation_never_adds_labels(case_seed in any::<u64>(), seed in any::<u64>()) {
        let case = synthetic_record("c", case_seed, [10, 12, 11]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = sample_patch(&case, &sampler(), &mut rng);
        let before: BTreeSet<u8> = p.target.data.iter().copied().collect();
        let cfg = AugmentConfig {
            flip_prob: 0.5,
            affine_prob: 1.0,
            intensity_scale_prob: 1.0,
            intensity_shift_prob: 1.0,
            noise_prob: 1.0,
            blur_prob: 1.0,
            ..AugmentConfig::default()
        };
        augment(&mut p, &cfg, 4.0, &mut rng);
        let after: BTreeSet<u8> = p.target.data.iter().copied().collect();
        prop_assert!(after.is_subset(&before));
        prop_assert!(p.input.all_finite());
        let n = p.target.data.len();
        prop_assert!(p.input.data()[..n].iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn disabled_augmentation_is_identity(case_seed in any::<u64>(), seed in any::<u64>()) {
        let case = synthetic_record("c", case_seed, [10, 12, 11]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = sample_patch(&case, &sampler(), &mut rng);
        let q = p.clone();
        augment(&mut p, &AugmentConfig::disabled(), 4.0, &mut rng);
        prop_assert_eq!(p.input.data(), q.input.data());
        prop_assert_eq!(p.target.data, q.target.data);
    }

    #[test]
    fn folds_partition_the_cases(n in 1usize..60, k in 1usize..8, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ids: Vec<String> = (0..n).map(|i| format!("case_{i:03}")).collect();
        let folds = split_folds(&ids, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<String> = folds.iter().flatten().cloned().collect();
        all.sort();
        prop_assert_eq!(&all, &ids);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(split_folds(&ids, k, seed).unwrap(), folds);
    }
}

#[test]
fn too_many_folds_is_an_error() {
    let ids = vec!["a".to_string(), "b".to_string()];
    assert!(split_folds(&ids, 3, 0).is_err());
    assert!(split_folds(&ids, 0, 0).is_err());
}
