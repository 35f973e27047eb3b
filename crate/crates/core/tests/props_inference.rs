mod common;

use common::tiny_network;
use hnseg::autodiff::Tensor;
use hnseg::config::PipelineConfig;
use hnseg::inference::{
    connected_components, finalize, postprocess_nodes, predict_case, window_starts, InferenceConfig, Model, PostprocessConfig,
    ProbabilityMap,
};
use hnseg::phantom::generate_case;
use hnseg::preprocess::preprocess_case;
use hnseg::segresnet::{build, SegResNet};
use hnseg::volume::{ImageGeometry, LabelVolume, ScalarVolume};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn windows_cover_every_voxel(size in 1usize..120, roi in 1usize..40, overlap in 0.0f64..0.9) {
        let starts = window_starts(size, roi, overlap);
        prop_assert_eq!(starts[0], 0);
        prop_assert_eq!(*starts.last().unwrap(), size.saturating_sub(roi));
        let mut covered = vec![false; size];
        for &s in &starts {
            for c in covered.iter_mut().skip(s).take(roi) {
                *c = true;
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn components_match_brute_force(size in prop::array::uniform3(1usize..6), bits in prop::collection::vec(any::<bool>(), 216)) {
        let n = size.iter().product::<usize>();
        let mask = &bits[..n];
        let (comp, count) = connected_components(mask, size);
        let coord = |i: usize| [i % size[0], (i / size[0]) % size[1], i / (size[0] * size[1])];
        let mut parent: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in 0..i {
                if mask[i] && mask[j] && (0..3).all(|a| coord(i)[a].abs_diff(coord(j)[a]) <= 1) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
        let mut roots: Vec<usize> = (0..n).filter(|&i| mask[i]).map(|i| find(&mut parent, i)).collect();
        roots.sort();
        roots.dedup();
        prop_assert_eq!(count as usize, roots.len());
        for i in 0..n {
            prop_assert_eq!(comp[i] == 0, !mask[i]);
            for j in 0..i {
                if mask[i] && mask[j] {
                    prop_assert_eq!(comp[i] == comp[j], find(&mut parent, i) == find(&mut parent, j));
                }
            }
        }
    }

    #[test]
    fn postprocessing_only_removes_nodes(labels in prop::collection::vec(0u8..3, 125), pet in prop::collection::vec(0.0f32..4.0, 125)) {
        let g = ImageGeometry::new([5, 5, 5], [2.0; 3], [0.0; 3]).unwrap();
        let mask = LabelVolume::new(g, labels).unwrap();
        let pet = ScalarVolume::new(g, pet).unwrap();
        let cfg = PostprocessConfig { enabled: true, min_volume_mm3: 40.0, min_mean_pet: 1.5 };
        let out = postprocess_nodes(&mask, &pet, &cfg).unwrap();
        for (&a, &b) in mask.data().iter().zip(out.data()) {
            prop_assert!(a == b || (a == 2 && b == 0));
        }
    }
}

#[test]
fn tta_probabilities_sum_to_one() {
    let cfg = tiny_network();
    let model = Model {
        net: SegResNet::new(cfg.clone()).unwrap(),
        params: build(&cfg, 11).unwrap(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::new(vec![1, 2, 13, 10, 9], (0..2 * 13 * 10 * 9).map(|_| rng.random()).collect()).unwrap();
    for tta in [false, true] {
        let icfg = InferenceConfig {
            roi_size: [8; 3],
            overlap: 0.5,
            window_batch: 2,
            tta,
            postprocess: PostprocessConfig::default(),
        };
        let map = predict_case(&model, &x, &[0.1, 0.2], &icfg).unwrap();
        assert_eq!(map.dims, [13, 10, 9]);
        assert!(map.max_sum_error() < 1e-5, "tta {tta}: {}", map.max_sum_error());
        assert!(map.data.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn finalize_lands_on_the_ct_grid() {
    let cfg = PipelineConfig::desk();
    let raw = generate_case(&cfg.phantom, 3).unwrap().into_raw();
    let pre = preprocess_case(&raw, &cfg.preprocess).unwrap();
    let g = pre.sidecar.cropped_geometry;
    let dims = [g.size[2], g.size[1], g.size[0]];
    let n: usize = dims.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let map = ProbabilityMap {
        dims,
        channels: 3,
        data: (0..3 * n).map(|_| rng.random()).collect(),
    };
    let mask = finalize(&map, &pre.sidecar).unwrap();
    assert_eq!(mask.geometry(), raw.ct.geometry());
    assert!(mask.data().iter().all(|&l| l <= 2));
    let wrong = ProbabilityMap { dims: [1, 1, 1], channels: 3, data: vec![1.0, 0.0, 0.0] };
    assert!(finalize(&wrong, &pre.sidecar).is_err());
}
