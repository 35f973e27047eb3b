use hnseg::volume::{
    crop, read_labels, read_scalar, resample_linear, resample_nearest, write_nifti, ImageGeometry, LabelVolume, ScalarVolume,
    VoxelBox,
};
use proptest::prelude::*;

fn geometry() -> impl Strategy<Value = ImageGeometry> {
    (
        prop::array::uniform3(1usize..9),
        prop::array::uniform3(0.5f64..4.0),
        prop::array::uniform3(-100.0f64..100.0),
    )
        .prop_map(|(size, spacing, origin)| ImageGeometry::new(size, spacing, origin).unwrap())
}

fn scalar_volume() -> impl Strategy<Value = ScalarVolume> {
    geometry().prop_flat_map(|g| {
        prop::collection::vec(-1000.0f32..1000.0, g.num_voxels()).prop_map(move |d| ScalarVolume::new(g, d).unwrap())
    })
}

fn label_volume() -> impl Strategy<Value = LabelVolume> {
    geometry().prop_flat_map(|g| {
        prop::collection::vec(0u8..3, g.num_voxels()).prop_map(move |d| LabelVolume::new(g, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nifti_round_trip(v in scalar_volume(), l in label_volume(), gz in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let ext = if gz { "nii.gz" } else { "nii" };
        let sp = dir.path().join(format!("s.{ext}"));
        let lp = dir.path().join(format!("l.{ext}"));
        write_nifti(&v, &sp).unwrap();
        write_nifti(&l, &lp).unwrap();
        let v2 = read_scalar(&sp).unwrap();
        let l2 = read_labels(&lp).unwrap();
        prop_assert_eq!(v2.data(), v.data());
        prop_assert_eq!(l2.data(), l.data());
        prop_assert!(v2.geometry().approx_eq(v.geometry(), 1e-4));
        prop_assert!(l2.geometry().approx_eq(l.geometry(), 1e-4));
    }

    #[test]
    fn resampling_onto_own_grid_is_identity(v in scalar_volume(), l in label_volume()) {
        let r = resample_linear(&v, v.geometry());
        for (a, b) in r.data().iter().zip(v.data()) {
            prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        let same = resample_nearest(&l, l.geometry());
        prop_assert_eq!(same.data(), l.data());
    }

    #[test]
    fn nearest_never_invents_labels(l in label_volume(), target in geometry()) {
        let r = resample_nearest(&l, &target);
        prop_assert!(r.data().iter().all(|v| l.data().contains(v)));
    }

    #[test]
    fn linear_is_a_convex_combination(v in scalar_volume(), spacing in prop::array::uniform3(0.3f64..5.0)) {
        let target = v.geometry().with_spacing(spacing).unwrap();
        let r = resample_linear(&v, &target);
        let (lo, hi) = v.min_max();
        let tol = 1e-3 * lo.abs().max(hi.abs()).max(1.0);
        prop_assert!(r.data().iter().all(|&x| x >= lo - tol && x <= hi + tol));
    }

    #[test]
    fn crop_keeps_world_coordinates(
        l in label_volume(),
        lo in prop::array::uniform3(-3i64..5),
        extent in prop::array::uniform3(1i64..8),
    ) {
        let hi = std::array::from_fn(|a| lo[a] + extent[a]);
        let bbox = VoxelBox::new(lo, hi).unwrap();
        prop_assume!(!bbox.clamped(l.geometry()).is_empty());
        let c = crop(&l, &bbox, 7).unwrap();
        let g = l.geometry();
        for (idx, &value) in c.data().iter().enumerate() {
            let v = c.geometry().voxel_index(idx);
            let src: [i64; 3] = std::array::from_fn(|a| v[a] as i64 + lo[a]);
            let w = c.geometry().world_of_voxel(v.map(|x| x as i64));
            let ws = g.world_of_voxel(src);
            prop_assert!((0..3).all(|a| (w[a] - ws[a]).abs() < 1e-9));
            let inside = (0..3).all(|a| src[a] >= 0 && src[a] < g.size[a] as i64);
            let expect = if inside { l.get(src[0] as usize, src[1] as usize, src[2] as usize) } else { 7 };
            prop_assert_eq!(value, expect);
        }
    }
}
