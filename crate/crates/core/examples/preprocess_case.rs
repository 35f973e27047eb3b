//! Runs the crop heuristic and normalization on one phantom and reports
//! what survived the crop.
//!
//!     cargo run --release --example preprocess_case -- [index]

use hnseg::config::PipelineConfig;
use hnseg::phantom::generate_case;
use hnseg::preprocess::preprocess_case;

fn main() -> hnseg::Result<()> {
    let index = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let cfg = PipelineConfig::desk();
    let raw = generate_case(&cfg.phantom, index)?.into_raw();
    let pre = preprocess_case(&raw, &cfg.preprocess)?;
    let s = &pre.sidecar;
    println!("case {}", s.case);
    println!("ct grid {:?} at {:?} mm", s.ct_geometry.size, s.ct_geometry.spacing);
    println!("head top z {:.1} mm, centre xy {:.1?}", s.head_top_z, s.center_xy);
    println!("crop box {:?}..{:?} -> {:?}", s.crop_box.lo, s.crop_box.hi, s.cropped_geometry.size);
    if let (Some(before), Some(after)) = (&raw.label, &pre.label) {
        for class in [1u8, 2] {
            println!("class {class}: {} voxels on CT grid, {} after crop", before.count(class), after.count(class));
        }
    }
    let (lo, hi) = pre.ct.min_max();
    let input = pre.network_input()?;
    let (ct_n, pet_n) = input.data().split_at(input.numel() / 2);
    let range = |v: &[f32]| v.iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    println!("CT {lo:.0}..{hi:.0} HU -> {:.3?}, PET -> {:.3?}", range(ct_n), range(pet_n));
    Ok(())
}
