//! Scores degraded copies of phantom labels and prints the report CSV.
//!
//!     cargo run --release --example evaluate_masks

use hnseg::metrics::{case_tallies, EvalReport};
use hnseg::phantom::{case_name, generate_case, PhantomSpec};
use hnseg::volume::LabelVolume;

fn main() -> hnseg::Result<()> {
    let spec = PhantomSpec::default();
    let mut cases = Vec::new();
    for i in 0..3 {
        let gt = generate_case(&spec, i)?.label;
        // Drop every other slab of nodal voxels and one in five primary voxels.
        let [sx, sy, _] = gt.size();
        let data = gt
            .data()
            .iter()
            .enumerate()
            .map(|(n, &l)| match l {
                2 if (n / (sx * sy)) % 2 == 0 => 0,
                1 if n % 5 == 0 => 0,
                l => l,
            })
            .collect();
        let pred = LabelVolume::new(*gt.geometry(), data)?;
        let id = case_name(i);
        cases.push((id.clone(), case_tallies(&id, &pred, &gt)?));
    }
    print!("{}", EvalReport::from_tallies(cases).to_csv());
    Ok(())
}
