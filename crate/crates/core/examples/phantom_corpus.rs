//! Writes a small synthetic PET/CT corpus and prints its lesion inventory.
//!
//!     cargo run --release --example phantom_corpus -- [count] [out_dir]

use hnseg::phantom::{generate_corpus, PhantomSpec};

fn main() -> hnseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let out = args
        .next()
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("hnseg_phantoms"));
    let spec = PhantomSpec::default();
    let manifest = generate_corpus(&spec, n, &out)?;
    for c in &manifest.cases {
        println!(
            "{}: head top z {:.0} mm, {} primary, {} nodal",
            c.case,
            c.head_top_z,
            c.count(1),
            c.count(2)
        );
    }
    println!("corpus in {}", out.display());
    Ok(())
}
