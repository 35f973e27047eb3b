//! Sliding-window and flip-TTA inference of an untrained desk network on
//! one phantom, then mapped back to the CT grid and scored.
//!
//!     cargo run --release --example sliding_window

use hnseg::config::PipelineConfig;
use hnseg::inference::{finalize, predict_case, sliding_window, Model};
use hnseg::metrics::per_case_dice;
use hnseg::phantom::generate_case;
use hnseg::preprocess::preprocess_case;
use hnseg::segresnet::{build, SegResNet};

fn main() -> hnseg::Result<()> {
    let cfg = PipelineConfig::desk();
    let raw = generate_case(&cfg.phantom, 0)?.into_raw();
    let pre = preprocess_case(&raw, &cfg.preprocess)?;
    let model = Model {
        net: SegResNet::new(cfg.network.clone())?,
        params: build(&cfg.network, 1)?,
    };
    let input = pre.network_input()?;
    let pad = pre.sidecar.pad_values();

    let t = std::time::Instant::now();
    let plain = sliding_window(&model, &input, &pad, &cfg.inference)?;
    println!("sliding window over {:?} in {:.2}s", plain.dims, t.elapsed().as_secs_f64());
    let t = std::time::Instant::now();
    let tta = predict_case(&model, &input, &pad, &cfg.inference)?;
    println!("with 8 flips in {:.2}s, max |sum p - 1| = {:.1e}", t.elapsed().as_secs_f64(), tta.max_sum_error());

    let mask = finalize(&tta, &pre.sidecar)?;
    let gt = raw.label.as_ref().expect("phantoms carry labels");
    for class in [1u8, 2] {
        println!("class {class} Dice of an untrained model: {:.3}", per_case_dice(&mask, gt, class)?);
    }
    Ok(())
}
