//! Prints the resolved constants and layer table of both presets.
//!
//!     cargo run --example describe_presets

use hnseg::cli::describe;
use hnseg::config::PipelineConfig;
use hnseg::segresnet::param_count;

fn main() {
    for cfg in [PipelineConfig::desk(), PipelineConfig::paper()] {
        println!("{}", describe(&cfg));
        println!("learnable parameters: {}\n", param_count(&cfg.network));
    }
}
