//! Desk-scale experiment: 2-fold cross-validation on 20 phantoms, then the
//! held-out 5 segmented by one model without TTA and by the TTA ensemble.
//!
//!     cargo run --release --example crossval_desk -- [epochs]

use hnseg::config::PipelineConfig;
use hnseg::datapipe::CaseRecord;
use hnseg::inference::{segment, InferenceConfig, Model, Predictor};
use hnseg::metrics::{case_tallies, EvalReport};
use hnseg::phantom::generate_case;
use hnseg::preprocess::preprocess_case;
use hnseg::segresnet::SegResNet;
use hnseg::checkpoint::Checkpoint;
use hnseg::trainer::run_crossval;

fn main() -> hnseg::Result<()> {
    let mut cfg = PipelineConfig::desk();
    if let Some(e) = std::env::args().nth(1).and_then(|a| a.parse().ok()) {
        cfg.train.epochs = e;
    }
    let t = std::time::Instant::now();
    let mut train = Vec::new();
    let mut held_out = Vec::new();
    for i in 0..25 {
        let raw = generate_case(&cfg.phantom, i)?.into_raw();
        let pre = preprocess_case(&raw, &cfg.preprocess)?;
        if i < 20 {
            train.push(CaseRecord::from_case(&pre)?);
        } else {
            held_out.push((raw, pre));
        }
    }

    let out = std::env::temp_dir().join("hnseg_crossval_desk");
    let report = run_crossval(&cfg, &train, &out)?;
    println!("{}", report.to_markdown());
    println!("training took {:.0}s", t.elapsed().as_secs_f64());

    let models = report
        .checkpoints()
        .iter()
        .map(|p| {
            Ok(Model {
                net: SegResNet::new(cfg.network.clone())?,
                params: Checkpoint::load(p)?.params,
            })
        })
        .collect::<hnseg::Result<Vec<_>>>()?;
    let one_cfg = InferenceConfig { tta: false, ..cfg.inference };
    let two_cfg = InferenceConfig { tta: true, ..cfg.inference };
    let one: Vec<&dyn Predictor> = vec![&models[0]];
    let two: Vec<&dyn Predictor> = models.iter().map(|m| m as &dyn Predictor).collect();
    for (name, set, icfg) in [("One", &one, &one_cfg), ("Two", &two, &two_cfg)] {
        let t = std::time::Instant::now();
        let tallies = held_out
            .iter()
            .map(|(raw, pre)| {
                let pred = segment(set, pre, &raw.pet, icfg)?;
                Ok((raw.id.clone(), case_tallies(&raw.id, &pred, raw.label.as_ref().unwrap())?))
            })
            .collect::<hnseg::Result<Vec<_>>>()?;
        let r = EvalReport::from_tallies(tallies);
        println!("{name}: held-out aggregated Dice {:.4} {:?} ({:.0}s)", r.aggregate.mean, r.aggregate.per_class, t.elapsed().as_secs_f64());
    }
    Ok(())
}
