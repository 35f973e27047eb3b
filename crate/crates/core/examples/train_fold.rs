//! Trains one desk-scale fold on freshly generated phantoms.
//!
//!     cargo run --release --example train_fold -- [cases] [epochs]

use hnseg::config::PipelineConfig;
use hnseg::datapipe::CaseRecord;
use hnseg::phantom::generate_case;
use hnseg::preprocess::{preprocess_case, RawCase};
use hnseg::trainer::{train_fold, TrainOptions};

fn main() -> hnseg::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(6);
    let mut cfg = PipelineConfig::desk();
    cfg.train.epochs = args.get(1).copied().unwrap_or(4);
    cfg.train.val_every = (cfg.train.epochs / 4).max(1);

    let t = std::time::Instant::now();
    let mut records = Vec::new();
    for i in 0..n {
        let p = generate_case(&cfg.phantom, i)?;
        let raw = RawCase {
            id: p.params.case.clone(),
            ct: p.ct,
            pet: p.pet,
            label: Some(p.label),
        };
        records.push(CaseRecord::from_case(&preprocess_case(&raw, &cfg.preprocess)?)?);
    }
    println!("{n} phantoms ready in {:.1}s, grid {:?}", t.elapsed().as_secs_f64(), records[0].dims);

    let split = n * 2 / 3;
    let (train, val) = records.split_at(split.max(1));
    let out = std::env::temp_dir().join("hnseg_train_fold");
    let t = std::time::Instant::now();
    let result = train_fold(&cfg, 0, 0, train, val, &out, &TrainOptions::default())?;
    println!(
        "{} epochs in {:.1}s; best validation Dice {:?}; log in {}",
        cfg.train.epochs,
        t.elapsed().as_secs_f64(),
        result.best_val,
        out.join("train_log.jsonl").display()
    );
    Ok(())
}
