//! Command-line front end: `hnseg <verb> [flags]`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{config_hash, Checkpoint};
use crate::config::{PipelineConfig, Preset};
use crate::datapipe::{read_folds, split_folds, write_folds, CaseRecord};
use crate::error::{Error, Result};
use crate::inference::{segment, Model, Predictor};
use crate::jsonfile;
use crate::metrics::{case_tallies, EvalReport};
use crate::phantom::generate_corpus;
use crate::preprocess::{list_case_dirs, preprocess_case, PreprocessedCase, RawCase};
use crate::segresnet::{describe_layers, param_count, SegResNet};
use crate::trainer::{fold_sets, load_records, run_crossval, train_fold, TrainOptions};
use crate::volume::{read_labels, write_nifti};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "HNSEG_THREADS";

#[derive(Parser, Debug)]
#[command(name = "hnseg", version, about = "PET/CT head-and-neck tumor segmentation")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Pipeline config JSON; overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in preset: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Generate a synthetic PET/CT corpus.
    Phantom {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Resample, crop and store every case directory under --input.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train one (fold, run) model on preprocessed cases.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 0)]
        run: usize,
        /// folds.json to use; computed from the seed when absent.
        #[arg(long)]
        folds: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train every fold and run, then write the cross-validation report.
    Crossval {
        /// Preprocessed cases.
        #[arg(long, conflicts_with = "phantom_corpus", required_unless_present = "phantom_corpus")]
        data: Option<PathBuf>,
        /// Raw case directories, preprocessed in memory.
        #[arg(long)]
        phantom_corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Segment one raw case with an ensemble of checkpoints.
    Infer {
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        /// Raw case directory holding ct.nii.gz and pet.nii.gz.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "no_tta")]
        tta: bool,
        #[arg(long)]
        no_tta: bool,
        #[arg(long)]
        postprocess: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score predicted masks against ground truth.
    Evaluate {
        /// Directory of `<case>.nii.gz` predictions.
        #[arg(long)]
        pred_dir: PathBuf,
        /// Directory of `<case>.nii.gz` or `<case>/label.nii.gz` ground truth.
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the resolved constants and the layer table.
    Describe {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn resolve(args: &ConfigArgs) -> Result<PipelineConfig> {
    match &args.config {
        Some(path) => PipelineConfig::load(path),
        None => Ok(PipelineConfig::preset(args.preset.parse::<Preset>()?)),
    }
}

#[derive(Serialize)]
struct Provenance<'a> {
    verb: &'a str,
    config_hash: String,
    network_hash: String,
    seed: u64,
    version: &'a str,
    args: Vec<String>,
}

fn write_provenance(path: &Path, verb: &str, cfg: &PipelineConfig) -> Result<()> {
    let record = Provenance {
        verb,
        config_hash: cfg.hash(),
        network_hash: config_hash(&cfg.network),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION"),
        args: std::env::args().collect(),
    };
    jsonfile::write(path, &record)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Text report of every preset constant followed by the layer table.
pub fn describe(cfg: &PipelineConfig) -> String {
    let n = &cfg.network;
    let p = &cfg.preprocess;
    let t = &cfg.train;
    let mut s = String::new();
    let size = |v: [usize; 3]| format!("{}x{}x{}", v[0], v[1], v[2]);
    let _ = writeln!(s, "preset: {}", if cfg.preset == Preset::Paper { "paper" } else { "desk" });
    let _ = writeln!(s, "network: SegResNet, {} -> {} channels", n.in_channels, n.out_channels);
    let _ = writeln!(s, "blocks_down: {:?}", n.blocks_down);
    let _ = writeln!(s, "init_filters: {}", n.init_filters);
    let _ = writeln!(s, "deep_supervision_levels: {}", n.ds_levels);
    let _ = writeln!(s, "parameters: {}", param_count(n));
    let _ = writeln!(s, "patch: {}", size(cfg.sampler.patch_size));
    let _ = writeln!(s, "spacing_mm: {:?}", p.spacing);
    let _ = writeln!(
        s,
        "crop_mm: {}x{}x{}",
        p.crop.box_xy_mm, p.crop.box_xy_mm, p.crop.box_z_mm
    );
    let _ = writeln!(s, "ct_window: {:?}, logit span {}", p.normalization.ct_range, p.normalization.ct_logit_span);
    let _ = writeln!(s, "class_probabilities: {:?}", cfg.sampler.class_probs);
    let _ = writeln!(s, "optimizer: AdamW, lr {:e}, weight_decay {:e}", t.lr0, t.optimizer.weight_decay);
    let _ = writeln!(s, "schedule: cosine to zero over {} epochs", t.epochs);
    let _ = writeln!(s, "batch: {} x {} accumulated", t.batch_size, t.grad_accum);
    let _ = writeln!(s, "folds: {}", cfg.crossval.folds);
    let _ = writeln!(s, "runs: {}", cfg.crossval.runs);
    let _ = writeln!(s, "tta_flips: {}", if cfg.inference.tta { 8 } else { 1 });
    let _ = writeln!(s, "ensemble: {} models", cfg.ensemble_size());
    let _ = writeln!(s, "sliding_window: roi {}, overlap {}", size(cfg.inference.roi_size), cfg.inference.overlap);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<14} {:<34} {:<18} {:>10}", "layer", "op", "output", "params");
    for row in describe_layers(n) {
        let [c, d, h, w] = row.output;
        let _ = writeln!(s, "{:<14} {:<34} {:<18} {:>10}", row.name, row.op, format!("{c}x{d}x{h}x{w}"), row.params);
    }
    s
}

fn load_models(paths: &[PathBuf], cfg: &PipelineConfig) -> Result<Vec<Model>> {
    paths
        .iter()
        .map(|p| {
            let ck = Checkpoint::load_for(p, &cfg.network)?;
            Ok(Model {
                net: SegResNet::new(ck.config)?,
                params: ck.params,
            })
        })
        .collect()
}

fn preprocess_dirs(input: &Path, cfg: &PipelineConfig) -> Result<Vec<PreprocessedCase>> {
    let dirs = list_case_dirs(input, "ct.nii.gz")?;
    if dirs.is_empty() {
        return Err(Error::Argument(format!("no case directories under {}", input.display())));
    }
    dirs.par_iter()
        .map(|d| preprocess_case(&RawCase::load(d)?, &cfg.preprocess))
        .collect()
}

fn ground_truth(gt_dir: &Path, case: &str) -> Result<PathBuf> {
    let flat = gt_dir.join(format!("{case}.nii.gz"));
    if flat.exists() {
        return Ok(flat);
    }
    let nested = gt_dir.join(case).join("label.nii.gz");
    if nested.exists() {
        return Ok(nested);
    }
    Err(Error::Case {
        case: case.into(),
        reason: format!("no ground truth under {}", gt_dir.display()),
    })
}

fn evaluate(pred_dir: &Path, gt_dir: &Path, report: &Path) -> Result<EvalReport> {
    let mut preds = Vec::new();
    for entry in std::fs::read_dir(pred_dir).map_err(|e| Error::io(pred_dir, e))? {
        let path = entry.map_err(|e| Error::io(pred_dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(stem) = name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii")) {
            preds.push((stem.to_string(), path.clone()));
        }
    }
    if preds.is_empty() {
        return Err(Error::Argument(format!("no predictions under {}", pred_dir.display())));
    }
    let tallies = preds
        .par_iter()
        .map(|(case, path)| {
            let pred = read_labels(path)?;
            let gt = read_labels(ground_truth(gt_dir, case)?)?;
            Ok((case.clone(), case_tallies(case, &pred, &gt)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = EvalReport::from_tallies(tallies);
    r.write_csv(report)?;
    Ok(r)
}

fn execute(verb: Verb) -> Result<()> {
    let (cfg_args, name) = match &verb {
        Verb::Phantom { cfg, .. } => (Some(cfg), "phantom"),
        Verb::Preprocess { cfg, .. } => (Some(cfg), "preprocess"),
        Verb::Train { cfg, .. } => (Some(cfg), "train"),
        Verb::Crossval { cfg, .. } => (Some(cfg), "crossval"),
        Verb::Infer { cfg, .. } => (Some(cfg), "infer"),
        Verb::Describe { cfg } => (Some(cfg), "describe"),
        Verb::Evaluate { .. } => (None, "evaluate"),
    };
    let mut cfg = match cfg_args {
        Some(a) => resolve(a)?,
        None => PipelineConfig::desk(),
    };
    match &verb {
        Verb::Phantom { seed: Some(s), .. } => cfg.phantom.seed = *s,
        Verb::Train { seed: Some(s), .. } | Verb::Crossval { seed: Some(s), .. } => cfg.seed = *s,
        Verb::Infer {
            tta, no_tta, postprocess, ..
        } => {
            if *tta {
                cfg.inference.tta = true;
            }
            if *no_tta {
                cfg.inference.tta = false;
            }
            if *postprocess {
                cfg.inference.postprocess.enabled = true;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    if cfg_args.is_some_and(|a| a.print_config) {
        emit(&format!("{}\n", cfg.to_json()));
        return Ok(());
    }

    match verb {
        Verb::Phantom { count, out, .. } => {
            let manifest = generate_corpus(&cfg.phantom, count, &out)?;
            write_provenance(&out.join("provenance.json"), name, &cfg)?;
            emit(&format!("wrote {} cases to {}\n", manifest.cases.len(), out.display()));
        }
        Verb::Preprocess { input, out, .. } => {
            let cases = preprocess_dirs(&input, &cfg)?;
            create_dir(&out)?;
            cases.par_iter().try_for_each(|c| c.save(&out.join(c.id())))?;
            write_provenance(&out.join("provenance.json"), name, &cfg)?;
            emit(&format!("preprocessed {} cases into {}\n", cases.len(), out.display()));
        }
        Verb::Train {
            data,
            out,
            fold,
            run,
            folds,
            resume,
            ..
        } => {
            let records = load_records(&data)?;
            let folds = match folds {
                Some(p) => read_folds(&p)?,
                None => {
                    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
                    split_folds(&ids, cfg.crossval.folds, cfg.seed)?
                }
            };
            let (train, val) = fold_sets(&records, &folds, fold)?;
            let train: Vec<CaseRecord> = train.into_iter().cloned().collect();
            let val: Vec<CaseRecord> = val.into_iter().cloned().collect();
            create_dir(&out)?;
            write_folds(&out.join("folds.json"), &folds)?;
            let opts = TrainOptions {
                resume,
                stop_after: None,
            };
            let result = train_fold(&cfg, fold, run, &train, &val, &out, &opts)?;
            write_provenance(&out.join("provenance.json"), name, &cfg)?;
            emit(&format!(
                "fold {fold} run {run}: best validation Dice {} -> {}\n",
                result.best_val.map_or("n/a".into(), |v| format!("{v:.4}")),
                result.best_path().display()
            ));
        }
        Verb::Crossval {
            data, phantom_corpus, out, ..
        } => {
            let records = match (data, phantom_corpus) {
                (Some(d), _) => load_records(&d)?,
                (None, Some(raw)) => preprocess_dirs(&raw, &cfg)?
                    .iter()
                    .map(CaseRecord::from_case)
                    .collect::<Result<Vec<_>>>()?,
                (None, None) => return Err(Error::Argument("--data or --phantom-corpus is required".into())),
            };
            let report = run_crossval(&cfg, &records, &out)?;
            write_provenance(&out.join("provenance.json"), name, &cfg)?;
            emit(&report.to_markdown());
        }
        Verb::Infer {
            checkpoints, input, out, ..
        } => {
            let models = load_models(&checkpoints, &cfg)?;
            let raw = RawCase::load(&input)?;
            let pre = preprocess_case(&raw, &cfg.preprocess)?;
            let refs: Vec<&dyn Predictor> = models.iter().map(|m| m as &dyn Predictor).collect();
            let mask = segment(&refs, &pre, &raw.pet, &cfg.inference)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            write_nifti(&mask, &out)?;
            let mut prov = out.clone().into_os_string();
            prov.push(".provenance.json");
            write_provenance(Path::new(&prov), name, &cfg)?;
            emit(&format!("wrote {}\n", out.display()));
        }
        Verb::Evaluate {
            pred_dir, gt_dir, report, ..
        } => {
            let r = evaluate(&pred_dir, &gt_dir, &report)?;
            emit(&r.to_csv());
        }
        Verb::Describe { .. } => emit(&describe(&cfg)),
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::State(format!("thread pool: {e}")))
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Parses `args` (including the program name) and runs the verb.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            eprintln!("{}", error_line("usage", &format!("{:?}", e.kind())));
            return EXIT_USAGE;
        }
    };
    match configure_threads().and_then(|_| execute(cli.verb)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            }
        }
    }
}
