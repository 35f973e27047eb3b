//! Per-fold training loop and the cross-validation driver.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adamw_step, cosine_lr, OptimizerState, Tape, Tensor};
use crate::checkpoint::{params_hash, Checkpoint};
use crate::config::PipelineConfig;
use crate::datapipe::{augment, fold_map, sample_patch, split_folds, write_folds, CaseRecord};
use crate::error::{Error, Result};
use crate::inference::{sliding_window, InferenceConfig, Model};
use crate::jsonfile;
use crate::loss::{deep_supervision_loss, LabelTensor, LossTerms};
use crate::metrics::{aggregate, tally_labels, AggregatedDice};
use crate::phantom::mix_seed;
use crate::preprocess::{list_case_dirs, PreprocessedCase};
use crate::segresnet::{build, Mode, NetworkParams, SegResNet};

const INIT_TAG: u64 = 0x1;
const ORDER_TAG: u64 = 0x2;
const PATCH_TAG: u64 = 0x3;

/// Seed for the initial weights of model `(fold, run)`.
pub fn init_seed(seed: u64, fold: usize, run: usize) -> u64 {
    mix_seed(&[seed, INIT_TAG, fold as u64, run as u64])
}

/// Loads every preprocessed case under `root` in network form.
pub fn load_records(root: &Path) -> Result<Vec<CaseRecord>> {
    let dirs = list_case_dirs(root, "sidecar.json")?;
    if dirs.is_empty() {
        return Err(Error::Argument(format!("no preprocessed cases under {}", root.display())));
    }
    dirs.iter()
        .map(|d| CaseRecord::from_case(&PreprocessedCase::load(d)?))
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<PathBuf>,
    /// Stop once this many epochs have completed.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: usize,
        lr: f64,
        loss: f64,
        /// Per supervision level, averaged over micro-batches.
        levels: Vec<LossTerms>,
        cases: Vec<String>,
    },
    Epoch {
        epoch: usize,
        lr: f64,
        lr_end: f64,
        loss: f64,
        dice: f64,
        ce: f64,
        seconds: f64,
    },
    Val {
        epoch: usize,
        dice_agg: f64,
        per_class: [f64; 2],
        best: bool,
    },
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

struct Log {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Log {
    fn open(path: PathBuf, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    fn write(&mut self, rec: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::json(&self.path, e))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub dir: PathBuf,
    pub last: Checkpoint,
    /// Best validation score seen, with the checkpoint kept at `best.ckpt`.
    pub best_val: Option<f64>,
    pub validations: Vec<(usize, AggregatedDice)>,
}

impl FoldResult {
    pub fn best_path(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn last_path(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }
}

fn stack(patches: &[(Tensor<f32>, LabelTensor)]) -> Result<(Tensor<f32>, LabelTensor)> {
    let first = &patches[0];
    let mut shape = first.0.shape().to_vec();
    shape[0] = patches.len();
    let mut lshape = first.1.shape;
    lshape[0] = patches.len();
    let input: Vec<f32> = patches.iter().flat_map(|p| p.0.data().iter().copied()).collect();
    let labels: Vec<u8> = patches.iter().flat_map(|p| p.1.data.iter().copied()).collect();
    Ok((Tensor::new(shape, input)?, LabelTensor::new(lshape, labels)?))
}

#[derive(Serialize)]
struct NanDump<'a> {
    epoch: usize,
    step: usize,
    micro_batch: usize,
    lr: f64,
    cases: &'a [String],
    levels: &'a [LossTerms],
    params_hash: String,
    /// Largest magnitude per parameter array, `NaN` if any entry is non-finite.
    param_max_abs: Vec<(String, f32)>,
}

/// Validation: plain sliding window on the working grid, pooled Dice.
pub fn validate(model: &Model, cases: &[CaseRecord], cfg: &InferenceConfig) -> Result<AggregatedDice> {
    let icfg = InferenceConfig { tta: false, ..*cfg };
    let tallies = cases
        .iter()
        .map(|c| {
            let map = sliding_window(model, &c.input, &c.pad, &icfg)?;
            Ok(tally_labels(&map.argmax(), &c.labels))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&tallies))
}

/// Trains model `(fold, run)` on `train`, validating on `val`.
/// Writes `train_log.jsonl`, `last.ckpt` and `best.ckpt` into `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn train_fold(
    cfg: &PipelineConfig,
    fold: usize,
    run: usize,
    train: &[CaseRecord],
    val: &[CaseRecord],
    out_dir: &Path,
    opts: &TrainOptions,
) -> Result<FoldResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Argument("training and validation sets must be nonempty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let tc = &cfg.train;
    let net = SegResNet::new(cfg.network.clone())?;

    let (mut params, mut opt, start, mut best_val) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load_for(path, &cfg.network)?;
            if ck.optimizer.config != tc.optimizer {
                return Err(Error::State(format!("{} used different optimizer settings", path.display())));
            }
            (ck.params, ck.optimizer, ck.epoch, ck.best_val)
        }
        None => {
            let params: NetworkParams<f32> = build(&cfg.network, init_seed(cfg.seed, fold, run))?;
            let sizes: Vec<usize> = params
                .learnable_indices()
                .iter()
                .map(|&i| params.entries()[i].tensor.numel())
                .collect();
            let opt = OptimizerState::new(tc.optimizer, &sizes);
            (params, opt, 0, None)
        }
    };
    if start > tc.epochs {
        return Err(Error::State(format!("checkpoint is at epoch {start}, past the planned {}", tc.epochs)));
    }
    let mut log = Log::open(out_dir.join("train_log.jsonl"), opts.resume.is_some())?;
    let learnable = params.learnable_indices();
    let mut slot_of = vec![usize::MAX; params.entries().len()];
    for (slot, &i) in learnable.iter().enumerate() {
        slot_of[i] = slot;
    }

    let steps = tc.steps(train.len());
    let per_step = tc.batch_size * tc.grad_accum;
    let span = cfg.preprocess.normalization.ct_logit_span;
    let stop = opts.stop_after.unwrap_or(tc.epochs).min(tc.epochs);
    let mut validations = Vec::new();
    let mut last_val = None;

    for epoch in start..stop {
        let t0 = Instant::now();
        let lr = cosine_lr(epoch, tc.epochs, tc.lr0);
        let lr_end = cosine_lr(epoch + 1, tc.epochs, tc.lr0);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[
            cfg.seed,
            ORDER_TAG,
            fold as u64,
            run as u64,
            epoch as u64,
        ])));
        let mut epoch_terms = LossTerms::default();
        let mut epoch_loss = 0.0;

        for step in 0..steps {
            let mut grads: Vec<Vec<f32>> = learnable
                .iter()
                .map(|&i| vec![0.0; params.entries()[i].tensor.numel()])
                .collect();
            let mut step_loss = 0.0;
            let mut step_levels: Vec<LossTerms> = Vec::new();
            let mut step_cases = Vec::new();
            for micro in 0..tc.grad_accum {
                let mut batch = Vec::with_capacity(tc.batch_size);
                let mut ids = Vec::with_capacity(tc.batch_size);
                for b in 0..tc.batch_size {
                    let slot = step * per_step + micro * tc.batch_size + b;
                    let case = &train[order[slot % order.len()]];
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                        cfg.seed,
                        PATCH_TAG,
                        fold as u64,
                        run as u64,
                        epoch as u64,
                        step as u64,
                        slot as u64,
                    ]));
                    let mut patch = sample_patch(case, &cfg.sampler, &mut rng);
                    augment(&mut patch, &cfg.augment, span, &mut rng);
                    batch.push((patch.input, patch.target));
                    ids.push(case.id.clone());
                }
                let (x, target) = stack(&batch)?;
                let mut tape = Tape::new();
                let xv = tape.constant(x);
                let pass = net.forward(&params, &mut tape, xv, Mode::Train)?;
                let (loss, levels) = deep_supervision_loss(&mut tape, &pass.outputs, &target, &cfg.loss)?;
                let value = tape.value(loss).data()[0] as f64;
                if !value.is_finite() {
                    let dump = out_dir.join("nan_dump.json");
                    let record = NanDump {
                        epoch,
                        step,
                        micro_batch: micro,
                        lr,
                        cases: &ids,
                        levels: &levels,
                        params_hash: params_hash(&params),
                        param_max_abs: params
                            .entries()
                            .iter()
                            .map(|e| {
                                let m = e.tensor.data().iter().try_fold(0f32, |m, v| {
                                    v.is_finite().then(|| m.max(v.abs()))
                                });
                                (e.name.clone(), m.unwrap_or(f32::NAN))
                            })
                            .collect(),
                    };
                    jsonfile::write(&dump, &record)?;
                    return Err(Error::NonFinite { epoch, step, dump });
                }
                tape.backward(loss)?;
                for &(idx, var) in &pass.param_vars {
                    if let Some(g) = tape.grad(var) {
                        let slot = slot_of[idx];
                        if slot != usize::MAX {
                            grads[slot].iter_mut().zip(g).for_each(|(a, b)| *a += *b);
                        }
                    }
                }
                params.apply_stat_updates(&pass.stat_updates)?;
                step_loss += value;
                if step_levels.is_empty() {
                    step_levels = vec![LossTerms::default(); levels.len()];
                }
                for (acc, t) in step_levels.iter_mut().zip(&levels) {
                    acc.dice += t.dice;
                    acc.ce += t.ce;
                }
                step_cases.extend(ids);
            }
            let inv = 1.0 / tc.grad_accum as f64;
            if tc.grad_accum > 1 {
                let s = inv as f32;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
            {
                let mut slices: Vec<&mut [f32]> = params
                    .entries_mut()
                    .iter_mut()
                    .filter(|e| e.kind.learnable())
                    .map(|e| e.tensor.data_mut())
                    .collect();
                let grad_refs: Vec<Option<&[f32]>> = grads.iter().map(|g| Some(g.as_slice())).collect();
                adamw_step(&mut slices, &grad_refs, &mut opt, lr)?;
            }
            step_loss *= inv;
            for t in &mut step_levels {
                t.dice *= inv;
                t.ce *= inv;
            }
            epoch_loss += step_loss;
            epoch_terms.dice += step_levels[0].dice;
            epoch_terms.ce += step_levels[0].ce;
            log.write(&LogRecord::Step {
                epoch,
                step,
                lr,
                loss: step_loss,
                levels: step_levels,
                cases: step_cases,
            })?;
        }
        let n = steps as f64;
        log.write(&LogRecord::Epoch {
            epoch,
            lr,
            lr_end,
            loss: epoch_loss / n,
            dice: epoch_terms.dice / n,
            ce: epoch_terms.ce / n,
            seconds: t0.elapsed().as_secs_f64(),
        })?;
        log::info!(
            "fold {fold} run {run} epoch {}/{}: loss {:.4} lr {lr:.3e}",
            epoch + 1,
            tc.epochs,
            epoch_loss / n
        );

        let done = epoch + 1;
        let mut improved = false;
        if done % tc.val_every == 0 || done == tc.epochs {
            let model = Model {
                net: SegResNet::new(cfg.network.clone())?,
                params: params.clone(),
            };
            let score = validate(&model, val, &cfg.inference)?;
            improved = best_val.is_none_or(|b| score.mean > b);
            if improved {
                best_val = Some(score.mean);
            }
            log.write(&LogRecord::Val {
                epoch,
                dice_agg: score.mean,
                per_class: score.per_class,
                best: improved,
            })?;
            log::info!("fold {fold} run {run} epoch {done}: validation Dice {:.4}", score.mean);
            last_val = Some(score.mean);
            validations.push((epoch, score));
        }
        let ck = Checkpoint {
            config: cfg.network.clone(),
            params: params.clone(),
            optimizer: opt.clone(),
            epoch: done,
            val_dice: last_val,
            best_val,
        };
        ck.save(&out_dir.join("last.ckpt"))?;
        if improved {
            ck.save(&out_dir.join("best.ckpt"))?;
        }
    }

    let last = if stop > start {
        Checkpoint::load(&out_dir.join("last.ckpt"))?
    } else {
        Checkpoint {
            config: cfg.network.clone(),
            params,
            optimizer: opt,
            epoch: start,
            val_dice: last_val,
            best_val,
        }
    };
    Ok(FoldResult {
        dir: out_dir.to_path_buf(),
        last,
        best_val,
        validations,
    })
}

/// Folds used for cross-validation. With one fold the model trains and
/// validates on the same cases.
pub fn fold_sets<'a>(
    cases: &'a [CaseRecord],
    folds: &[Vec<String>],
    fold: usize,
) -> Result<(Vec<&'a CaseRecord>, Vec<&'a CaseRecord>)> {
    if fold >= folds.len() {
        return Err(Error::Argument(format!("fold {fold} out of range for {} folds", folds.len())));
    }
    let map = fold_map(folds);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in cases {
        let f = *map.get(&c.id).ok_or_else(|| Error::Case {
            case: c.id.clone(),
            reason: "not assigned to any fold".into(),
        })?;
        if f == fold {
            val.push(c);
        }
        if f != fold || folds.len() == 1 {
            train.push(c);
        }
    }
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossvalModel {
    pub run: usize,
    pub fold: usize,
    pub dir: PathBuf,
    pub best_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossvalReport {
    pub folds: Vec<Vec<String>>,
    pub models: Vec<CrossvalModel>,
}

impl CrossvalReport {
    fn runs(&self) -> usize {
        self.models.iter().map(|m| m.run + 1).max().unwrap_or(0)
    }

    fn score(&self, run: usize, fold: usize) -> Option<f64> {
        self.models
            .iter()
            .find(|m| m.run == run && m.fold == fold)
            .and_then(|m| m.best_val)
    }

    /// Mean of the per-fold scores of `run`.
    pub fn run_average(&self, run: usize) -> Option<f64> {
        let scores: Option<Vec<f64>> = (0..self.folds.len()).map(|f| self.score(run, f)).collect();
        scores.map(|s| s.iter().sum::<f64>() / s.len() as f64)
    }

    pub fn checkpoints(&self) -> Vec<PathBuf> {
        self.models.iter().map(|m| m.dir.join("best.ckpt")).collect()
    }

    fn cell(v: Option<f64>) -> String {
        v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
    }

    pub fn to_markdown(&self) -> String {
        let k = self.folds.len();
        let mut s = String::from("| Run |");
        for f in 1..=k {
            let _ = write!(s, " Fold {f} |");
        }
        s.push_str(" Average |\n|---|");
        s.push_str(&"---|".repeat(k + 1));
        s.push('\n');
        for r in 0..self.runs() {
            let _ = write!(s, "| {} |", r + 1);
            for f in 0..k {
                let _ = write!(s, " {} |", Self::cell(self.score(r, f)));
            }
            let _ = writeln!(s, " {} |", Self::cell(self.run_average(r)));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let k = self.folds.len();
        let mut s = String::from("run");
        for f in 1..=k {
            let _ = write!(s, ",fold_{f}");
        }
        s.push_str(",average\n");
        for r in 0..self.runs() {
            let _ = write!(s, "{}", r + 1);
            for f in 0..k {
                let _ = write!(s, ",{}", self.score(r, f).map_or(String::new(), |v| format!("{v:.6}")));
            }
            let _ = writeln!(s, ",{}", self.run_average(r).map_or(String::new(), |v| format!("{v:.6}")));
        }
        s
    }
}

/// Trains `runs × folds` models under `out_dir/run{r}/fold{f}` and writes
/// `folds.json`, `crossval.csv` and `crossval.md`.
pub fn run_crossval(cfg: &PipelineConfig, cases: &[CaseRecord], out_dir: &Path) -> Result<CrossvalReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    let folds = split_folds(&ids, cfg.crossval.folds, cfg.seed)?;
    write_folds(&out_dir.join("folds.json"), &folds)?;
    let mut models = Vec::new();
    for run in 0..cfg.crossval.runs {
        for fold in 0..folds.len() {
            let (train, val) = fold_sets(cases, &folds, fold)?;
            let train: Vec<CaseRecord> = train.into_iter().cloned().collect();
            let val: Vec<CaseRecord> = val.into_iter().cloned().collect();
            let dir = out_dir.join(format!("run{run}")).join(format!("fold{fold}"));
            let result = train_fold(cfg, fold, run, &train, &val, &dir, &TrainOptions::default())?;
            models.push(CrossvalModel {
                run,
                fold,
                dir,
                best_val: result.best_val,
            });
        }
    }
    let report = CrossvalReport { folds, models };
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("crossval.csv", report.to_csv())?;
    write("crossval.md", report.to_markdown())?;
    jsonfile::write(&out_dir.join("crossval.json"), &report)?;
    Ok(report)
}
