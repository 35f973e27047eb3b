//! Residual encoder-decoder segmentation network with deep supervision.
//!
//! Encoder stage `s` runs at width `init_filters * 2^s` and resolution
//! `1 / 2^s`; every stage after the first opens with a stride-2 3³
//! convolution. Each decoder level upsamples with a 2³ transposed
//! convolution, adds the matching encoder output and applies one residual
//! block. A 1×1×1 head produces full-resolution logits; auxiliary 1×1×1
//! heads read decoder levels `1..ds_levels`.
//!
//! Residual blocks are pre-activation: `x + conv(relu(bn(conv(relu(bn(x))))))`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormMode, BatchNormStats, Real, RunningStats, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const NORM_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegResNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub init_filters: usize,
    pub blocks_down: Vec<usize>,
    pub ds_levels: usize,
    pub patch_size: [usize; 3],
}

impl SegResNetConfig {
    pub fn paper() -> Self {
        Self {
            in_channels: 2,
            out_channels: 3,
            init_filters: 32,
            blocks_down: vec![1, 2, 2, 4, 4, 4],
            ds_levels: 5,
            patch_size: [192; 3],
        }
    }

    pub fn desk() -> Self {
        Self {
            in_channels: 2,
            out_channels: 3,
            init_filters: 8,
            blocks_down: vec![1, 2, 2, 4],
            ds_levels: 3,
            patch_size: [32; 3],
        }
    }

    pub fn stages(&self) -> usize {
        self.blocks_down.len()
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_divisor(&self) -> usize {
        1 << (self.stages().saturating_sub(1))
    }

    pub fn width(&self, stage: usize) -> usize {
        self.init_filters << stage
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages() < 2 {
            return Err(Error::Config(format!(
                "blocks_down needs at least 2 stages for a decoder, got {:?}",
                self.blocks_down
            )));
        }
        if self.init_filters == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.ds_levels == 0 || self.ds_levels > self.stages() - 1 {
            return Err(Error::Config(format!(
                "ds_levels must lie in 1..={}, got {}",
                self.stages() - 1,
                self.ds_levels
            )));
        }
        let div = self.size_divisor();
        if self.patch_size.iter().any(|&p| p == 0 || p % div != 0) {
            return Err(Error::Config(format!(
                "patch size {:?} not divisible by {div}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    NormGamma,
    NormBeta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Named parameters and normalization buffers in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> NetworkParams<T> {
    pub fn from_entries(entries: Vec<ParamEntry<T>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.name.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate parameter name {}", e.name)));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.entries[i].tensor)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.position(name)
            .ok_or_else(|| Error::Argument(format!("missing parameter {name}")))
    }

    /// Indices of learnable entries, in order.
    pub fn learnable_indices(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].kind.learnable())
            .collect()
    }

    pub fn num_learnable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind.learnable())
            .map(|e| e.tensor.numel())
            .sum()
    }

    fn running_stats(&self, prefix: &str) -> Result<RunningStats<T>> {
        let mean = self.require(&format!("{prefix}.running_mean"))?;
        let var = self.require(&format!("{prefix}.running_var"))?;
        Ok(RunningStats {
            mean: self.entries[mean].tensor.data().to_vec(),
            var: self.entries[var].tensor.data().to_vec(),
        })
    }

    /// Folds batch statistics from a training forward pass into the
    /// running buffers.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>]) -> Result<()> {
        let momentum = T::lit(NORM_MOMENTUM);
        for u in updates {
            let mut stats = self.running_stats(&u.prefix)?;
            stats.update(&u.stats, momentum);
            let mean = self.require(&format!("{}.running_mean", u.prefix))?;
            let var = self.require(&format!("{}.running_var", u.prefix))?;
            self.entries[mean].tensor.data_mut().copy_from_slice(&stats.mean);
            self.entries[var].tensor.data_mut().copy_from_slice(&stats.var);
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    tensor: e.tensor.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StatUpdate<T> {
    pub prefix: String,
    pub stats: BatchNormStats<T>,
}

/// Name, kind and shape of every parameter, in build order.
pub fn param_layout(cfg: &SegResNetConfig) -> Vec<(String, ParamKind, Vec<usize>)> {
    let mut out = Vec::new();
    let conv = |out: &mut Vec<_>, name: &str, cout: usize, cin: usize, k: usize| {
        out.push((format!("{name}.weight"), ParamKind::ConvWeight, vec![cout, cin, k, k, k]));
        out.push((format!("{name}.bias"), ParamKind::ConvBias, vec![cout]));
    };
    let norm = |out: &mut Vec<_>, name: &str, c: usize| {
        out.push((format!("{name}.gamma"), ParamKind::NormGamma, vec![c]));
        out.push((format!("{name}.beta"), ParamKind::NormBeta, vec![c]));
        out.push((format!("{name}.running_mean"), ParamKind::RunningMean, vec![c]));
        out.push((format!("{name}.running_var"), ParamKind::RunningVar, vec![c]));
    };
    let block = |out: &mut Vec<_>, name: &str, c: usize| {
        norm(out, &format!("{name}.norm1"), c);
        conv(out, &format!("{name}.conv1"), c, c, 3);
        norm(out, &format!("{name}.norm2"), c);
        conv(out, &format!("{name}.conv2"), c, c, 3);
    };
    conv(&mut out, "stem", cfg.width(0), cfg.in_channels, 3);
    for (s, &blocks) in cfg.blocks_down.iter().enumerate() {
        if s > 0 {
            conv(&mut out, &format!("enc{s}.down"), cfg.width(s), cfg.width(s - 1), 3);
        }
        for b in 0..blocks {
            block(&mut out, &format!("enc{s}.block{b}"), cfg.width(s));
        }
    }
    for l in (0..cfg.stages() - 1).rev() {
        norm(&mut out, &format!("dec{l}.norm"), cfg.width(l + 1));
        let (cin, cout) = (cfg.width(l + 1), cfg.width(l));
        out.push((format!("dec{l}.up.weight"), ParamKind::ConvWeight, vec![cin, cout, 2, 2, 2]));
        out.push((format!("dec{l}.up.bias"), ParamKind::ConvBias, vec![cout]));
        block(&mut out, &format!("dec{l}.block"), cfg.width(l));
    }
    conv(&mut out, "head", cfg.out_channels, cfg.width(0), 1);
    for i in 1..cfg.ds_levels {
        conv(&mut out, &format!("ds{i}"), cfg.out_channels, cfg.width(i), 1);
    }
    out
}

/// Learnable parameter count; a pure function of the config.
pub fn param_count(cfg: &SegResNetConfig) -> usize {
    param_layout(cfg)
        .iter()
        .filter(|(_, kind, _)| kind.learnable())
        .map(|(_, _, shape)| shape.iter().product::<usize>())
        .sum()
}

/// Fresh parameters: Kaiming-uniform (fan-in) kernels, zero biases and
/// betas, unit gammas, running stats at (0, 1).
pub fn build<T: Real>(cfg: &SegResNetConfig, seed: u64) -> Result<NetworkParams<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = param_layout(cfg)
        .into_iter()
        .map(|(name, kind, shape)| {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match kind {
                ParamKind::ConvWeight => {
                    // transposed-conv weights are [cin, cout, ...]: each output sees cin inputs
                    let fan_in = if name.ends_with(".up.weight") {
                        shape[0]
                    } else {
                        shape[1..].iter().product()
                    };
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
                }
                ParamKind::NormGamma | ParamKind::RunningVar => vec![T::one(); n],
                ParamKind::ConvBias | ParamKind::NormBeta | ParamKind::RunningMean => vec![T::zero(); n],
            };
            ParamEntry {
                name,
                kind,
                tensor: Tensor::from_parts(shape, data),
            }
        })
        .collect();
    NetworkParams::from_entries(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Result of one forward pass on a tape.
pub struct ForwardPass<T> {
    /// Logits per supervision level; only level 0 in eval mode.
    pub outputs: Vec<Var>,
    /// Tape leaf of every learnable parameter, by entry index.
    pub param_vars: Vec<(usize, Var)>,
    pub stat_updates: Vec<StatUpdate<T>>,
}

struct Builder<'a, T: Real> {
    params: &'a NetworkParams<T>,
    tape: &'a mut Tape<T>,
    mode: Mode,
    param_vars: Vec<(usize, Var)>,
    stat_updates: Vec<StatUpdate<T>>,
}

impl<T: Real> Builder<'_, T> {
    fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self.params.require(name)?;
        let var = self
            .tape
            .leaf(self.params.entries[idx].tensor.clone(), self.mode == Mode::Train);
        if self.mode == Mode::Train {
            self.param_vars.push((idx, var));
        }
        Ok(var)
    }

    fn conv(&mut self, x: Var, name: &str, stride: usize) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        let k = self.tape.shape(w)[2];
        self.tape.conv3d(x, w, Some(b), stride, k / 2)
    }

    fn norm_relu(&mut self, x: Var, name: &str) -> Result<Var> {
        let g = self.param(&format!("{name}.gamma"))?;
        let b = self.param(&format!("{name}.beta"))?;
        let eps = T::lit(NORM_EPS);
        let y = match self.mode {
            Mode::Train => {
                let (y, stats) = self.tape.batch_norm(x, g, b, BatchNormMode::Train { eps })?;
                self.stat_updates.push(StatUpdate {
                    prefix: name.to_string(),
                    stats: stats.expect("train mode returns stats"),
                });
                y
            }
            Mode::Eval => {
                let stats = self.params.running_stats(name)?;
                self.tape
                    .batch_norm(x, g, b, BatchNormMode::Eval { stats: &stats, eps })?
                    .0
            }
        };
        Ok(self.tape.relu(y))
    }

    fn block(&mut self, x: Var, name: &str) -> Result<Var> {
        let h = self.norm_relu(x, &format!("{name}.norm1"))?;
        let h = self.conv(h, &format!("{name}.conv1"), 1)?;
        let h = self.norm_relu(h, &format!("{name}.norm2"))?;
        let h = self.conv(h, &format!("{name}.conv2"), 1)?;
        self.tape.add(x, h)
    }
}

/// Stateless network definition; parameters live in [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct SegResNet {
    config: SegResNetConfig,
}

impl SegResNet {
    pub fn new(config: SegResNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SegResNetConfig {
        &self.config
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let cfg = &self.config;
        let div = cfg.size_divisor();
        if shape.len() != 5 || shape[1] != cfg.in_channels {
            return Err(Error::Shape(format!(
                "network input must be [N, {}, D, H, W], got {shape:?}",
                cfg.in_channels
            )));
        }
        if shape[2..].iter().any(|&s| s == 0 || s % div != 0) {
            return Err(Error::Shape(format!(
                "spatial dims {:?} not divisible by {div}",
                &shape[2..]
            )));
        }
        Ok(())
    }

    pub fn forward<T: Real>(
        &self,
        params: &NetworkParams<T>,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
    ) -> Result<ForwardPass<T>> {
        self.check_input(tape.shape(x))?;
        let cfg = &self.config;
        let mut b = Builder {
            params,
            tape,
            mode,
            param_vars: Vec::new(),
            stat_updates: Vec::new(),
        };

        let mut h = b.conv(x, "stem", 1)?;
        let mut skips = Vec::with_capacity(cfg.stages());
        for (s, &blocks) in cfg.blocks_down.iter().enumerate() {
            if s > 0 {
                h = b.conv(h, &format!("enc{s}.down"), 2)?;
            }
            for i in 0..blocks {
                h = b.block(h, &format!("enc{s}.block{i}"))?;
            }
            skips.push(h);
        }

        let mut levels = vec![None; cfg.stages() - 1];
        for l in (0..cfg.stages() - 1).rev() {
            let a = b.norm_relu(h, &format!("dec{l}.norm"))?;
            let w = b.param(&format!("dec{l}.up.weight"))?;
            let bias = b.param(&format!("dec{l}.up.bias"))?;
            let up = b.tape.conv_transpose3d(a, w, Some(bias))?;
            let sum = b.tape.add(up, skips[l])?;
            h = b.block(sum, &format!("dec{l}.block"))?;
            levels[l] = Some(h);
        }

        let level = |i: usize| levels[i].expect("every decoder level is built");
        let mut outputs = vec![b.conv(level(0), "head", 1)?];
        if mode == Mode::Train {
            for i in 1..cfg.ds_levels {
                outputs.push(b.conv(level(i), &format!("ds{i}"), 1)?);
            }
        }
        Ok(ForwardPass {
            outputs,
            param_vars: b.param_vars,
            stat_updates: b.stat_updates,
        })
    }

    /// Full-resolution logits in eval mode.
    pub fn predict<T: Real>(&self, params: &NetworkParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let pass = self.forward(params, &mut tape, xv, Mode::Eval)?;
        Ok(tape.value(pass.outputs[0]).clone())
    }
}

/// One row of the layer table printed by `describe`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub name: String,
    pub op: String,
    pub output: [usize; 4],
    pub params: usize,
}

/// Layer table for an input of `config.patch_size`.
pub fn describe_layers(cfg: &SegResNetConfig) -> Vec<LayerRow> {
    let layout = param_layout(cfg);
    let count = |prefix: &str| -> usize {
        layout
            .iter()
            .filter(|(n, k, _)| k.learnable() && n.starts_with(prefix) && n[prefix.len()..].starts_with('.'))
            .map(|(_, _, s)| s.iter().product::<usize>())
            .sum()
    };
    let at = |c: usize, level: usize| {
        let [d, h, w] = cfg.patch_size.map(|p| p >> level);
        [c, d, h, w]
    };
    let mut rows = vec![LayerRow {
        name: "stem".into(),
        op: format!("conv3 {}->{}", cfg.in_channels, cfg.width(0)),
        output: at(cfg.width(0), 0),
        params: count("stem"),
    }];
    for (s, &blocks) in cfg.blocks_down.iter().enumerate() {
        if s > 0 {
            let name = format!("enc{s}.down");
            rows.push(LayerRow {
                op: format!("conv3/2 {}->{}", cfg.width(s - 1), cfg.width(s)),
                output: at(cfg.width(s), s),
                params: count(&name),
                name,
            });
        }
        for b in 0..blocks {
            let name = format!("enc{s}.block{b}");
            rows.push(LayerRow {
                op: format!("resblock {}", cfg.width(s)),
                output: at(cfg.width(s), s),
                params: count(&name),
                name,
            });
        }
    }
    for l in (0..cfg.stages() - 1).rev() {
        let up = format!("dec{l}.up");
        rows.push(LayerRow {
            op: format!("bn-relu-convT2/2 {}->{} +skip", cfg.width(l + 1), cfg.width(l)),
            output: at(cfg.width(l), l),
            params: count(&format!("dec{l}.norm")) + count(&up),
            name: up,
        });
        let name = format!("dec{l}.block");
        rows.push(LayerRow {
            op: format!("resblock {}", cfg.width(l)),
            output: at(cfg.width(l), l),
            params: count(&name),
            name,
        });
    }
    rows.push(LayerRow {
        name: "head".into(),
        op: format!("conv1 {}->{}", cfg.width(0), cfg.out_channels),
        output: at(cfg.out_channels, 0),
        params: count("head"),
    });
    for i in 1..cfg.ds_levels {
        let name = format!("ds{i}");
        rows.push(LayerRow {
            op: format!("conv1 {}->{}", cfg.width(i), cfg.out_channels),
            output: at(cfg.out_channels, i),
            params: count(&name),
            name,
        });
    }
    rows
}
