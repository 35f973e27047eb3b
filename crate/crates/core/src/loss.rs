//! Soft Dice + cross-entropy and its deep-supervision weighted sum.

use serde::{Deserialize, Serialize};

use crate::autodiff::{nearest_downsample_labels, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Integer class map of shape `[N, D, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTensor {
    pub shape: [usize; 4],
    pub data: Vec<u8>,
}

impl LabelTensor {
    pub fn new(shape: [usize; 4], data: Vec<u8>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!("label tensor {shape:?} got {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 1 {
            return Ok(self.clone());
        }
        let (data, shape) = nearest_downsample_labels(&self.data, self.shape, factor)?;
        Ok(Self { shape, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub dice_smooth: f64,
    pub include_background: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            dice_smooth: 1e-5,
            include_background: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dice_smooth > 0.0) {
            return Err(Error::Config(format!("dice_smooth must be positive, got {}", self.dice_smooth)));
        }
        Ok(())
    }
}

/// Weight of supervision level `i`.
pub fn ds_weight(i: usize) -> f64 {
    0.5f64.powi(i as i32)
}

/// Values of the two loss terms at one scale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub dice: f64,
    pub ce: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.dice + self.ce
    }
}

/// Loss terms and the gradient of their sum with respect to the logits.
pub fn dice_ce_with_grad<T: Real>(
    logits: &Tensor<T>,
    target: &LabelTensor,
    cfg: &LossConfig,
) -> Result<(LossTerms, Vec<T>)> {
    let shape = logits.shape();
    if shape.len() != 5 || shape[0] != target.shape[0] || shape[2..] != target.shape[1..] {
        return Err(Error::Shape(format!(
            "logits {shape:?} do not match target {:?}",
            target.shape
        )));
    }
    let (n, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product();
    if let Some(&bad) = target.data.iter().find(|&&l| l as usize >= c) {
        return Err(Error::Argument(format!("target label {bad} outside 0..{c}")));
    }
    let z = logits.data();
    let first_class = usize::from(!cfg.include_background);
    let classes = c - first_class;
    let smooth = cfg.dice_smooth;

    // log-softmax and softmax in f64
    let mut p = vec![0.0f64; z.len()];
    let mut ce = 0.0f64;
    for b in 0..n {
        let base = b * c * s;
        for v in 0..s {
            let max = (0..c).map(|ch| z[base + ch * s + v].to_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..c).map(|ch| (z[base + ch * s + v].to_f64().unwrap() - max).exp()).sum();
            let log_total = total.ln();
            for ch in 0..c {
                let i = base + ch * s + v;
                let logp = z[i].to_f64().unwrap() - max - log_total;
                p[i] = logp.exp();
                if ch == target.data[b * s + v] as usize {
                    ce -= logp;
                }
            }
        }
    }
    let voxels = (n * s) as f64;
    ce /= voxels;

    let mut dice = 0.0f64;
    // dL/dp from the Dice term
    let mut dp = vec![0.0f64; z.len()];
    let norm = 1.0 / (n * classes.max(1)) as f64;
    for b in 0..n {
        let base = b * c * s;
        let labels = &target.data[b * s..(b + 1) * s];
        for ch in first_class..c {
            let row = &p[base + ch * s..base + (ch + 1) * s];
            let mut inter = 0.0;
            let mut psum = 0.0;
            let mut gsum = 0.0;
            for (v, &pv) in row.iter().enumerate() {
                psum += pv;
                if labels[v] as usize == ch {
                    inter += pv;
                    gsum += 1.0;
                }
            }
            let num = 2.0 * inter + smooth;
            let den = psum + gsum + smooth;
            dice += norm * (1.0 - num / den);
            let common = num / (den * den);
            for v in 0..s {
                let g = if labels[v] as usize == ch { 1.0 } else { 0.0 };
                dp[base + ch * s + v] = -norm * (2.0 * g / den - common);
            }
        }
    }

    // chain through softmax, then add the CE gradient
    let mut grad = vec![T::zero(); z.len()];
    for b in 0..n {
        let base = b * c * s;
        for v in 0..s {
            let dot: f64 = (0..c).map(|ch| dp[base + ch * s + v] * p[base + ch * s + v]).sum();
            let t = target.data[b * s + v] as usize;
            for ch in 0..c {
                let i = base + ch * s + v;
                let g_ce = (p[i] - if ch == t { 1.0 } else { 0.0 }) / voxels;
                grad[i] = T::lit(p[i] * (dp[i] - dot) + g_ce);
            }
        }
    }
    Ok((LossTerms { dice, ce }, grad))
}

/// Soft Dice loss plus mean cross-entropy, recorded on the tape.
pub fn dice_ce<T: Real>(tape: &mut Tape<T>, logits: Var, target: &LabelTensor, cfg: &LossConfig) -> Result<(Var, LossTerms)> {
    let (terms, grad) = dice_ce_with_grad(tape.value(logits), target, cfg)?;
    let var = tape.scalar_fn(logits, T::lit(terms.total()), grad)?;
    Ok((var, terms))
}

/// `sum_i 2^-i * dice_ce(preds[i], target downsampled by 2^i)`.
pub fn deep_supervision_loss<T: Real>(
    tape: &mut Tape<T>,
    preds: &[Var],
    target: &LabelTensor,
    cfg: &LossConfig,
) -> Result<(Var, Vec<LossTerms>)> {
    if preds.is_empty() {
        return Err(Error::Argument("deep supervision needs at least one prediction".into()));
    }
    let mut total: Option<Var> = None;
    let mut terms = Vec::with_capacity(preds.len());
    for (i, &pred) in preds.iter().enumerate() {
        let t = target.downsample(1 << i)?;
        let (level, lt) = dice_ce(tape, pred, &t, cfg)?;
        terms.push(lt);
        let weighted = if i == 0 { level } else { tape.scale(level, T::lit(ds_weight(i))) };
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    Ok((total.expect("nonempty"), terms))
}
