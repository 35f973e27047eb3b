use super::{check_5d, Real, Tensor};
use crate::error::{Error, Result};

/// Running mean and variance of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    /// Folds batch statistics in with `new = (1 - momentum) * old + momentum * batch`.
    pub fn update(&mut self, batch: &BatchNormStats<T>, momentum: T) {
        let keep = T::one() - momentum;
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = keep * *r + momentum * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.unbiased_var) {
            *r = keep * *r + momentum * b;
        }
    }
}

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub unbiased_var: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics.
    Train { eps: T },
    /// Normalize with frozen running statistics.
    Eval { stats: &'a RunningStats<T>, eps: T },
}

pub(super) struct BatchNormForward<T> {
    pub output: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub stats: Option<BatchNormStats<T>>,
}

pub(super) struct BatchNormGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub(super) fn batch_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mode: BatchNormMode<'_, T>,
) -> Result<BatchNormForward<T>> {
    let [n, c, d, h, w] = check_5d(x.shape(), "batch_norm")?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::Shape(format!(
            "batch_norm: {c} channels but gamma/beta have {}/{}",
            gamma.numel(),
            beta.numel()
        )));
    }
    let s = d * h * w;
    let m = n * s;
    let src = x.data();
    let channel = |ch: usize| (0..n).flat_map(move |b| ((b * c + ch) * s)..((b * c + ch) * s + s));

    let (mean, inv_std, stats) = match mode {
        BatchNormMode::Train { eps } => {
            let count = T::from_usize(m).expect("count fits");
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mu = channel(ch).map(|i| src[i]).sum::<T>() / count;
                let v = channel(ch).map(|i| (src[i] - mu) * (src[i] - mu)).sum::<T>() / count;
                mean[ch] = mu;
                var[ch] = v;
            }
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let unbiased = if m > 1 {
                let f = count / T::from_usize(m - 1).expect("count fits");
                var.iter().map(|&v| v * f).collect()
            } else {
                var.clone()
            };
            let stats = BatchNormStats {
                mean: mean.clone(),
                unbiased_var: unbiased,
            };
            (mean, inv_std, Some(stats))
        }
        BatchNormMode::Eval { stats, eps } => {
            if stats.mean.len() != c || stats.var.len() != c {
                return Err(Error::Shape(format!("batch_norm: running stats do not match {c} channels")));
            }
            let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (stats.mean.clone(), inv_std, None)
        }
    };

    let mut xhat = vec![T::zero(); src.len()];
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for ch in 0..c {
            let range = (b * c + ch) * s..(b * c + ch + 1) * s;
            let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in range {
                let xh = (src[i] - mu) * is;
                xhat[i] = xh;
                out[i] = g * xh + bt;
            }
        }
    }
    Ok(BatchNormForward {
        output: Tensor::from_parts(x.shape().to_vec(), out),
        xhat,
        inv_std,
        stats,
    })
}

pub(super) fn batch_norm_backward<T: Real>(
    shape: &[usize],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    dy: &[T],
    batch_stats: bool,
) -> BatchNormGrads<T> {
    let (n, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product();
    let m = T::from_usize(n * s).expect("count fits");
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            for i in base..base + s {
                dgamma[ch] += dy[i] * xhat[i];
                dbeta[ch] += dy[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            let scale = gamma[ch] * inv_std[ch];
            if batch_stats {
                let k = scale / m;
                for i in base..base + s {
                    dx[i] = k * (m * dy[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
                }
            } else {
                for i in base..base + s {
                    dx[i] = scale * dy[i];
                }
            }
        }
    }
    BatchNormGrads { dx, dgamma, dbeta }
}
