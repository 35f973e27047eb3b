//! Reverse-mode differentiation over 5D activations.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order of the graph; [`Tape::backward`] walks it once in
//! reverse. Handles to recorded values are plain indices ([`Var`]).
//!
//! The engine is generic over [`Real`] so the same code runs in float32 for
//! training and in float64 for gradient verification.

mod conv;
mod linalg;
mod norm;
mod optim;
mod tensor;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use linalg::gemm;
pub use norm::{BatchNormMode, BatchNormStats, RunningStats};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, OptimizerState};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Scalar types the engine runs on.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + std::fmt::Display
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    /// `C = alpha * A B + beta * C` on strided row/column layouts.
    ///
    /// # Safety
    /// Every element addressed through the strides must lie inside the
    /// allocations behind the pointers; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Softmax(Var),
    NearestDown(Var, usize),
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose3d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    /// Scalar-valued function of one input whose local gradient was computed
    /// during the forward pass.
    ScalarFn { x: Var, local_grad: Vec<T> },
}

impl<T: Real> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Sum(a) | Op::Relu(a) | Op::Softmax(a) | Op::NearestDown(a, _) => {
                vec![*a]
            }
            Op::Conv3d { x, w, b, .. } | Op::ConvTranspose3d { x, w, b } => {
                let mut p = vec![*x, *w];
                p.extend(b.iter().copied());
                p
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ScalarFn { x, .. } => vec![*x],
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// The recorded computation graph.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            op => op.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = requires_grad;
        v
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) root with respect to
    /// a leaf. Interior nodes release their gradients during the sweep.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("add: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("mul: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let va = self.value(a);
        let out = Tensor::from_parts(va.shape().to_vec(), va.data().iter().map(|&x| x * factor).collect());
        self.push(out, Op::Scale(a, factor))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(out, Op::Relu(a))
    }

    /// Softmax over axis 1 of an `[N, C, ...]` tensor.
    pub fn softmax_channels(&mut self, a: Var) -> Result<Var> {
        let out = softmax_channels(self.value(a))?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Keeps the lowest-index voxel of every `factor³` block of an
    /// `[N, C, D, H, W]` tensor.
    pub fn nearest_downsample(&mut self, a: Var, factor: usize) -> Result<Var> {
        let out = nearest_downsample(self.value(a), factor)?;
        Ok(self.push(out, Op::NearestDown(a, factor)))
    }

    /// Records a scalar computed outside the tape together with its gradient
    /// with respect to `x`.
    pub fn scalar_fn(&mut self, x: Var, value: T, local_grad: Vec<T>) -> Result<Var> {
        if local_grad.len() != self.value(x).numel() {
            return Err(Error::Shape(format!(
                "scalar_fn: gradient has {} elements, input has {}",
                local_grad.len(),
                self.value(x).numel()
            )));
        }
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn { x, local_grad }))
    }

    /// Cross-correlation of `[N, Cin, D, H, W]` with `[Cout, Cin, k, k, k]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv3d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        Ok(self.push(out, Op::Conv3d { x, w, b, stride, pad }))
    }

    /// Kernel-2, stride-2 transposed convolution; weights `[Cin, Cout, 2, 2, 2]`.
    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = conv::conv_transpose3d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::ConvTranspose3d { x, w, b }))
    }

    /// Per-channel normalization over `N, D, H, W`. In train mode the batch
    /// statistics are returned so the caller can fold them into its running
    /// estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchNormStats<T>>)> {
        let fwd = norm::batch_norm_forward(self.value(x), self.value(gamma), self.value(beta), mode)?;
        let var = self.push(
            fwd.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                batch_stats: fwd.stats.is_some(),
            },
        );
        Ok((var, fwd.stats))
    }

    /// Populates gradients of `loss` (a one-element tensor) on every leaf
    /// that requires them. Runs at most once per tape until
    /// [`reset_grads`](Self::reset_grads).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State("backward already ran on this tape; reset gradients first".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let grad = self.nodes[i].grad.take().expect("checked above");
            let contributions = self.node_backward(i, &grad);
            for (parent, g) in contributions {
                let node = &mut self.nodes[parent.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for p in [a, b] {
                    if self.wants(*p) {
                        out.push((*p, g.to_vec()));
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    out.push((*a, g.iter().zip(vb).map(|(&g, &y)| g * y).collect()));
                }
                if self.wants(*b) {
                    out.push((*b, g.iter().zip(va).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::Scale(a, f) => out.push((*a, g.iter().map(|&g| g * *f).collect())),
            Op::Sum(a) => out.push((*a, vec![g[0]; self.value(*a).numel()])),
            Op::Relu(a) => {
                let va = self.value(*a).data();
                out.push((
                    *a,
                    g.iter()
                        .zip(va)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                ));
            }
            Op::Softmax(a) => out.push((*a, softmax_backward(&node.value, g))),
            Op::NearestDown(a, f) => out.push((*a, nearest_downsample_backward(self.value(*a).shape(), *f, g))),
            Op::Conv3d { x, w, b, stride, pad } => {
                let grads = conv::conv3d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    node.value.shape(),
                    *stride,
                    *pad,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(dx) = grads.dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = grads.dw {
                    out.push((*w, dw));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    out.push((b, conv::bias_grad(g, node.value.shape())));
                }
            }
            Op::ConvTranspose3d { x, w, b } => {
                let grads = conv::conv_transpose3d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    node.value.shape(),
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(dx) = grads.dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = grads.dw {
                    out.push((*w, dw));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    out.push((b, conv::bias_grad(g, node.value.shape())));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let grads = norm::batch_norm_backward(
                    self.value(*x).shape(),
                    self.value(*gamma).data(),
                    xhat,
                    inv_std,
                    g,
                    *batch_stats,
                );
                if self.wants(*x) {
                    out.push((*x, grads.dx));
                }
                if self.wants(*gamma) {
                    out.push((*gamma, grads.dgamma));
                }
                if self.wants(*beta) {
                    out.push((*beta, grads.dbeta));
                }
            }
            Op::ScalarFn { x, local_grad } => {
                out.push((*x, local_grad.iter().map(|&l| l * g[0]).collect()));
            }
        }
        out
    }
}

/// Channel softmax outside any tape.
pub fn softmax_channels<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::Shape(format!("softmax_channels needs [N, C, ...], got {shape:?}")));
    }
    let (n, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product();
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        let base = b * c * s;
        for v in 0..s {
            let mut max = T::neg_infinity();
            for ch in 0..c {
                max = max.max(src[base + ch * s + v]);
            }
            let mut total = T::zero();
            for ch in 0..c {
                let e = (src[base + ch * s + v] - max).exp();
                out[base + ch * s + v] = e;
                total += e;
            }
            for ch in 0..c {
                out[base + ch * s + v] = out[base + ch * s + v] / total;
            }
        }
    }
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

fn softmax_backward<T: Real>(y: &Tensor<T>, g: &[T]) -> Vec<T> {
    let shape = y.shape();
    let (n, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product();
    let y = y.data();
    let mut dx = vec![T::zero(); y.len()];
    for b in 0..n {
        let base = b * c * s;
        for v in 0..s {
            let dot: T = (0..c).map(|ch| g[base + ch * s + v] * y[base + ch * s + v]).sum();
            for ch in 0..c {
                let i = base + ch * s + v;
                dx[i] = y[i] * (g[i] - dot);
            }
        }
    }
    dx
}

fn check_5d(shape: &[usize], what: &str) -> Result<[usize; 5]> {
    <[usize; 5]>::try_from(shape).map_err(|_| Error::Shape(format!("{what} needs a 5D tensor, got {shape:?}")))
}

/// Nearest-neighbour downsampling by `factor` (a power of two) keeping the
/// lowest-index voxel of each block.
pub fn nearest_downsample<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, d, h, w] = check_5d(x.shape(), "nearest_downsample")?;
    if !factor.is_power_of_two() {
        return Err(Error::Argument(format!("downsample factor {factor} is not a power of two")));
    }
    if d % factor != 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "spatial dims {:?} not divisible by {factor}",
            [d, h, w]
        )));
    }
    let (od, oh, ow) = (d / factor, h / factor, w / factor);
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * od * oh * ow);
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                let row = base + (z * factor * h + y * factor) * w;
                out.extend((0..ow).map(|xx| src[row + xx * factor]));
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, od, oh, ow], out))
}

fn nearest_downsample_backward<T: Real>(in_shape: &[usize], factor: usize, g: &[T]) -> Vec<T> {
    let (d, h, w) = (in_shape[2], in_shape[3], in_shape[4]);
    let nc = in_shape[0] * in_shape[1];
    let (od, oh, ow) = (d / factor, h / factor, w / factor);
    let mut dx = vec![T::zero(); nc * d * h * w];
    let mut it = g.iter();
    for b in 0..nc {
        let base = b * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                let row = base + (z * factor * h + y * factor) * w;
                for xx in 0..ow {
                    dx[row + xx * factor] = *it.next().expect("gradient length matches output");
                }
            }
        }
    }
    dx
}

/// Label-map counterpart of [`nearest_downsample`] for `[N, D, H, W]` maps.
pub fn nearest_downsample_labels(labels: &[u8], shape: [usize; 4], factor: usize) -> Result<(Vec<u8>, [usize; 4])> {
    let [n, d, h, w] = shape;
    if labels.len() != n * d * h * w {
        return Err(Error::Shape(format!("label map has {} values for shape {shape:?}", labels.len())));
    }
    if !factor.is_power_of_two() || d % factor != 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!("label shape {shape:?} not divisible by {factor}")));
    }
    let (od, oh, ow) = (d / factor, h / factor, w / factor);
    let mut out = Vec::with_capacity(n * od * oh * ow);
    for b in 0..n {
        let base = b * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                let row = base + (z * factor * h + y * factor) * w;
                out.extend((0..ow).map(|xx| labels[row + xx * factor]));
            }
        }
    }
    Ok((out, [n, od, oh, ow]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_half_square_is_identity() {
        let vals = vec![1.5, -2.0, 0.25, 4.0];
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], vals.clone()), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        tape.backward(half).unwrap();
        assert_eq!(tape.grad(x).unwrap(), vals.as_slice());
    }

    #[test]
    fn backward_twice_is_error_until_reset() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], vec![1.0, 2.0]), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::State(_))));
        tape.reset_grads();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], vec![1.0, 2.0]), true);
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::Argument(_))));
    }

    #[test]
    fn add_zero_and_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], vec![1.0, 2.0, 3.0]), false);
        let z = tape.leaf(Tensor::zeros(vec![3]), false);
        let y = tape.add(x, z).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);
        let bad = tape.leaf(Tensor::zeros(vec![4]), false);
        assert!(matches!(tape.add(x, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = t(&[1, 3, 2, 1, 1], vec![0.7; 6]);
        let y = softmax_channels(&x).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_downsample_keeps_even_indices() {
        // 8^3 ramp: value = linear index
        let x = t(&[1, 1, 8, 8, 8], (0..512).map(|v| v as f64).collect());
        let y = nearest_downsample(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4, 4]);
        let mut expected = Vec::new();
        for z in (0..8).step_by(2) {
            for yy in (0..8).step_by(2) {
                for xx in (0..8).step_by(2) {
                    expected.push((xx + 8 * (yy + 8 * z)) as f64);
                }
            }
        }
        assert_eq!(y.data(), expected.as_slice());
        assert!(nearest_downsample(&x, 3).is_err());
    }

    #[test]
    fn leaves_without_grad_are_skipped() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], vec![1.0, 2.0]), true);
        let c = tape.constant(t(&[2], vec![3.0, 4.0]));
        let p = tape.mul(x, c).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }
}
