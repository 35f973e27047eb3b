//! 3D convolution kernels via column matrices and gemm.
//!
//! Work is split into fixed-size chunks of output (or input) voxels. Chunk
//! boundaries do not depend on the thread count and partial sums are
//! reduced in chunk order, so results are identical with any pool size.

use rayon::prelude::*;

use super::linalg::gemm;
use super::{check_5d, Real, Tensor};
use crate::error::{Error, Result};

const CHUNK: usize = 2048;

pub(super) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
}

struct Geometry {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    input: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn in_voxels(&self) -> usize {
        self.input.iter().product()
    }
    fn out_voxels(&self) -> usize {
        self.output.iter().product()
    }
    fn taps(&self) -> usize {
        self.k * self.k * self.k
    }
}

fn conv_geometry(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<(usize, Geometry)> {
    let [n, cin, d, h, wd] = check_5d(x, "conv3d input")?;
    let [cout, wcin, k, k1, k2] = check_5d(w, "conv3d weight")?;
    if wcin != cin {
        return Err(Error::Shape(format!("conv3d: input has {cin} channels, weight expects {wcin}")));
    }
    if k != k1 || k != k2 || k == 0 {
        return Err(Error::Shape(format!("conv3d: kernel must be cubic, got {:?}", &w[2..])));
    }
    if stride == 0 {
        return Err(Error::Argument("conv3d: stride must be positive".into()));
    }
    let mut output = [0; 3];
    for (a, s) in [d, h, wd].into_iter().enumerate() {
        if s + 2 * pad < k {
            return Err(Error::Shape(format!("conv3d: spatial size {s} too small for kernel {k}")));
        }
        output[a] = (s + 2 * pad - k) / stride + 1;
    }
    Ok((
        n,
        Geometry {
            cin,
            cout,
            k,
            stride,
            pad,
            input: [d, h, wd],
            output,
        },
    ))
}

/// Splits flat voxel range `p0..p0 + len` of a `[_, rows, cols]` grid into
/// row segments `(z, y, x0, x1, offset)`.
fn row_segments(p0: usize, len: usize, rows: usize, cols: usize) -> Vec<(usize, usize, usize, usize, usize)> {
    let mut segs = Vec::new();
    let mut p = p0;
    while p < p0 + len {
        let x0 = p % cols;
        let x1 = cols.min(x0 + (p0 + len - p));
        let y = (p / cols) % rows;
        let z = p / (cols * rows);
        segs.push((z, y, x0, x1, p - p0));
        p += x1 - x0;
    }
    segs
}

/// Output positions `o` in `0..n` whose input `o * stride - pad + tap` lies in `0..size`.
fn valid_outputs(size: usize, n: usize, stride: usize, pad: usize, tap: usize) -> (usize, usize) {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = n.min((size + pad - tap).div_ceil(stride));
    (lo, hi.max(lo))
}

/// Column matrix `[cin * k^3, len]` for output voxels `p0..p0 + len`.
fn im2col<T: Real>(x: &[T], g: &Geometry, p0: usize, len: usize, col: &mut [T]) {
    let [d, h, w] = g.input;
    let [_, oh, ow] = g.output;
    let (k, s, pad) = (g.k, g.stride, g.pad);
    let plane = h * w;
    let segs = row_segments(p0, len, oh, ow);
    for ci in 0..g.cin {
        let xc = &x[ci * d * plane..(ci + 1) * d * plane];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + kz) * k + ky) * k + kx;
                    let dst = &mut col[row * len..(row + 1) * len];
                    let (vx0, vx1) = valid_outputs(w, ow, s, pad, kx);
                    for &(oz, oy, x0, x1, off) in &segs {
                        let out = &mut dst[off..off + (x1 - x0)];
                        let iz = (oz * s + kz) as isize - pad as isize;
                        let iy = (oy * s + ky) as isize - pad as isize;
                        let (a, b) = (x0.max(vx0), x1.min(vx1));
                        if iz < 0 || iy < 0 || iz as usize >= d || iy as usize >= h || a >= b {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &xc[iz as usize * plane + iy as usize * w..][..w];
                        out[..a - x0].fill(T::zero());
                        out[b - x0..].fill(T::zero());
                        let ix0 = a * s + kx - pad;
                        if s == 1 {
                            out[a - x0..b - x0].copy_from_slice(&src[ix0..ix0 + (b - a)]);
                        } else {
                            for (j, o) in out[a - x0..b - x0].iter_mut().enumerate() {
                                *o = src[ix0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed column matrix `[cout * k^3, len]` for input voxels
/// `q0..q0 + len`: entry `(co, tap), q` is the output gradient that tap
/// `tap` of output channel `co` sends back to input voxel `q`.
fn grad_col<T: Real>(dy: &[T], g: &Geometry, q0: usize, len: usize, col: &mut [T]) {
    let [_, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let (k, s, pad) = (g.k, g.stride, g.pad);
    let segs = row_segments(q0, len, h, w);
    let out_len = od * oh * ow;
    // output index along one axis fed by input c through tap t
    let source = |c: usize, t: usize, n: usize| -> Option<usize> {
        let v = (c + pad).checked_sub(t)?;
        (v % s == 0 && v / s < n).then_some(v / s)
    };
    for co in 0..g.cout {
        let dyc = &dy[co * out_len..(co + 1) * out_len];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((co * k + kz) * k + ky) * k + kx;
                    let dst = &mut col[row * len..(row + 1) * len];
                    for &(iz, iy, x0, x1, off) in &segs {
                        let out = &mut dst[off..off + (x1 - x0)];
                        let (Some(nz), Some(ny)) = (source(iz, kz, od), source(iy, ky, oh)) else {
                            out.fill(T::zero());
                            continue;
                        };
                        let src = &dyc[(nz * oh + ny) * ow..][..ow];
                        if s == 1 {
                            // nx = ix + pad - kx must lie in 0..ow
                            let a = x0.max(kx.saturating_sub(pad)).min(x1);
                            let b = x1.min((ow + kx).saturating_sub(pad)).max(a);
                            out[..a - x0].fill(T::zero());
                            out[b - x0..].fill(T::zero());
                            if b > a {
                                let n0 = a + pad - kx;
                                out[a - x0..b - x0].copy_from_slice(&src[n0..n0 + (b - a)]);
                            }
                        } else {
                            for (j, o) in out.iter_mut().enumerate() {
                                *o = source(x0 + j, kx, ow).map_or(T::zero(), |nx| src[nx]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn chunks(n: usize, voxels: usize) -> Vec<(usize, usize, usize)> {
    (0..n)
        .flat_map(|b| {
            (0..voxels)
                .step_by(CHUNK)
                .map(move |p0| (b, p0, CHUNK.min(voxels - p0)))
        })
        .collect()
}

pub(super) fn conv3d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, g) = conv_geometry(x.shape(), w.shape(), stride, pad)?;
    if let Some(b) = b {
        if b.numel() != g.cout {
            return Err(Error::Shape(format!("conv3d: bias has {} values for {} channels", b.numel(), g.cout)));
        }
    }
    let kk = g.cin * g.taps();
    let (in_len, out_len) = (g.cin * g.in_voxels(), g.out_voxels());
    let tasks = chunks(n, out_len);
    let parts: Vec<Vec<T>> = tasks
        .par_iter()
        .map(|&(bi, p0, len)| {
            let mut col = vec![T::zero(); kk * len];
            im2col(&x.data()[bi * in_len..(bi + 1) * in_len], &g, p0, len, &mut col);
            let mut y = vec![T::zero(); g.cout * len];
            gemm(g.cout, kk, len, w.data(), false, &col, false, T::zero(), &mut y);
            y
        })
        .collect();
    let mut out = vec![T::zero(); n * g.cout * out_len];
    for (&(bi, p0, len), part) in tasks.iter().zip(&parts) {
        for co in 0..g.cout {
            let bias = b.map(|b| b.data()[co]).unwrap_or_else(T::zero);
            let dst = &mut out[(bi * g.cout + co) * out_len + p0..][..len];
            for (d, &s) in dst.iter_mut().zip(&part[co * len..(co + 1) * len]) {
                *d = s + bias;
            }
        }
    }
    let [od, oh, ow] = g.output;
    Ok(Tensor::from_parts(vec![n, g.cout, od, oh, ow], out))
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv3d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    out_shape: &[usize],
    stride: usize,
    pad: usize,
    want_dx: bool,
    want_dw: bool,
) -> ConvGrads<T> {
    let (n, g) = conv_geometry(x.shape(), w.shape(), stride, pad).expect("validated in forward");
    debug_assert_eq!(out_shape[1], g.cout);
    let kk = g.cin * g.taps();
    let (in_vox, out_vox) = (g.in_voxels(), g.out_voxels());
    let in_len = g.cin * in_vox;
    let out_len = g.cout * out_vox;

    let dw = want_dw.then(|| {
        let tasks = chunks(n, out_vox);
        let partials: Vec<Vec<T>> = tasks
            .par_iter()
            .map(|&(bi, p0, len)| {
                let mut col = vec![T::zero(); kk * len];
                im2col(&x.data()[bi * in_len..(bi + 1) * in_len], &g, p0, len, &mut col);
                let mut dyc = vec![T::zero(); g.cout * len];
                for co in 0..g.cout {
                    dyc[co * len..(co + 1) * len]
                        .copy_from_slice(&dy[bi * out_len + co * out_vox + p0..][..len]);
                }
                let mut part = vec![T::zero(); g.cout * kk];
                gemm(g.cout, len, kk, &dyc, false, &col, true, T::zero(), &mut part);
                part
            })
            .collect();
        let mut total = vec![T::zero(); g.cout * kk];
        for part in partials {
            total.iter_mut().zip(part).for_each(|(t, p)| *t += p);
        }
        total
    });

    let dx = want_dx.then(|| {
        // weight regrouped as [cin, cout * taps]
        let taps = g.taps();
        let mut wp = vec![T::zero(); g.cin * g.cout * taps];
        for co in 0..g.cout {
            for ci in 0..g.cin {
                let src = &w.data()[(co * g.cin + ci) * taps..][..taps];
                wp[(ci * g.cout + co) * taps..][..taps].copy_from_slice(src);
            }
        }
        let ck = g.cout * taps;
        let tasks = chunks(n, in_vox);
        let parts: Vec<Vec<T>> = tasks
            .par_iter()
            .map(|&(bi, q0, len)| {
                let mut col = vec![T::zero(); ck * len];
                grad_col(&dy[bi * out_len..(bi + 1) * out_len], &g, q0, len, &mut col);
                let mut part = vec![T::zero(); g.cin * len];
                gemm(g.cin, ck, len, &wp, false, &col, false, T::zero(), &mut part);
                part
            })
            .collect();
        let mut dx = vec![T::zero(); n * in_len];
        for (&(bi, q0, len), part) in tasks.iter().zip(&parts) {
            for ci in 0..g.cin {
                dx[bi * in_len + ci * in_vox + q0..][..len].copy_from_slice(&part[ci * len..(ci + 1) * len]);
            }
        }
        dx
    });

    ConvGrads { dx, dw }
}

pub(super) fn bias_grad<T: Real>(dy: &[T], out_shape: &[usize]) -> Vec<T> {
    let (n, c) = (out_shape[0], out_shape[1]);
    let s: usize = out_shape[2..].iter().product();
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            *acc += dy[(b * c + ch) * s..][..s].iter().copied().sum::<T>();
        }
    }
    db
}

fn convt_dims(x: &[usize], w: &[usize]) -> Result<([usize; 5], usize)> {
    let [n, cin, d, h, wd] = check_5d(x, "conv_transpose3d input")?;
    let [wcin, cout, k0, k1, k2] = check_5d(w, "conv_transpose3d weight")?;
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv_transpose3d: input has {cin} channels, weight expects {wcin}"
        )));
    }
    if [k0, k1, k2] != [2, 2, 2] {
        return Err(Error::Shape(format!("conv_transpose3d: kernel must be 2x2x2, got {:?}", &w[2..])));
    }
    Ok(([n, cin, d, h, wd], cout))
}

pub(super) fn conv_transpose3d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let ([n, cin, d, h, wd], cout) = convt_dims(x.shape(), w.shape())?;
    if let Some(b) = b {
        if b.numel() != cout {
            return Err(Error::Shape(format!(
                "conv_transpose3d: bias has {} values for {cout} channels",
                b.numel()
            )));
        }
    }
    let p = d * h * wd;
    let rows = cout * 8;
    let (oh, ow) = (2 * h, 2 * wd);
    let out_vox = 8 * p;
    let mut out = vec![T::zero(); n * cout * out_vox];
    let mut ycols = vec![T::zero(); rows * p];
    for bi in 0..n {
        let xn = &x.data()[bi * cin * p..(bi + 1) * cin * p];
        gemm(rows, cin, p, w.data(), true, xn, false, T::zero(), &mut ycols);
        for co in 0..cout {
            let bias = b.map(|b| b.data()[co]).unwrap_or_else(T::zero);
            let dst = &mut out[(bi * cout + co) * out_vox..][..out_vox];
            for tap in 0..8 {
                let (a, bb, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let src = &ycols[(co * 8 + tap) * p..][..p];
                for (q, &v) in src.iter().enumerate() {
                    let ix = q % wd;
                    let iy = (q / wd) % h;
                    let iz = q / (wd * h);
                    dst[((2 * iz + a) * oh + 2 * iy + bb) * ow + 2 * ix + c] = v + bias;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, cout, 2 * d, oh, ow], out))
}

pub(super) fn conv_transpose3d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    _out_shape: &[usize],
    want_dx: bool,
    want_dw: bool,
) -> ConvGrads<T> {
    let ([n, cin, d, h, wd], cout) = convt_dims(x.shape(), w.shape()).expect("validated in forward");
    let p = d * h * wd;
    let rows = cout * 8;
    let (oh, ow) = (2 * h, 2 * wd);
    let out_vox = 8 * p;
    let mut dx = want_dx.then(|| vec![T::zero(); n * cin * p]);
    let mut dw = want_dw.then(|| vec![T::zero(); cin * rows]);
    let mut dcols = vec![T::zero(); rows * p];
    for bi in 0..n {
        for co in 0..cout {
            let src = &dy[(bi * cout + co) * out_vox..][..out_vox];
            for tap in 0..8 {
                let (a, bb, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let dst = &mut dcols[(co * 8 + tap) * p..][..p];
                for (q, slot) in dst.iter_mut().enumerate() {
                    let ix = q % wd;
                    let iy = (q / wd) % h;
                    let iz = q / (wd * h);
                    *slot = src[((2 * iz + a) * oh + 2 * iy + bb) * ow + 2 * ix + c];
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            gemm(cin, rows, p, w.data(), false, &dcols, false, T::zero(), &mut dx[bi * cin * p..][..cin * p]);
        }
        if let Some(dw) = dw.as_mut() {
            let xn = &x.data()[bi * cin * p..(bi + 1) * cin * p];
            gemm(cin, p, rows, xn, false, &dcols, true, T::one(), dw);
        }
    }
    ConvGrads { dx, dw }
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;

    fn tensor(shape: &[usize], f: impl Fn(usize) -> f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(f).collect()).unwrap()
    }

    /// Direct six-loop cross-correlation.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
        let [n, cin, d, h, wd] = <[usize; 5]>::try_from(x.shape()).unwrap();
        let [cout, _, k, _, _] = <[usize; 5]>::try_from(w.shape()).unwrap();
        let o = |s: usize| (s + 2 * pad - k) / stride + 1;
        let (od, oh, ow) = (o(d), o(h), o(wd));
        let mut out = Vec::new();
        for b in 0..n {
            for co in 0..cout {
                for z in 0..od {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = 0.0;
                            for ci in 0..cin {
                                for kz in 0..k {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let iz = (z * stride + kz) as isize - pad as isize;
                                            let iy = (y * stride + ky) as isize - pad as isize;
                                            let ix = (xx * stride + kx) as isize - pad as isize;
                                            if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                                continue;
                                            }
                                            let xi = (((b * cin + ci) * d + iz as usize) * h + iy as usize) * wd + ix as usize;
                                            let wi = (((co * cin + ci) * k + kz) * k + ky) * k + kx;
                                            acc += x.data()[xi] * w.data()[wi];
                                        }
                                    }
                                }
                            }
                            out.push(acc);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        for (stride, k) in [(1, 3), (2, 3), (1, 1)] {
            let pad = k / 2;
            let x = tensor(&[2, 3, 5, 6, 7], |i| ((i * 7919) % 23) as f64 / 11.0 - 1.0);
            let w = tensor(&[4, 3, k, k, k], |i| ((i * 104729) % 17) as f64 / 8.0 - 1.0);
            let y = conv3d_forward(&x, &w, None, stride, pad).unwrap();
            let want = naive_conv(&x, &w, stride, pad);
            assert_eq!(y.numel(), want.len());
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "stride {stride} k {k}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint_across_chunks() {
        // sizes chosen so voxel chunks split rows mid-way
        for (stride, k, pad, dims) in [(1, 3, 1, [13, 14, 15]), (2, 3, 1, [13, 14, 15]), (1, 1, 0, [11, 17, 12]), (2, 3, 0, [7, 9, 11])] {
            let [d, h, wd] = dims;
            let x = tensor(&[2, 2, d, h, wd], |i| ((i * 7919) % 23) as f64 / 11.0 - 1.0);
            let w = tensor(&[3, 2, k, k, k], |i| ((i * 104729) % 17) as f64 / 8.0 - 1.0);
            let y = conv3d_forward(&x, &w, None, stride, pad).unwrap();
            let dy: Vec<f64> = (0..y.numel()).map(|i| ((i * 37) % 19) as f64 / 9.0 - 1.0).collect();
            let g = conv3d_backward(&x, &w, &dy, y.shape(), stride, pad, true, true);
            let lhs: f64 = y.data().iter().zip(&dy).map(|(a, b)| a * b).sum();
            let via_dx: f64 = x.data().iter().zip(g.dx.as_ref().unwrap()).map(|(a, b)| a * b).sum();
            let via_dw: f64 = w.data().iter().zip(g.dw.as_ref().unwrap()).map(|(a, b)| a * b).sum();
            assert!((lhs - via_dx).abs() < 1e-8 * lhs.abs().max(1.0), "dx stride {stride} k {k}");
            assert!((lhs - via_dw).abs() < 1e-8 * lhs.abs().max(1.0), "dw stride {stride} k {k}");
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = tensor(&[1, 2, 3, 3, 3], |i| i as f64);
        let mut w = Tensor::zeros(vec![2, 2, 1, 1, 1]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let b = Tensor::zeros(vec![2]);
        let y = conv3d_forward(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::full(vec![1, 1, 5, 5, 5], 2.0);
        let w = Tensor::full(vec![1, 1, 3, 3, 3], 1.0);
        let y = conv3d_forward(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5, 5]);
        for z in 1..4 {
            for yy in 1..4 {
                for xx in 1..4 {
                    assert_eq!(y.data()[(z * 5 + yy) * 5 + xx], 54.0);
                }
            }
        }
        assert_eq!(y.data()[0], 16.0);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 4, 4, 4]);
        let w = Tensor::<f64>::zeros(vec![3, 5, 3, 3, 3]);
        assert!(matches!(conv3d_forward(&x, &w, None, 1, 1), Err(Error::Shape(_))));
        let wt = Tensor::<f64>::zeros(vec![3, 2, 2, 2, 2]);
        assert!(matches!(conv_transpose3d_forward(&x, &wt, None), Err(Error::Shape(_))));
    }

    #[test]
    fn transposed_ones_kernel_spreads_voxel() {
        let x = Tensor::full(vec![1, 1, 1, 1, 1], 3.5);
        let w = Tensor::full(vec![1, 1, 2, 2, 2], 1.0);
        let y = conv_transpose3d_forward(&x, &w, None).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn transposed_output_shape() {
        let x = Tensor::<f32>::zeros(vec![1, 32, 4, 4, 4]);
        let w = Tensor::<f32>::zeros(vec![32, 16, 2, 2, 2]);
        let y = conv_transpose3d_forward(&x, &w, None).unwrap();
        assert_eq!(y.shape(), &[1, 16, 8, 8, 8]);
    }

    #[test]
    fn transposed_is_adjoint_of_strided_conv() {
        // <conv(x), y> == <x, convT(y)> for stride 2, kernel 2, no padding
        let x = tensor(&[1, 3, 4, 6, 2], |i| ((i * 31) % 13) as f64 - 6.0);
        let y = tensor(&[1, 2, 2, 3, 1], |i| ((i * 17) % 7) as f64 - 3.0);
        let w = tensor(&[2, 3, 2, 2, 2], |i| ((i * 11) % 5) as f64 - 2.0);
        let cx = conv3d_forward(&x, &w, None, 2, 0).unwrap();
        // conv weight [cout=2, cin=3] is the transposed-conv weight [cin'=2, cout'=3]
        let ty = conv_transpose3d_forward(&y, &w, None).unwrap();
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn stride_two_then_transpose_restores_shape() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 2, 8, 6, 4]), false);
        let w = tape.leaf(Tensor::zeros(vec![4, 2, 3, 3, 3]), false);
        let wt = tape.leaf(Tensor::zeros(vec![4, 2, 2, 2, 2]), false);
        let down = tape.conv3d(x, w, None, 2, 1).unwrap();
        assert_eq!(tape.shape(down), &[1, 4, 4, 3, 2]);
        let up = tape.conv_transpose3d(down, wt, None).unwrap();
        assert_eq!(tape.shape(up), tape.shape(x));
    }
}
