//! Fold splitting, foreground-biased patch sampling and augmentation.
//!
//! Patch tensors use the network layout `[1, 2, D, H, W]` with `D` along
//! world z and `W` along world x; patch sizes are given in the same order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::jsonfile;
use crate::loss::LabelTensor;
use crate::preprocess::{logistic, logit, PreprocessedCase};

/// Deals shuffled ids round-robin into `k` folds.
pub fn split_folds(case_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k == 0 || k > case_ids.len() {
        return Err(Error::Argument(format!(
            "cannot split {} cases into {k} folds",
            case_ids.len()
        )));
    }
    let mut ids = case_ids.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

/// Case id → fold index, as stored in `folds.json`.
pub fn fold_map(folds: &[Vec<String>]) -> BTreeMap<String, usize> {
    folds
        .iter()
        .enumerate()
        .flat_map(|(f, ids)| ids.iter().map(move |id| (id.clone(), f)))
        .collect()
}

pub fn write_folds(path: &Path, folds: &[Vec<String>]) -> Result<()> {
    jsonfile::write(path, &fold_map(folds))
}

pub fn read_folds(path: &Path) -> Result<Vec<Vec<String>>> {
    let map: BTreeMap<String, usize> = jsonfile::read(path)?;
    let k = map.values().max().map_or(0, |m| m + 1);
    let mut folds = vec![Vec::new(); k];
    for (id, f) in map {
        folds[f].push(id);
    }
    Ok(folds)
}

/// A preprocessed case held in memory in network form.
#[derive(Debug, Clone)]
pub struct CaseRecord {
    pub id: String,
    /// `[D, H, W]`.
    pub dims: [usize; 3],
    /// Normalized `[1, 2, D, H, W]` input.
    pub input: Tensor<f32>,
    pub labels: Vec<u8>,
    /// Linear indices of class-1 and class-2 voxels.
    pub foreground: [Vec<u32>; 2],
    /// Normalized values of the crop fill constants, per channel.
    pub pad: [f32; 2],
}

impl CaseRecord {
    pub fn from_case(case: &PreprocessedCase) -> Result<Self> {
        let label = case.label.as_ref().ok_or_else(|| Error::Case {
            case: case.id().to_string(),
            reason: "no label volume".into(),
        })?;
        let input = case.network_input()?;
        let [nx, ny, nz] = case.ct.size();
        let mut foreground = [Vec::new(), Vec::new()];
        for (i, &l) in label.data().iter().enumerate() {
            if l > 0 {
                foreground[l as usize - 1].push(i as u32);
            }
        }
        let pad = case.sidecar.pad_values();
        Ok(Self {
            id: case.id().to_string(),
            dims: [nz, ny, nx],
            input,
            labels: label.data().to_vec(),
            foreground,
            pad,
        })
    }

    pub fn has_class(&self, class: u8) -> bool {
        class == 0 || !self.foreground[class as usize - 1].is_empty()
    }

    pub fn target(&self) -> LabelTensor {
        let [d, h, w] = self.dims;
        LabelTensor {
            shape: [1, d, h, w],
            data: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// `[D, H, W]`.
    pub patch_size: [usize; 3],
    /// Draw probabilities of (tumor, node, background).
    pub class_probs: [f64; 3],
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.class_probs.iter().sum();
        if self.class_probs.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "class probabilities must be nonnegative and sum to 1, got {:?}",
                self.class_probs
            )));
        }
        if self.patch_size.contains(&0) {
            return Err(Error::Config("patch size must be positive".into()));
        }
        Ok(())
    }
}

/// Draws the class a patch is centred on. Classes absent from the case are
/// dropped and the remaining probabilities renormalized.
pub fn draw_class(case: &CaseRecord, probs: &[f64; 3], rng: &mut impl Rng) -> u8 {
    // probs are ordered (1, 2, 0)
    let classes = [1u8, 2, 0];
    let weights: Vec<f64> = classes
        .iter()
        .zip(probs)
        .map(|(&c, &p)| if case.has_class(c) { p } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut u = rng.random_range(0.0..total);
    for (c, w) in classes.iter().zip(&weights) {
        if u < *w {
            return *c;
        }
        u -= w;
    }
    *classes.iter().zip(&weights).rev().find(|(_, w)| **w > 0.0).expect("positive total").0
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub input: Tensor<f32>,
    pub target: LabelTensor,
    pub class: u8,
    /// Centre voxel `[d, h, w]` in case coordinates.
    pub center: [usize; 3],
}

/// Extracts a `size` box whose voxel `size / 2` is `center`; the part outside
/// the case takes the pad values.
pub fn extract_patch(case: &CaseRecord, center: [usize; 3], size: [usize; 3]) -> (Tensor<f32>, LabelTensor) {
    let [d, h, w] = case.dims;
    let s = d * h * w;
    let [pd, ph, pw] = size;
    let n = pd * ph * pw;
    let start: [i64; 3] = std::array::from_fn(|a| center[a] as i64 - (size[a] / 2) as i64);
    let mut input = vec![0f32; 2 * n];
    let mut target = vec![0u8; n];
    input[..n].fill(case.pad[0]);
    input[n..].fill(case.pad[1]);
    let src = case.input.data();
    for z in 0..pd {
        let sz = start[0] + z as i64;
        if sz < 0 || sz >= d as i64 {
            continue;
        }
        for y in 0..ph {
            let sy = start[1] + y as i64;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            let x0 = (-start[2]).max(0) as usize;
            let x1 = ((w as i64 - start[2]).min(pw as i64)).max(0) as usize;
            if x0 >= x1 {
                continue;
            }
            let src_row = (sz as usize * h + sy as usize) * w;
            let dst_row = (z * ph + y) * pw;
            let sx0 = (start[2] + x0 as i64) as usize;
            let len = x1 - x0;
            for c in 0..2 {
                input[c * n + dst_row + x0..c * n + dst_row + x1]
                    .copy_from_slice(&src[c * s + src_row + sx0..c * s + src_row + sx0 + len]);
            }
            target[dst_row + x0..dst_row + x1].copy_from_slice(&case.labels[src_row + sx0..src_row + sx0 + len]);
        }
    }
    (
        Tensor::new(vec![1, 2, pd, ph, pw], input).expect("sizes match"),
        LabelTensor {
            shape: [1, pd, ph, pw],
            data: target,
        },
    )
}

pub fn sample_patch(case: &CaseRecord, cfg: &SamplerConfig, rng: &mut impl Rng) -> Patch {
    let class = draw_class(case, &cfg.class_probs, rng);
    let [d, h, w] = case.dims;
    let idx = if class == 0 {
        rng.random_range(0..d * h * w)
    } else {
        let list = &case.foreground[class as usize - 1];
        list[rng.random_range(0..list.len())] as usize
    };
    let center = [idx / (h * w), (idx / w) % h, idx % w];
    let (input, target) = extract_patch(case, center, cfg.patch_size);
    Patch {
        input,
        target,
        class,
        center,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub affine_prob: f64,
    pub rotation_deg: f64,
    pub scale_range: f64,
    pub intensity_scale_prob: f64,
    pub intensity_scale: f64,
    pub intensity_shift_prob: f64,
    /// Fraction of the CT window.
    pub intensity_shift: f64,
    pub noise_prob: f64,
    pub noise_std: f64,
    pub blur_prob: f64,
    /// Maximum blur sigma in voxels.
    pub blur_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            affine_prob: 0.2,
            rotation_deg: 15.0,
            scale_range: 0.1,
            intensity_scale_prob: 0.2,
            intensity_scale: 0.1,
            intensity_shift_prob: 0.2,
            intensity_shift: 0.1,
            noise_prob: 0.2,
            noise_std: 0.05,
            blur_prob: 0.2,
            blur_sigma: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            flip_prob: 0.0,
            affine_prob: 0.0,
            intensity_scale_prob: 0.0,
            intensity_shift_prob: 0.0,
            noise_prob: 0.0,
            blur_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.flip_prob,
            self.affine_prob,
            self.intensity_scale_prob,
            self.intensity_shift_prob,
            self.noise_prob,
            self.blur_prob,
        ];
        let ranges = [
            self.rotation_deg,
            self.scale_range,
            self.intensity_scale,
            self.intensity_shift,
            self.noise_std,
            self.blur_sigma,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || ranges.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config(format!("invalid augmentation config {self:?}")));
        }
        if self.scale_range >= 1.0 {
            return Err(Error::Config("scale_range must be below 1".into()));
        }
        Ok(())
    }
}

/// Reverses `data` (laid out `[channels, D, H, W]`) along spatial axis `axis`
/// (0 = D, 1 = H, 2 = W).
pub fn flip_axis<T: Copy>(data: &mut [T], dims: [usize; 3], axis: usize) {
    let [d, h, w] = dims;
    let s = d * h * w;
    let stride = [h * w, w, 1][axis];
    let len = dims[axis];
    for base in (0..data.len()).step_by(s) {
        for idx in 0..s {
            let pos = (idx / stride) % len;
            if pos < len / 2 {
                let other = idx + (len - 1 - 2 * pos) * stride;
                data.swap(base + idx, base + other);
            }
        }
    }
}

fn rotation(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (sa, ca) = angles[0].sin_cos();
    let (sb, cb) = angles[1].sin_cos();
    let (sc, cc) = angles[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rz = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
    let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
        std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
    };
    mul(rz, mul(ry, rx))
}

/// Rotation about the patch centre plus isotropic scaling. Images are
/// interpolated trilinearly and labels by nearest neighbour; voxels mapped
/// from outside the patch take 0.5 (images) and 0 (labels).
pub fn affine_transform(
    input: &[f32],
    labels: &[u8],
    dims: [usize; 3],
    angles: [f64; 3],
    scale: f64,
) -> (Vec<f32>, Vec<u8>) {
    let [d, h, w] = dims;
    let s = d * h * w;
    let r = rotation(angles);
    let c = dims.map(|n| (n as f64 - 1.0) / 2.0);
    let channels = input.len() / s;
    let mut out = vec![0.5f32; input.len()];
    let mut out_l = vec![0u8; s];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let o = [z as f64 - c[0], y as f64 - c[1], x as f64 - c[2]];
                // inverse map: R^T o / scale
                let p: [f64; 3] = std::array::from_fn(|i| (0..3).map(|k| r[k][i] * o[k]).sum::<f64>() / scale + c[i]);
                let dst = (z * h + y) * w + x;
                let near = p.map(|v| v.round());
                if (0..3).all(|a| near[a] >= 0.0 && near[a] < dims[a] as f64) {
                    let [nz, ny, nx] = near.map(|v| v as usize);
                    out_l[dst] = labels[(nz * h + ny) * w + nx];
                }
                if (0..3).any(|a| p[a] < -0.5 || p[a] > dims[a] as f64 - 0.5) {
                    continue;
                }
                let q = std::array::from_fn::<_, 3, _>(|a| p[a].clamp(0.0, (dims[a] - 1) as f64));
                let lo = q.map(|v| v.floor() as usize);
                let hi: [usize; 3] = std::array::from_fn(|a| (lo[a] + 1).min(dims[a] - 1));
                let f: [f64; 3] = std::array::from_fn(|a| q[a] - lo[a] as f64);
                for ch in 0..channels {
                    let at = |zz: usize, yy: usize, xx: usize| input[ch * s + (zz * h + yy) * w + xx] as f64;
                    let mut v = 0.0;
                    for (dz, wz) in [(lo[0], 1.0 - f[0]), (hi[0], f[0])] {
                        for (dy, wy) in [(lo[1], 1.0 - f[1]), (hi[1], f[1])] {
                            for (dx, wx) in [(lo[2], 1.0 - f[2]), (hi[2], f[2])] {
                                v += wz * wy * wx * at(dz, dy, dx);
                            }
                        }
                    }
                    out[ch * s + dst] = v as f32;
                }
            }
        }
    }
    (out, out_l)
}

fn gaussian_blur(data: &mut [f64], dims: [usize; 3], sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / total).collect();
    let [_, h, w] = dims;
    for axis in 0..3 {
        let stride = [h * w, w, 1][axis];
        let len = dims[axis] as i64;
        let src = data.to_vec();
        for (idx, out) in data.iter_mut().enumerate() {
            let pos = ((idx / stride) % dims[axis]) as i64;
            let base = idx as i64 - pos * stride as i64;
            *out = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| {
                    let q = (pos + t as i64 - radius).clamp(0, len - 1);
                    k * src[(base + q * stride as i64) as usize]
                })
                .sum();
        }
    }
}

/// Applies flips, then the affine transform, then CT-only intensity changes.
/// CT changes act on the logit of the normalized value and are squashed
/// back with the logistic, so the channel stays in (0, 1).
pub fn augment(patch: &mut Patch, cfg: &AugmentConfig, ct_logit_span: f64, rng: &mut impl Rng) {
    let [_, _, d, h, w] = <[usize; 5]>::try_from(patch.input.shape()).expect("5D patch");
    let dims = [d, h, w];
    for axis in 0..3 {
        if rng.random_bool(cfg.flip_prob) {
            flip_axis(patch.input.data_mut(), dims, axis);
            flip_axis(&mut patch.target.data, dims, axis);
        }
    }
    if rng.random_bool(cfg.affine_prob) {
        let max = cfg.rotation_deg * PI / 180.0;
        let angles = std::array::from_fn(|_| if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 });
        let scale = 1.0
            + if cfg.scale_range > 0.0 {
                rng.random_range(-cfg.scale_range..=cfg.scale_range)
            } else {
                0.0
            };
        let (img, lab) = affine_transform(patch.input.data(), &patch.target.data, dims, angles, scale);
        patch.input.data_mut().copy_from_slice(&img);
        patch.target.data = lab;
    }

    let do_scale = rng.random_bool(cfg.intensity_scale_prob);
    let do_shift = rng.random_bool(cfg.intensity_shift_prob);
    let do_noise = rng.random_bool(cfg.noise_prob);
    let do_blur = rng.random_bool(cfg.blur_prob);
    if !(do_scale || do_shift || do_noise || do_blur) {
        return;
    }
    let s = d * h * w;
    let eps = 1e-6;
    let mut u: Vec<f64> = patch.input.data()[..s]
        .iter()
        .map(|&x| logit((x as f64).clamp(eps, 1.0 - eps)))
        .collect();
    let draw = |rng: &mut dyn rand::RngCore, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    if do_scale {
        let f = 1.0 + draw(rng, cfg.intensity_scale);
        u.iter_mut().for_each(|v| *v *= f);
    }
    if do_shift {
        // the CT window spans 2 * span in logit units
        let delta = draw(rng, cfg.intensity_shift) * 2.0 * ct_logit_span;
        u.iter_mut().for_each(|v| *v += delta);
    }
    if do_noise && cfg.noise_std > 0.0 {
        // logistic slope at the window centre is 1/4
        let sigma = rng.random_range(0.0..=cfg.noise_std) * 4.0;
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("positive sigma");
            u.iter_mut().for_each(|v| *v += n.sample(rng));
        }
    }
    if do_blur && cfg.blur_sigma > 0.0 {
        let sigma = rng.random_range(0.0..=cfg.blur_sigma);
        if sigma > 1e-3 {
            gaussian_blur(&mut u, dims, sigma);
        }
    }
    for (x, v) in patch.input.data_mut()[..s].iter_mut().zip(&u) {
        *x = logistic(*v) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i:04}")).collect()
    }

    #[test]
    fn fold_sizes_for_524() {
        let folds = split_folds(&ids(524), 5, 7).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![104, 105, 105, 105, 105]);
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let folds = split_folds(&ids(6), 6, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));
        assert!(matches!(split_folds(&ids(3), 4, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn folds_deterministic() {
        assert_eq!(split_folds(&ids(25), 5, 3).unwrap(), split_folds(&ids(25), 5, 3).unwrap());
        assert_ne!(split_folds(&ids(25), 5, 3).unwrap(), split_folds(&ids(25), 5, 4).unwrap());
    }

    #[test]
    fn flip_twice_is_identity() {
        let orig: Vec<u32> = (0..2 * 3 * 4 * 5).collect();
        for axis in 0..3 {
            let mut v = orig.clone();
            flip_axis(&mut v, [3, 4, 5], axis);
            assert_ne!(v, orig);
            flip_axis(&mut v, [3, 4, 5], axis);
            assert_eq!(v, orig);
        }
    }

    #[test]
    fn flip_reverses_rows() {
        let mut v: Vec<u32> = (0..6).collect();
        flip_axis(&mut v, [1, 2, 3], 2);
        assert_eq!(v, vec![2, 1, 0, 5, 4, 3]);
    }

    #[test]
    fn identity_affine_keeps_values() {
        let dims = [4, 5, 6];
        let img: Vec<f32> = (0..2 * 120).map(|i| (i as f32 * 0.1).sin()).collect();
        let lab: Vec<u8> = (0..120).map(|i| (i % 3) as u8).collect();
        let (o, l) = affine_transform(&img, &lab, dims, [0.0; 3], 1.0);
        assert_eq!(l, lab);
        for (a, b) in o.iter().zip(&img) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
