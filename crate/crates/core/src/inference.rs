//! Full-volume prediction: Gaussian-blended sliding windows, flip TTA,
//! mean ensembling, mapping back to the CT grid and node post-processing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_channels, Tensor};
use crate::datapipe::flip_axis;
use crate::error::{Error, Result};
use crate::preprocess::{PreprocessedCase, Sidecar};
use crate::segresnet::{NetworkParams, SegResNet};
use crate::volume::{resample_linear, resample_nearest, ImageGeometry, LabelVolume, ScalarVolume};

/// Anything mapping a `[N, 2, D, H, W]` input to `[N, C, D, H, W]` logits.
pub trait Predictor: Sync {
    fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
}

pub struct Model {
    pub net: SegResNet,
    pub params: NetworkParams<f32>,
}

impl Predictor for Model {
    fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.net.predict(&self.params, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessConfig {
    pub enabled: bool,
    pub min_volume_mm3: f64,
    pub min_mean_pet: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            min_volume_mm3: 100.0,
            min_mean_pet: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// `[D, H, W]`.
    pub roi_size: [usize; 3],
    pub overlap: f64,
    /// Windows evaluated per network call.
    pub window_batch: usize,
    pub tta: bool,
    pub postprocess: PostprocessConfig,
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap must lie in [0, 1), got {}", self.overlap)));
        }
        if self.roi_size.contains(&0) || self.window_batch == 0 {
            return Err(Error::Config("roi size and window batch must be positive".into()));
        }
        Ok(())
    }
}

/// Per-class probabilities `[C, D, H, W]` on the cropped working grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub dims: [usize; 3],
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let s = self.voxels();
        &self.data[c * s..(c + 1) * s]
    }

    /// Largest deviation of the per-voxel channel sum from 1.
    pub fn max_sum_error(&self) -> f64 {
        let s = self.voxels();
        (0..s)
            .map(|v| ((0..self.channels).map(|c| self.data[c * s + v] as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Per-voxel argmax; ties go to the lower class index.
    pub fn argmax(&self) -> Vec<u8> {
        let s = self.voxels();
        (0..s)
            .map(|v| {
                let mut best = 0;
                for c in 1..self.channels {
                    if self.data[c * s + v] > self.data[best * s + v] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Window start offsets along one axis; the last window ends at the edge.
pub fn window_starts(size: usize, roi: usize, overlap: f64) -> Vec<usize> {
    if size <= roi {
        return vec![0];
    }
    let stride = ((roi as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + roi < size).collect();
    starts.push(size - roi);
    starts
}

/// Separable Gaussian importance map with sigma = roi / 8, peak 1.
pub fn gaussian_weights(roi: [usize; 3]) -> Vec<f64> {
    let axis = |n: usize| -> Vec<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        let sigma = 0.125 * n as f64;
        (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect()
    };
    let (a, b, c) = (axis(roi[0]), axis(roi[1]), axis(roi[2]));
    let mut w = Vec::with_capacity(roi.iter().product());
    for z in &a {
        for y in &b {
            for x in &c {
                w.push((z * y * x).max(1e-4));
            }
        }
    }
    w
}

fn check_input(input: &Tensor<f32>) -> Result<[usize; 4]> {
    match input.shape() {
        &[1, c, d, h, w] => Ok([c, d, h, w]),
        s => Err(Error::Shape(format!("inference input must be [1, C, D, H, W], got {s:?}"))),
    }
}

/// Tiles the volume with overlapping windows of `roi_size`, padding with
/// `pad` (per input channel) where the volume is smaller than a window, and
/// blends per-window softmax outputs with Gaussian weights.
pub fn sliding_window(model: &dyn Predictor, input: &Tensor<f32>, pad: &[f32], cfg: &InferenceConfig) -> Result<ProbabilityMap> {
    cfg.validate()?;
    let [cin, d, h, w] = check_input(input)?;
    if pad.len() != cin {
        return Err(Error::Argument(format!("{} pad values for {cin} channels", pad.len())));
    }
    let dims = [d, h, w];
    let roi = cfg.roi_size;
    let starts: Vec<Vec<usize>> = (0..3).map(|a| window_starts(dims[a], roi[a], cfg.overlap)).collect();
    let mut windows = Vec::new();
    for &z in &starts[0] {
        for &y in &starts[1] {
            for &x in &starts[2] {
                windows.push([z, y, x]);
            }
        }
    }
    let weights = gaussian_weights(roi);
    let rn: usize = roi.iter().product();
    let s = d * h * w;
    let src = input.data();
    let mut acc: Vec<f64> = Vec::new();
    let mut norm = vec![0f64; s];
    let mut channels = 0;

    for chunk in windows.chunks(cfg.window_batch) {
        let mut batch = Vec::with_capacity(chunk.len() * cin * rn);
        for start in chunk {
            for c in 0..cin {
                for z in 0..roi[0] {
                    for y in 0..roi[1] {
                        for x in 0..roi[2] {
                            let p = [start[0] + z, start[1] + y, start[2] + x];
                            batch.push(if p[0] < d && p[1] < h && p[2] < w {
                                src[c * s + (p[0] * h + p[1]) * w + p[2]]
                            } else {
                                pad[c]
                            });
                        }
                    }
                }
            }
        }
        let x = Tensor::new(vec![chunk.len(), cin, roi[0], roi[1], roi[2]], batch)?;
        let probs = softmax_channels(&model.logits(&x)?)?;
        let shape = probs.shape();
        if shape.len() != 5 || shape[0] != chunk.len() || shape[2..] != roi[..] {
            return Err(Error::Shape(format!("model returned {shape:?} for windows of {roi:?}")));
        }
        if channels == 0 {
            channels = shape[1];
            acc = vec![0f64; channels * s];
        }
        let pd = probs.data();
        for (b, start) in chunk.iter().enumerate() {
            for z in 0..roi[0].min(d - start[0]) {
                for y in 0..roi[1].min(h - start[1]) {
                    for x in 0..roi[2].min(w - start[2]) {
                        let r = (z * roi[1] + y) * roi[2] + x;
                        let v = ((start[0] + z) * h + start[1] + y) * w + start[2] + x;
                        let wt = weights[r];
                        norm[v] += wt;
                        for c in 0..channels {
                            acc[c * s + v] += wt * pd[(b * channels + c) * rn + r] as f64;
                        }
                    }
                }
            }
        }
    }
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, a)| (a / norm[i % s]) as f32)
        .collect();
    Ok(ProbabilityMap { dims, channels, data })
}

/// The 8 subsets of the spatial axes `(D, H, W)`, starting with no flip.
pub const FLIP_SETS: [[bool; 3]; 8] = [
    [false, false, false],
    [true, false, false],
    [false, true, false],
    [false, false, true],
    [true, true, false],
    [true, false, true],
    [false, true, true],
    [true, true, true],
];

pub fn apply_flips<T: Copy>(data: &mut [T], dims: [usize; 3], flips: [bool; 3]) {
    for (axis, &f) in flips.iter().enumerate() {
        if f {
            flip_axis(data, dims, axis);
        }
    }
}

/// Mean of the sliding-window predictions over all 8 flips of the input,
/// each mapped back to the original orientation.
pub fn tta_predict(model: &dyn Predictor, input: &Tensor<f32>, pad: &[f32], cfg: &InferenceConfig) -> Result<ProbabilityMap> {
    let [_, d, h, w] = check_input(input)?;
    let dims = [d, h, w];
    let mut maps = Vec::with_capacity(FLIP_SETS.len());
    for flips in FLIP_SETS {
        let mut x = input.clone();
        apply_flips(x.data_mut(), dims, flips);
        let mut map = sliding_window(model, &x, pad, cfg)?;
        apply_flips(&mut map.data, dims, flips);
        maps.push(map);
    }
    ensemble_mean(&maps)
}

/// Sliding window, with flip TTA when enabled in `cfg`.
pub fn predict_case(model: &dyn Predictor, input: &Tensor<f32>, pad: &[f32], cfg: &InferenceConfig) -> Result<ProbabilityMap> {
    if cfg.tta {
        tta_predict(model, input, pad, cfg)
    } else {
        sliding_window(model, input, pad, cfg)
    }
}

/// Voxelwise mean of probability maps.
pub fn ensemble_mean(maps: &[ProbabilityMap]) -> Result<ProbabilityMap> {
    let first = maps.first().ok_or_else(|| Error::Argument("ensemble of zero maps".into()))?;
    if maps.iter().any(|m| m.dims != first.dims || m.channels != first.channels) {
        return Err(Error::Argument("ensemble maps differ in shape".into()));
    }
    if maps.len() == 1 {
        return Ok(first.clone());
    }
    let n = maps.len() as f64;
    let data = (0..first.data.len())
        .map(|i| (maps.iter().map(|m| m.data[i] as f64).sum::<f64>() / n) as f32)
        .collect();
    Ok(ProbabilityMap {
        dims: first.dims,
        channels: first.channels,
        data,
    })
}

/// Argmax on the cropped grid, pasted into the full working frame and
/// resampled (nearest) onto the original CT grid.
pub fn finalize(map: &ProbabilityMap, sidecar: &Sidecar) -> Result<LabelVolume> {
    let cg = sidecar.cropped_geometry;
    let expected = [cg.size[2], cg.size[1], cg.size[0]];
    if map.dims != expected {
        return Err(Error::Case {
            case: sidecar.case.clone(),
            reason: format!("probability map {:?} does not match cropped grid {:?}", map.dims, expected),
        });
    }
    let cropped = LabelVolume::new(cg, map.argmax())?;
    let frame = paste(&cropped, &sidecar.working_geometry, sidecar.crop_box.lo);
    Ok(resample_nearest(&frame, &sidecar.ct_geometry))
}

/// Mean of the per-model predictions (each with TTA when enabled) on the
/// cropped working grid.
pub fn predict_ensemble(models: &[&dyn Predictor], case: &PreprocessedCase, cfg: &InferenceConfig) -> Result<ProbabilityMap> {
    if models.is_empty() {
        return Err(Error::Argument("no models given".into()));
    }
    let input = case.network_input()?;
    let pad = case.sidecar.pad_values();
    let maps = models
        .iter()
        .map(|m| predict_case(*m, &input, &pad, cfg))
        .collect::<Result<Vec<_>>>()?;
    ensemble_mean(&maps)
}

/// Full inference for one case: ensemble prediction, mapping to the CT grid
/// and, when enabled, node post-processing against the raw PET.
pub fn segment(
    models: &[&dyn Predictor],
    case: &PreprocessedCase,
    raw_pet: &ScalarVolume,
    cfg: &InferenceConfig,
) -> Result<LabelVolume> {
    let map = predict_ensemble(models, case, cfg)?;
    let mask = finalize(&map, &case.sidecar)?;
    if !cfg.postprocess.enabled {
        return Ok(mask);
    }
    let pet = resample_linear(raw_pet, mask.geometry());
    postprocess_nodes(&mask, &pet, &cfg.postprocess)
}

/// Places `v` into a zero volume on `frame` with its voxel 0 at `offset`.
fn paste(v: &LabelVolume, frame: &ImageGeometry, offset: [i64; 3]) -> LabelVolume {
    let mut out = vec![0u8; frame.num_voxels()];
    let [sx, sy, sz] = v.size();
    for k in 0..sz {
        let fk = offset[2] + k as i64;
        if fk < 0 || fk >= frame.size[2] as i64 {
            continue;
        }
        for j in 0..sy {
            let fj = offset[1] + j as i64;
            if fj < 0 || fj >= frame.size[1] as i64 {
                continue;
            }
            for i in 0..sx {
                let fi = offset[0] + i as i64;
                if fi >= 0 && fi < frame.size[0] as i64 {
                    out[frame.linear_index(fi as usize, fj as usize, fk as usize)] = v.get(i, j, k);
                }
            }
        }
    }
    LabelVolume::new(*frame, out).expect("labels copied from a valid volume")
}

/// 26-connected components of `mask` on an x-fastest `[nx, ny, nz]` grid.
/// Returns per-voxel component ids (0 = background, components from 1) and
/// the component count.
pub fn connected_components(mask: &[bool], size: [usize; 3]) -> (Vec<u32>, u32) {
    let [nx, ny, nz] = size;
    let mut comp = vec![0u32; mask.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..mask.len() {
        if !mask[seed] || comp[seed] != 0 {
            continue;
        }
        next += 1;
        comp[seed] = next;
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            let (x, y, z) = (v % nx, (v / nx) % ny, v / (nx * ny));
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 || qz >= nz as i64 {
                            continue;
                        }
                        let q = qx as usize + nx * (qy as usize + ny * qz as usize);
                        if mask[q] && comp[q] == 0 {
                            comp[q] = next;
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
    }
    (comp, next)
}

/// Removes class-2 components smaller than `min_volume_mm3` or with mean raw
/// PET below `min_mean_pet`. Class 1 is left alone.
pub fn postprocess_nodes(mask: &LabelVolume, pet: &ScalarVolume, cfg: &PostprocessConfig) -> Result<LabelVolume> {
    if !mask.geometry().approx_eq(pet.geometry(), 1e-4) {
        return Err(Error::Argument("mask and PET must share a grid".into()));
    }
    let g = mask.geometry();
    let nodes: Vec<bool> = mask.data().iter().map(|&l| l == 2).collect();
    let (comp, count) = connected_components(&nodes, g.size);
    let mut voxels = vec![0usize; count as usize + 1];
    let mut pet_sum = vec![0f64; count as usize + 1];
    for (i, &c) in comp.iter().enumerate() {
        if c > 0 {
            voxels[c as usize] += 1;
            pet_sum[c as usize] += pet.data()[i] as f64;
        }
    }
    let voxel_mm3: f64 = g.spacing.iter().product();
    let keep: Vec<bool> = (0..=count as usize)
        .map(|c| {
            c == 0
                || (voxels[c] as f64 * voxel_mm3 >= cfg.min_volume_mm3
                    && pet_sum[c] / voxels[c] as f64 >= cfg.min_mean_pet)
        })
        .collect();
    let out = mask
        .data()
        .iter()
        .zip(&comp)
        .map(|(&l, &c)| if l == 2 && !keep[c as usize] { 0 } else { l })
        .collect();
    LabelVolume::new(*g, out)
}
