//! Head-and-neck region extraction and intensity normalization.
//!
//! Order: resample CT, PET and labels onto the working grid, find the head
//! top and lateral centre line on PET, cut a fixed-size box below the head
//! top, then normalize. Cropped volumes are stored raw; normalization is
//! applied when the network input is assembled.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::jsonfile;
use crate::volume::{
    crop, read_labels, read_scalar, resample_linear, resample_nearest, write_nifti, ImageGeometry, LabelVolume,
    ScalarVolume, VoxelBox,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropHeuristicConfig {
    pub pet_threshold: f64,
    pub top_slab_mm: f64,
    pub box_xy_mm: f64,
    pub box_z_mm: f64,
}

impl Default for CropHeuristicConfig {
    fn default() -> Self {
        Self {
            pet_threshold: 1.0,
            top_slab_mm: 40.0,
            box_xy_mm: 200.0,
            box_z_mm: 310.0,
        }
    }
}

impl CropHeuristicConfig {
    pub fn validate(&self, spacing: [f64; 3]) -> Result<()> {
        let vals = [self.pet_threshold, self.top_slab_mm, self.box_xy_mm, self.box_z_mm];
        if vals.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!("crop heuristic values must be positive: {self:?}")));
        }
        let max_sp = spacing.iter().cloned().fold(0.0, f64::max);
        if self.box_xy_mm < 2.0 * max_sp || self.box_z_mm < 2.0 * max_sp {
            return Err(Error::Config(format!(
                "crop box must span at least two voxels of spacing {max_sp} mm"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationConfig {
    pub ct_range: (f64, f64),
    pub ct_logit_span: f64,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            ct_range: (-200.0, 300.0),
            ct_logit_span: 4.0,
        }
    }
}

impl NormalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ct_range.0 < self.ct_range.1) || !(self.ct_logit_span > 0.0) {
            return Err(Error::Config(format!("invalid normalization config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Working grid spacing in mm.
    pub spacing: [f64; 3],
    pub crop: CropHeuristicConfig,
    pub normalization: NormalizationConfig,
}

impl PreprocessConfig {
    pub fn paper() -> Self {
        Self {
            spacing: [1.0; 3],
            crop: CropHeuristicConfig::default(),
            normalization: NormalizationConfig::default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            spacing: [4.0; 3],
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!("spacing must be positive: {:?}", self.spacing)));
        }
        self.crop.validate(self.spacing)?;
        self.normalization.validate()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn detection_error(reason: String) -> Error {
    Error::Detection {
        case: "<unnamed>".into(),
        reason,
    }
}

fn name_case(e: Error, case: &str) -> Error {
    match e {
        Error::Detection { reason, .. } => Error::Detection {
            case: case.to_string(),
            reason,
        },
        other => other,
    }
}

/// World z of the highest axial slice holding a voxel above the threshold.
pub fn detect_head_top(pet: &ScalarVolume, cfg: &CropHeuristicConfig) -> Result<f64> {
    let g = pet.geometry();
    let [nx, ny, nz] = g.size;
    let thr = cfg.pet_threshold as f32;
    let slice = nx * ny;
    (0..nz)
        .rev()
        .find(|&k| pet.data()[k * slice..(k + 1) * slice].iter().any(|&v| v > thr))
        .map(|k| g.origin[2] + k as f64 * g.spacing[2])
        .ok_or_else(|| detection_error(format!("no PET voxel above {}", cfg.pet_threshold)))
}

/// Centroid (x, y) in mm of the above-threshold voxels whose world z lies in
/// `[head_top_z - top_slab_mm, head_top_z]`.
pub fn detect_centerline(pet: &ScalarVolume, head_top_z: f64, cfg: &CropHeuristicConfig) -> Result<[f64; 2]> {
    let g = pet.geometry();
    let [nx, ny, nz] = g.size;
    let thr = cfg.pet_threshold as f32;
    let tol = 1e-6 * g.spacing[2];
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for k in 0..nz {
        let z = g.origin[2] + k as f64 * g.spacing[2];
        if z < head_top_z - cfg.top_slab_mm - tol || z > head_top_z + tol {
            continue;
        }
        for j in 0..ny {
            for i in 0..nx {
                if pet.data()[g.linear_index(i, j, k)] > thr {
                    let w = g.world_of_voxel([i as i64, j as i64, k as i64]);
                    sx += w[0];
                    sy += w[1];
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(detection_error(format!(
            "no foreground in the {} mm slab below z = {head_top_z}",
            cfg.top_slab_mm
        )));
    }
    Ok([sx / n as f64, sy / n as f64])
}

/// Voxel box of `box_xy × box_xy × box_z` mm centred laterally on the centre
/// line and ending at the head top. Bounds are not clamped: the part outside
/// the grid is filled by [`crop`].
pub fn hn_box(center_xy: [f64; 2], head_top_z: f64, cfg: &CropHeuristicConfig, geom: &ImageGeometry) -> VoxelBox {
    let min_mm = [
        center_xy[0] - cfg.box_xy_mm / 2.0,
        center_xy[1] - cfg.box_xy_mm / 2.0,
        head_top_z - cfg.box_z_mm,
    ];
    let extent = [cfg.box_xy_mm, cfg.box_xy_mm, cfg.box_z_mm];
    let lo: [i64; 3] = std::array::from_fn(|a| ((min_mm[a] - geom.origin[a]) / geom.spacing[a]).round() as i64);
    let hi = std::array::from_fn(|a| lo[a] + (extent[a] / geom.spacing[a]).round() as i64);
    VoxelBox { lo, hi }
}

/// Window to [-1, 1], scale by the logit span, squash with the logistic.
pub fn normalize_ct(ct: &ScalarVolume, cfg: &NormalizationConfig) -> ScalarVolume {
    let (lo, hi) = cfg.ct_range;
    let span = cfg.ct_logit_span;
    ct.map(|x| logistic(((x as f64 - lo) / (hi - lo) * 2.0 - 1.0) * span) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PetStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn pet_stats(pet: &ScalarVolume) -> Result<PetStats> {
    let n = pet.data().len() as f64;
    let mean = pet.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = pet.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12) {
        return Err(Error::Normalization(format!("PET has zero variance (constant value {mean})")));
    }
    Ok(PetStats { mean, std })
}

pub fn normalize_pet_with(pet: &ScalarVolume, stats: &PetStats) -> ScalarVolume {
    pet.map(|x| logistic((x as f64 - stats.mean) / stats.std) as f32)
}

/// Z-score over the whole volume followed by the logistic.
pub fn normalize_pet(pet: &ScalarVolume) -> Result<ScalarVolume> {
    Ok(normalize_pet_with(pet, &pet_stats(pet)?))
}

/// Stacks CT and PET into `[1, 2, D, H, W]` (D = z, W = x).
pub fn make_network_input(ct_n: &ScalarVolume, pet_n: &ScalarVolume) -> Result<Tensor<f32>> {
    if !ct_n.geometry().approx_eq(pet_n.geometry(), 1e-6) {
        return Err(Error::Argument(format!(
            "CT geometry {:?} differs from PET geometry {:?}",
            ct_n.geometry(),
            pet_n.geometry()
        )));
    }
    let [nx, ny, nz] = ct_n.size();
    let mut data = Vec::with_capacity(2 * ct_n.data().len());
    data.extend_from_slice(ct_n.data());
    data.extend_from_slice(pet_n.data());
    Tensor::new(vec![1, 2, nz, ny, nx], data)
}

/// Everything needed to map a cropped prediction back to the CT grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub case: String,
    pub ct_geometry: ImageGeometry,
    /// Full working-resolution frame the crop box refers to.
    pub working_geometry: ImageGeometry,
    pub crop_box: VoxelBox,
    pub cropped_geometry: ImageGeometry,
    pub head_top_z: f64,
    pub center_xy: [f64; 2],
    pub pet_stats: PetStats,
    pub normalization: NormalizationConfig,
}

impl Sidecar {
    /// Normalized values of the crop fill constants: CT at the window low
    /// end, PET at zero.
    pub fn pad_values(&self) -> [f32; 2] {
        [
            logistic(-self.normalization.ct_logit_span) as f32,
            logistic(-self.pet_stats.mean / self.pet_stats.std) as f32,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedCase {
    pub sidecar: Sidecar,
    /// Raw cropped intensities on the working grid.
    pub ct: ScalarVolume,
    pub pet: ScalarVolume,
    pub label: Option<LabelVolume>,
}

impl PreprocessedCase {
    pub fn id(&self) -> &str {
        &self.sidecar.case
    }

    pub fn network_input(&self) -> Result<Tensor<f32>> {
        let ct = normalize_ct(&self.ct, &self.sidecar.normalization);
        let pet = normalize_pet_with(&self.pet, &self.sidecar.pet_stats);
        make_network_input(&ct, &pet)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_nifti(&self.ct, dir.join("ct.nii.gz"))?;
        write_nifti(&self.pet, dir.join("pet.nii.gz"))?;
        if let Some(label) = &self.label {
            write_nifti(label, dir.join("label.nii.gz"))?;
        }
        jsonfile::write(&dir.join("sidecar.json"), &self.sidecar)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar: Sidecar = jsonfile::read(&dir.join("sidecar.json"))?;
        let geom = sidecar.cropped_geometry;
        let fix = |v: ScalarVolume| v.with_geometry(geom);
        let ct = fix(read_scalar(dir.join("ct.nii.gz"))?)?;
        let pet = fix(read_scalar(dir.join("pet.nii.gz"))?)?;
        let label_path = dir.join("label.nii.gz");
        let label = if label_path.exists() {
            Some(read_labels(&label_path)?.with_geometry(geom)?)
        } else {
            None
        };
        Ok(Self { sidecar, ct, pet, label })
    }
}

/// Raw case files as produced by the phantom generator or a data export.
pub struct RawCase {
    pub id: String,
    pub ct: ScalarVolume,
    pub pet: ScalarVolume,
    /// On the CT grid.
    pub label: Option<LabelVolume>,
}

impl RawCase {
    pub fn load(dir: &Path) -> Result<Self> {
        let id = case_id(dir);
        let label_path = dir.join("label.nii.gz");
        Ok(Self {
            ct: read_scalar(dir.join("ct.nii.gz"))?,
            pet: read_scalar(dir.join("pet.nii.gz"))?,
            label: if label_path.exists() {
                Some(read_labels(&label_path)?)
            } else {
                None
            },
            id,
        })
    }
}

pub fn case_id(dir: &Path) -> String {
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// The full working-resolution frame covering the CT field of view.
pub fn working_geometry(ct: &ImageGeometry, cfg: &PreprocessConfig) -> Result<ImageGeometry> {
    ct.with_spacing(cfg.spacing)
}

pub fn preprocess_case(raw: &RawCase, cfg: &PreprocessConfig) -> Result<PreprocessedCase> {
    cfg.validate()?;
    let ct_geom = *raw.ct.geometry();
    let work = working_geometry(&ct_geom, cfg)?;
    let pet_w = resample_linear(&raw.pet, &work);
    let head_top_z = detect_head_top(&pet_w, &cfg.crop).map_err(|e| name_case(e, &raw.id))?;
    let center_xy = detect_centerline(&pet_w, head_top_z, &cfg.crop).map_err(|e| name_case(e, &raw.id))?;
    let crop_box = hn_box(center_xy, head_top_z, &cfg.crop, &work);
    let ct = crop(&resample_linear(&raw.ct, &work), &crop_box, cfg.normalization.ct_range.0 as f32)?;
    let pet = crop(&pet_w, &crop_box, 0.0)?;
    let label = raw
        .label
        .as_ref()
        .map(|l| crop(&resample_nearest(l, &work), &crop_box, 0))
        .transpose()?;
    let pet_stats = pet_stats(&pet).map_err(|e| Error::Case {
        case: raw.id.clone(),
        reason: e.to_string(),
    })?;
    Ok(PreprocessedCase {
        sidecar: Sidecar {
            case: raw.id.clone(),
            ct_geometry: ct_geom,
            working_geometry: work,
            crop_box,
            cropped_geometry: *ct.geometry(),
            head_top_z,
            center_xy,
            pet_stats,
            normalization: cfg.normalization,
        },
        ct,
        pet,
        label,
    })
}

/// Sorted case directories (those holding a `ct.nii.gz`) under `root`.
pub fn list_case_dirs(root: &Path, marker: &str) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join(marker).exists() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
