//! Synthetic PET/CT/label cases with analytically known geometry.
//!
//! A case is a head sphere (soft tissue inside a bone shell, high PET
//! uptake) on top of a neck cylinder and a wider torso, with superellipsoid
//! lesions in the neck region: 0-2 primary tumors near the midline and 1-3
//! lymph nodes off to the sides. CT and PET are sampled at voxel centres on
//! two different grids covering the same physical box; labels live on the
//! CT grid.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonfile;
use crate::preprocess::RawCase;
use crate::volume::{write_nifti, ImageGeometry, LabelVolume, ScalarVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub seed: u64,
    pub extent_mm: [f64; 3],
    pub ct_spacing: [f64; 3],
    pub pet_spacing: [f64; 3],
    pub head_radius_mm: (f64, f64),
    /// Lateral range of the head centre, both x and y.
    pub head_center_xy_mm: (f64, f64),
    pub head_top_z_mm: (f64, f64),
    /// Relative weights of drawing 0, 1 or 2 primary tumors.
    pub tumor_count_weights: [f64; 3],
    pub tumor_radius_mm: (f64, f64),
    /// Inclusive range of node counts.
    pub node_count: (usize, usize),
    pub node_radius_mm: (f64, f64),
    pub pet_body: f64,
    pub pet_head: f64,
    pub pet_tumor: (f64, f64),
    pub pet_node: (f64, f64),
    pub pet_noise: f64,
    pub ct_air: f64,
    pub ct_tissue: f64,
    pub ct_bone: f64,
    pub ct_tumor: f64,
    pub ct_node: f64,
    pub ct_noise: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            extent_mm: [256.0, 256.0, 512.0],
            ct_spacing: [2.0, 2.0, 3.0],
            pet_spacing: [4.0, 4.0, 4.0],
            head_radius_mm: (72.0, 88.0),
            head_center_xy_mm: (108.0, 148.0),
            head_top_z_mm: (440.0, 500.0),
            tumor_count_weights: [0.15, 0.7, 0.15],
            tumor_radius_mm: (11.0, 18.0),
            node_count: (1, 3),
            node_radius_mm: (8.0, 13.0),
            pet_body: 0.2,
            pet_head: 2.5,
            pet_tumor: (6.0, 8.0),
            pet_node: (4.5, 6.0),
            pet_noise: 0.05,
            ct_air: -1000.0,
            ct_tissue: 40.0,
            ct_bone: 700.0,
            ct_tumor: 90.0,
            ct_node: 10.0,
            ct_noise: 10.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: &[f64]| v.iter().all(|x| *x > 0.0);
        let range = |r: (f64, f64)| r.0 <= r.1;
        if !pos(&self.extent_mm) || !pos(&self.ct_spacing) || !pos(&self.pet_spacing) {
            return Err(Error::Config("phantom extent and spacings must be positive".into()));
        }
        if ![self.head_radius_mm, self.head_center_xy_mm, self.head_top_z_mm, self.tumor_radius_mm, self.node_radius_mm]
            .into_iter()
            .all(range)
            || self.node_count.0 > self.node_count.1
        {
            return Err(Error::Config("phantom ranges must satisfy lo <= hi".into()));
        }
        if self.tumor_count_weights.iter().any(|w| *w < 0.0) || self.tumor_count_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("tumor count weights must be nonnegative with positive sum".into()));
        }
        Ok(())
    }

    pub fn ct_geometry(&self) -> Result<ImageGeometry> {
        grid(self.extent_mm, self.ct_spacing)
    }

    pub fn pet_geometry(&self) -> Result<ImageGeometry> {
        grid(self.extent_mm, self.pet_spacing)
    }
}

/// Grid whose voxel edges span `[0, extent]`.
fn grid(extent: [f64; 3], spacing: [f64; 3]) -> Result<ImageGeometry> {
    let size = std::array::from_fn(|a| ((extent[a] / spacing[a]).round() as usize).max(1));
    ImageGeometry::new(size, spacing, spacing.map(|s| s / 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    /// 1 = primary tumor, 2 = lymph node.
    pub class: u8,
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub exponent: f64,
    pub uptake: f64,
}

impl Lesion {
    /// Superellipsoid radius: <= 1 inside.
    pub fn radius(&self, p: [f64; 3]) -> f64 {
        let s: f64 = (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi_axes[a]).abs().powf(self.exponent))
            .sum();
        s.powf(1.0 / self.exponent)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.radius(p) <= 1.0
    }

    /// Weight of the lesion in PET: 1 at the centre, 0.5 on the surface.
    fn pet_weight(&self, p: [f64; 3]) -> f64 {
        let f = self.radius(p);
        1.0 / (1.0 + ((f - 1.0) / 0.08).exp())
    }

    fn bounds(&self, margin: f64) -> ([f64; 3], [f64; 3]) {
        (
            std::array::from_fn(|a| self.center[a] - self.semi_axes[a] * margin),
            std::array::from_fn(|a| self.center[a] + self.semi_axes[a] * margin),
        )
    }
}

/// Drawn parameters of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseParams {
    pub case: String,
    pub index: usize,
    pub head_center: [f64; 3],
    pub head_radius: f64,
    pub head_top_z: f64,
    pub lesions: Vec<Lesion>,
}

impl CaseParams {
    pub fn count(&self, class: u8) -> usize {
        self.lesions.iter().filter(|l| l.class == class).count()
    }
}

pub struct PhantomCase {
    pub params: CaseParams,
    pub ct: ScalarVolume,
    pub pet: ScalarVolume,
    pub label: LabelVolume,
}

/// Per-case seed mixing; splitmix64 finalizer over the inputs.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

pub fn case_name(index: usize) -> String {
    format!("case_{index:03}")
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

/// Draws head and lesion parameters for one case.
pub fn draw_params(spec: &PhantomSpec, index: usize) -> CaseParams {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, index as u64, 1]));
    let radius = uniform(&mut rng, spec.head_radius_mm);
    let top = uniform(&mut rng, spec.head_top_z_mm);
    let cx = uniform(&mut rng, spec.head_center_xy_mm);
    let cy = uniform(&mut rng, spec.head_center_xy_mm);
    let head_center = [cx, cy, top - radius];

    let total: f64 = spec.tumor_count_weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    let mut tumors = 2;
    for (k, w) in spec.tumor_count_weights.iter().enumerate() {
        if u < *w {
            tumors = k;
            break;
        }
        u -= w;
    }
    let nodes = rng.random_range(spec.node_count.0..=spec.node_count.1);

    // neck region below the head sphere
    let neck_top = head_center[2] - 0.3 * radius;
    let neck_bottom = head_center[2] - radius - 50.0;
    let mut lesions: Vec<Lesion> = Vec::new();
    let mut place = |rng: &mut ChaCha8Rng, class: u8| {
        for _ in 0..200 {
            let r = if class == 1 {
                uniform(rng, spec.tumor_radius_mm)
            } else {
                uniform(rng, spec.node_radius_mm)
            };
            let semi_axes = std::array::from_fn(|_| r * rng.random_range(0.8..1.2));
            let (dx, dy) = if class == 1 {
                (rng.random_range(-15.0..15.0), rng.random_range(-15.0..10.0))
            } else {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (side * rng.random_range(22.0..42.0), rng.random_range(-20.0..15.0))
            };
            let z = rng.random_range(neck_bottom..neck_top);
            let cand = Lesion {
                class,
                center: [cx + dx, cy + dy, z],
                semi_axes,
                exponent: rng.random_range(2.0..3.0),
                uptake: uniform(rng, if class == 1 { spec.pet_tumor } else { spec.pet_node }),
            };
            let clear = lesions.iter().all(|l| {
                let d = (0..3).map(|a| (l.center[a] - cand.center[a]).powi(2)).sum::<f64>().sqrt();
                // superellipsoids fit inside sqrt(3) * max semi-axis
                let reach = |x: &Lesion| x.semi_axes.iter().cloned().fold(0.0, f64::max) * 3f64.sqrt();
                d > reach(l) + reach(&cand) + 6.0
            });
            if clear {
                lesions.push(cand);
                return;
            }
        }
    };
    for _ in 0..tumors {
        place(&mut rng, 1);
    }
    for _ in 0..nodes {
        place(&mut rng, 2);
    }
    CaseParams {
        case: case_name(index),
        index,
        head_center,
        head_radius: radius,
        head_top_z: top,
        lesions,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Tissue {
    Air,
    Body,
    Head,
    Skull,
}

fn tissue(p: [f64; 3], params: &CaseParams) -> Tissue {
    let [cx, cy, cz] = params.head_center;
    let r = params.head_radius;
    let d = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2) + (p[2] - cz).powi(2)).sqrt();
    if d <= r {
        return if d > r - 6.0 { Tissue::Skull } else { Tissue::Head };
    }
    let ell = |rx: f64, ry: f64| ((p[0] - cx) / rx).powi(2) + ((p[1] - cy) / ry).powi(2) <= 1.0;
    let shoulders = cz - r - 90.0;
    if p[2] <= cz && p[2] > shoulders && ell(62.0, 55.0) {
        return Tissue::Body;
    }
    if p[2] <= shoulders && ell(120.0, 85.0) {
        return Tissue::Body;
    }
    Tissue::Air
}

/// Indices of the voxels along one axis whose centres lie in `[lo, hi]`.
fn index_range(g: &ImageGeometry, axis: usize, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let a = ((lo - g.origin[axis]) / g.spacing[axis]).ceil().max(0.0) as usize;
    let b = (((hi - g.origin[axis]) / g.spacing[axis]).floor() + 1.0).max(0.0) as usize;
    a.min(g.size[axis])..b.min(g.size[axis])
}

fn render_ct(spec: &PhantomSpec, params: &CaseParams, rng: &mut ChaCha8Rng) -> Result<(ScalarVolume, LabelVolume)> {
    let g = spec.ct_geometry()?;
    let n = g.num_voxels();
    let mut ct = vec![0f32; n];
    let mut label = vec![0u8; n];
    for (idx, v) in ct.iter_mut().enumerate() {
        let [i, j, k] = g.voxel_index(idx);
        let p = g.world_of_voxel([i as i64, j as i64, k as i64]);
        *v = match tissue(p, params) {
            Tissue::Air => spec.ct_air,
            Tissue::Body | Tissue::Head => spec.ct_tissue,
            Tissue::Skull => spec.ct_bone,
        } as f32;
    }
    for l in &params.lesions {
        let (lo, hi) = l.bounds(1.0);
        for k in index_range(&g, 2, lo[2], hi[2]) {
            for j in index_range(&g, 1, lo[1], hi[1]) {
                for i in index_range(&g, 0, lo[0], hi[0]) {
                    let p = g.world_of_voxel([i as i64, j as i64, k as i64]);
                    if l.contains(p) {
                        let idx = g.linear_index(i, j, k);
                        label[idx] = l.class;
                        ct[idx] = (if l.class == 1 { spec.ct_tumor } else { spec.ct_node }) as f32;
                    }
                }
            }
        }
    }
    if spec.ct_noise > 0.0 {
        let noise = Normal::new(0.0, spec.ct_noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in ct.iter_mut() {
            *v += noise.sample(rng) as f32;
        }
    }
    Ok((ScalarVolume::new(g, ct)?, LabelVolume::new(g, label)?))
}

fn render_pet(spec: &PhantomSpec, params: &CaseParams, rng: &mut ChaCha8Rng) -> Result<ScalarVolume> {
    let g = spec.pet_geometry()?;
    let mut pet = vec![0f32; g.num_voxels()];
    for (idx, v) in pet.iter_mut().enumerate() {
        let [i, j, k] = g.voxel_index(idx);
        let p = g.world_of_voxel([i as i64, j as i64, k as i64]);
        *v = match tissue(p, params) {
            Tissue::Air => 0.0,
            Tissue::Body => spec.pet_body,
            Tissue::Head | Tissue::Skull => spec.pet_head,
        } as f32;
    }
    for l in &params.lesions {
        let (lo, hi) = l.bounds(1.6);
        for k in index_range(&g, 2, lo[2], hi[2]) {
            for j in index_range(&g, 1, lo[1], hi[1]) {
                for i in index_range(&g, 0, lo[0], hi[0]) {
                    let p = g.world_of_voxel([i as i64, j as i64, k as i64]);
                    let idx = g.linear_index(i, j, k);
                    let base = pet[idx] as f64;
                    let w = l.pet_weight(p);
                    pet[idx] = pet[idx].max((base + w * (l.uptake - base)) as f32);
                }
            }
        }
    }
    if spec.pet_noise > 0.0 {
        let noise = Normal::new(0.0, spec.pet_noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in pet.iter_mut() {
            *v = (*v + noise.sample(rng) as f32).max(0.0);
        }
    }
    ScalarVolume::new(g, pet)
}

impl PhantomCase {
    pub fn into_raw(self) -> RawCase {
        RawCase {
            id: self.params.case,
            ct: self.ct,
            pet: self.pet,
            label: Some(self.label),
        }
    }
}

/// Deterministic in `(spec.seed, index)`.
pub fn generate_case(spec: &PhantomSpec, index: usize) -> Result<PhantomCase> {
    spec.validate()?;
    let params = draw_params(spec, index);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, index as u64, 2]));
    let (ct, label) = render_ct(spec, &params, &mut rng)?;
    let pet = render_pet(spec, &params, &mut rng)?;
    Ok(PhantomCase { params, ct, pet, label })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: PhantomSpec,
    pub cases: Vec<CaseParams>,
}

/// Writes `n` case directories (`ct.nii.gz`, `pet.nii.gz`, `label.nii.gz`)
/// and `manifest.json` under `out`.
pub fn generate_corpus(spec: &PhantomSpec, n: usize, out: &Path) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::Argument("corpus needs at least one case".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut cases = Vec::with_capacity(n);
    for index in 0..n {
        let case = generate_case(spec, index)?;
        let dir = out.join(&case.params.case);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_nifti(&case.ct, dir.join("ct.nii.gz"))?;
        write_nifti(&case.pet, dir.join("pet.nii.gz"))?;
        write_nifti(&case.label, dir.join("label.nii.gz"))?;
        cases.push(case.params);
    }
    let manifest = Manifest {
        spec: spec.clone(),
        cases,
    };
    jsonfile::write(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_index() {
        let spec = PhantomSpec::default();
        let a = generate_case(&spec, 3).unwrap();
        let b = generate_case(&spec, 3).unwrap();
        assert_eq!(a.ct, b.ct);
        assert_eq!(a.pet, b.pet);
        assert_eq!(a.label, b.label);
        assert_ne!(draw_params(&spec, 4), a.params);
    }

    #[test]
    fn zero_tumor_spec_has_no_class_one() {
        let spec = PhantomSpec {
            tumor_count_weights: [1.0, 0.0, 0.0],
            ..Default::default()
        };
        let case = generate_case(&spec, 0).unwrap();
        assert_eq!(case.label.count(1), 0);
        assert!(case.label.count(2) > 0);
    }

    #[test]
    fn lesions_sit_inside_their_labels() {
        let spec = PhantomSpec::default();
        for index in 0..4 {
            let case = generate_case(&spec, index).unwrap();
            let g = case.label.geometry();
            for l in &case.params.lesions {
                let c = g.continuous_index(l.center).map(|v| v.round() as usize);
                assert_eq!(case.label.get(c[0], c[1], c[2]), l.class);
            }
        }
    }

    #[test]
    fn grids_share_world_frame() {
        let spec = PhantomSpec::default();
        let (ct, pet) = (spec.ct_geometry().unwrap(), spec.pet_geometry().unwrap());
        for a in 0..3 {
            assert!((ct.extent_mm()[a] - pet.extent_mm()[a]).abs() <= ct.spacing[a]);
        }
        assert_eq!(ct.size, [128, 128, 171]);
        assert_eq!(pet.size, [64, 64, 128]);
    }
}
