use rayon::prelude::*;

use super::{ImageGeometry, ScalarVolume, Volume, VoxelBox, Voxel};
use crate::error::{Error, Result};

/// Per-axis linear interpolation taps: for each target index, the two source
/// indices and the weight of the upper one.
fn linear_taps(source: &ImageGeometry, target: &ImageGeometry, axis: usize) -> Vec<(usize, usize, f64)> {
    let n = source.size[axis];
    (0..target.size[axis])
        .map(|t| {
            let world = target.origin[axis] + t as f64 * target.spacing[axis];
            let c = ((world - source.origin[axis]) / source.spacing[axis]).clamp(0.0, (n - 1) as f64);
            let lo = (c.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, c - lo as f64)
        })
        .collect()
}

fn nearest_taps(source: &ImageGeometry, target: &ImageGeometry, axis: usize) -> Vec<usize> {
    let n = source.size[axis];
    (0..target.size[axis])
        .map(|t| {
            let world = target.origin[axis] + t as f64 * target.spacing[axis];
            let c = (world - source.origin[axis]) / source.spacing[axis];
            // ties round up; out-of-extent points take the edge voxel
            ((c + 0.5).floor().max(0.0) as usize).min(n - 1)
        })
        .collect()
}

/// Trilinear resampling in world space with edge replication outside the
/// source extent.
pub fn resample_linear(v: &ScalarVolume, target: &ImageGeometry) -> ScalarVolume {
    let src = v.geometry();
    let [tx, ty, tz] = [0, 1, 2].map(|a| linear_taps(src, target, a));
    let (sx, sy) = (src.size[0], src.size[1]);
    let data = v.data();
    let nx = target.size[0];
    let ny = target.size[1];
    let mut out = vec![0.0f32; target.num_voxels()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        let (z0, z1, wz) = tz[k];
        for (j, row) in slab.chunks_mut(nx).enumerate() {
            let (y0, y1, wy) = ty[j];
            let base = [
                (y0 + sy * z0) * sx,
                (y1 + sy * z0) * sx,
                (y0 + sy * z1) * sx,
                (y1 + sy * z1) * sx,
            ];
            for (i, out_v) in row.iter_mut().enumerate() {
                let (x0, x1, wx) = tx[i];
                let lerp = |b: usize| data[b + x0] as f64 * (1.0 - wx) + data[b + x1] as f64 * wx;
                let c00 = lerp(base[0]);
                let c10 = lerp(base[1]);
                let c01 = lerp(base[2]);
                let c11 = lerp(base[3]);
                let c0 = c00 * (1.0 - wy) + c10 * wy;
                let c1 = c01 * (1.0 - wy) + c11 * wy;
                *out_v = (c0 * (1.0 - wz) + c1 * wz) as f32;
            }
        }
    });
    Volume::from_parts_unchecked(*target, out)
}

/// Nearest-voxel-centre resampling; never creates values absent from the input.
pub fn resample_nearest<V: Voxel>(v: &Volume<V>, target: &ImageGeometry) -> Volume<V> {
    let src = v.geometry();
    let [tx, ty, tz] = [0, 1, 2].map(|a| nearest_taps(src, target, a));
    let data = v.data();
    let mut out = Vec::with_capacity(target.num_voxels());
    for &z in &tz {
        for &y in &ty {
            let base = src.size[0] * (y + src.size[1] * z);
            out.extend(tx.iter().map(|&x| data[base + x]));
        }
    }
    Volume::from_parts_unchecked(*target, out)
}

/// Extracts `bbox`, filling voxels outside the volume with `fill`. The output
/// origin is the world position of `bbox.lo`, so retained voxels keep their
/// world coordinates.
pub fn crop<V: Voxel>(v: &Volume<V>, bbox: &VoxelBox, fill: V) -> Result<Volume<V>> {
    let g = v.geometry();
    if bbox.is_empty() || bbox.clamped(g).is_empty() {
        return Err(Error::Argument(format!(
            "crop box {bbox:?} does not intersect volume of size {:?}",
            g.size
        )));
    }
    let size = bbox.size();
    let geometry = ImageGeometry::new(size, g.spacing, g.world_of_voxel(bbox.lo))?;
    let mut out = Vec::with_capacity(geometry.num_voxels());
    let inside = |c: i64, a: usize| c >= 0 && c < g.size[a] as i64;
    for k in bbox.lo[2]..bbox.hi[2] {
        for j in bbox.lo[1]..bbox.hi[1] {
            if !inside(k, 2) || !inside(j, 1) {
                out.extend(std::iter::repeat_n(fill, size[0]));
                continue;
            }
            for i in bbox.lo[0]..bbox.hi[0] {
                out.push(if inside(i, 0) {
                    v.get(i as usize, j as usize, k as usize)
                } else {
                    fill
                });
            }
        }
    }
    Ok(Volume::from_parts_unchecked(geometry, out))
}
