//! NIfTI-1 single-file reader/writer (`.nii` and `.nii.gz`).
//!
//! Only axis-aligned affines are accepted. Whatever the stored axis order
//! and direction, volumes come out in canonical orientation with a
//! positive-diagonal affine. Written files carry float32 (scalars) or
//! uint8 (labels) with `sform_code = 1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{ImageGeometry, LabelVolume, ScalarVolume, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

/// How the stored voxel axes map onto the canonical ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orientation {
    /// `axis_of[a]` is the stored axis that became canonical axis `a`.
    pub axis_of: [usize; 3],
    /// Whether canonical axis `a` runs opposite to the stored axis.
    pub flipped: [bool; 3],
}

impl Orientation {
    pub fn is_canonical(&self) -> bool {
        self.axis_of == [0, 1, 2] && self.flipped == [false; 3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

#[derive(Debug, Clone)]
pub struct NiftiImage {
    pub data: VolumeData,
    /// Reorientation applied at load.
    pub orientation: Orientation,
}

struct RawImage {
    geometry: ImageGeometry,
    orientation: Orientation,
    datatype: i16,
    values: Vec<f64>,
}

/// Reads a volume. uint8 files whose values all lie in {0,1,2} load as
/// labels, everything else as scalars.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let is_label = raw.datatype == DT_UINT8 && raw.values.iter().all(|&v| v <= 2.0);
    let data = if is_label {
        let labels = raw.values.iter().map(|&v| v as u8).collect();
        VolumeData::Label(LabelVolume::from_parts_unchecked(raw.geometry, labels))
    } else {
        VolumeData::Scalar(to_scalar(path, raw.geometry, &raw.values)?)
    };
    Ok(NiftiImage {
        data,
        orientation: raw.orientation,
    })
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    if !raw.orientation.is_canonical() {
        log::debug!("{} reoriented at load: {:?}", path.display(), raw.orientation);
    }
    to_scalar(path, raw.geometry, &raw.values)
}

/// Reads a segmentation mask of any integer-valued datatype.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let mut labels = Vec::with_capacity(raw.values.len());
    for &v in &raw.values {
        let r = v.round();
        if (v - r).abs() > 1e-6 || !(0.0..=2.0).contains(&r) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("label value {v} outside {{0,1,2}}"),
            });
        }
        labels.push(r as u8);
    }
    Ok(LabelVolume::from_parts_unchecked(raw.geometry, labels))
}

fn to_scalar(path: &Path, geometry: ImageGeometry, values: &[f64]) -> Result<ScalarVolume> {
    let data: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    ScalarVolume::new(geometry, data).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut bytes = Vec::new();
    let gz = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    if gz {
        MultiGzDecoder::new(reader)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("gzip stream: {e}"),
            })?;
    } else {
        reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

fn read_raw(path: &Path) -> Result<RawImage> {
    let bytes = read_bytes(path)?;
    let format_err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_SIZE {
        return Err(format_err(format!(
            "header truncated: {} bytes, need {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let header = Header::parse(&bytes[..HEADER_SIZE]).map_err(format_err)?;
    if &bytes[344..347] != b"n+1" {
        return Err(format_err("missing \"n+1\" magic".into()));
    }

    let ndim = header.dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(format_err(format!("dim[0] = {ndim}")));
    }
    if (4..=ndim as usize).any(|d| header.dim[d] > 1) {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            reason: "volumes with more than 3 dimensions".into(),
        });
    }
    let mut stored_size = [1usize; 3];
    for a in 0..3 {
        if a < ndim as usize {
            let d = header.dim[a + 1];
            if d < 1 {
                return Err(format_err(format!("dim[{}] = {d}", a + 1)));
            }
            stored_size[a] = d as usize;
        }
    }
    let bytes_per_voxel = match header.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::Unsupported {
                path: path.to_path_buf(),
                reason: format!("datatype code {other}"),
            })
        }
    };

    let n: usize = stored_size.iter().product();
    let offset = (header.vox_offset as usize).max(HEADER_SIZE);
    let needed = offset + n * bytes_per_voxel;
    if bytes.len() < needed {
        return Err(format_err(format!(
            "voxel data truncated: {} bytes, need {needed}",
            bytes.len()
        )));
    }
    let payload = &bytes[offset..needed];
    let mut values = decode_values(payload, header.datatype, header.big_endian, n);

    let (slope, inter) = (header.scl_slope as f64, header.scl_inter as f64);
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && (slope != 1.0 || inter != 0.0) {
        values.iter_mut().for_each(|v| *v = *v * slope + inter);
    }

    let affine = header.affine();
    let (orientation, spacing, first_voxel) = canonicalize(&affine, stored_size).map_err(|reason| {
        Error::Orientation {
            path: path.to_path_buf(),
            reason,
        }
    })?;
    let size = std::array::from_fn(|a| stored_size[orientation.axis_of[a]]);
    let geometry = ImageGeometry::new(size, spacing, first_voxel).map_err(|e| format_err(e.to_string()))?;
    let values = if orientation.is_canonical() {
        values
    } else {
        reorder(&values, stored_size, &geometry, &orientation)
    };

    Ok(RawImage {
        geometry,
        orientation,
        datatype: header.datatype,
        values,
    })
}

fn decode_values(payload: &[u8], datatype: i16, big_endian: bool, n: usize) -> Vec<f64> {
    macro_rules! decode {
        ($width:expr, $read:ident) => {
            payload
                .chunks_exact($width)
                .take(n)
                .map(|c| {
                    if big_endian {
                        BigEndian::$read(c) as f64
                    } else {
                        LittleEndian::$read(c) as f64
                    }
                })
                .collect()
        };
    }
    match datatype {
        DT_UINT8 => payload.iter().take(n).map(|&b| b as f64).collect(),
        DT_INT16 => decode!(2, read_i16),
        DT_INT32 => decode!(4, read_i32),
        DT_FLOAT32 => decode!(4, read_f32),
        DT_FLOAT64 => decode!(8, read_f64),
        _ => unreachable!("datatype validated by caller"),
    }
}

/// Splits an affine into an axis permutation with flips, canonical spacing,
/// and the world position of canonical voxel (0,0,0).
fn canonicalize(
    affine: &[[f64; 4]; 3],
    stored_size: [usize; 3],
) -> std::result::Result<(Orientation, [f64; 3], [f64; 3]), String> {
    let scale = (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .map(|(r, c)| affine[r][c].abs())
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Err("affine has a zero linear part".into());
    }
    let tol = 1e-4 * scale;
    let mut axis_of = [usize::MAX; 3];
    let mut flipped = [false; 3];
    let mut spacing = [0.0; 3];
    for stored in 0..3 {
        let column: [f64; 3] = std::array::from_fn(|r| affine[r][stored]);
        let nonzero: Vec<usize> = (0..3).filter(|&r| column[r].abs() > tol).collect();
        if nonzero.len() != 1 {
            return Err(format!("stored axis {stored} maps to world direction {column:?}"));
        }
        let world = nonzero[0];
        if axis_of[world] != usize::MAX {
            return Err(format!("two stored axes map onto world axis {world}"));
        }
        axis_of[world] = stored;
        flipped[world] = column[world] < 0.0;
        spacing[world] = column[world].abs();
    }
    // Canonical voxel 0 is the stored voxel at the far end of every flipped axis.
    let mut stored_index = [0.0; 3];
    for world in 0..3 {
        if flipped[world] {
            stored_index[axis_of[world]] = (stored_size[axis_of[world]] - 1) as f64;
        }
    }
    let first = std::array::from_fn(|r| {
        affine[r][3] + (0..3).map(|c| affine[r][c] * stored_index[c]).sum::<f64>()
    });
    Ok((Orientation { axis_of, flipped }, spacing, first))
}

fn reorder(values: &[f64], stored_size: [usize; 3], geometry: &ImageGeometry, o: &Orientation) -> Vec<f64> {
    let [nx, ny, nz] = geometry.size;
    let mut out = Vec::with_capacity(values.len());
    let mut stored = [0usize; 3];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for (a, c) in [i, j, k].into_iter().enumerate() {
                    let n = geometry.size[a];
                    stored[o.axis_of[a]] = if o.flipped[a] { n - 1 - c } else { c };
                }
                let idx = stored[0] + stored_size[0] * (stored[1] + stored_size[1] * stored[2]);
                out.push(values[idx]);
            }
        }
    }
    out
}

struct Header {
    big_endian: bool,
    dim: [i16; 8],
    datatype: i16,
    pixdim: [f32; 8],
    vox_offset: f32,
    scl_slope: f32,
    scl_inter: f32,
    qform_code: i16,
    sform_code: i16,
    quatern: [f32; 3],
    qoffset: [f32; 3],
    srow: [[f32; 4]; 3],
}

impl Header {
    fn parse(b: &[u8]) -> std::result::Result<Self, String> {
        let big_endian = match (LittleEndian::read_i32(&b[0..4]), BigEndian::read_i32(&b[0..4])) {
            (348, _) => false,
            (_, 348) => true,
            (v, _) => return Err(format!("sizeof_hdr = {v}, expected 348")),
        };
        let i16_at = |o: usize| {
            if big_endian {
                BigEndian::read_i16(&b[o..o + 2])
            } else {
                LittleEndian::read_i16(&b[o..o + 2])
            }
        };
        let f32_at = |o: usize| {
            if big_endian {
                BigEndian::read_f32(&b[o..o + 4])
            } else {
                LittleEndian::read_f32(&b[o..o + 4])
            }
        };
        Ok(Self {
            big_endian,
            dim: std::array::from_fn(|i| i16_at(40 + 2 * i)),
            datatype: i16_at(70),
            pixdim: std::array::from_fn(|i| f32_at(76 + 4 * i)),
            vox_offset: f32_at(108),
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            qform_code: i16_at(252),
            sform_code: i16_at(254),
            quatern: std::array::from_fn(|i| f32_at(256 + 4 * i)),
            qoffset: std::array::from_fn(|i| f32_at(268 + 4 * i)),
            srow: std::array::from_fn(|r| std::array::from_fn(|c| f32_at(280 + 16 * r + 4 * c))),
        })
    }

    fn affine(&self) -> [[f64; 4]; 3] {
        let pix = |i: usize| {
            let p = self.pixdim[i] as f64;
            if p > 0.0 && p.is_finite() {
                p
            } else {
                1.0
            }
        };
        if self.sform_code > 0 {
            return std::array::from_fn(|r| std::array::from_fn(|c| self.srow[r][c] as f64));
        }
        if self.qform_code > 0 {
            let [b, c, d] = self.quatern.map(|v| v as f64);
            let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
            let rot = [
                [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
                [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
                [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
            ];
            let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
            let scale = [pix(1), pix(2), pix(3) * qfac];
            return std::array::from_fn(|r| {
                let mut row = [0.0; 4];
                for col in 0..3 {
                    row[col] = rot[r][col] * scale[col];
                }
                row[3] = self.qoffset[r] as f64;
                row
            });
        }
        let mut affine = [[0.0; 4]; 3];
        for a in 0..3 {
            affine[a][a] = pix(a + 1);
        }
        affine
    }
}

/// Writes scalars as float32 or labels as uint8; gzip when the path ends in `.gz`.
pub fn write_nifti<V: NiftiVoxel>(volume: &Volume<V>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = vec![0u8; DATA_OFFSET];
    let g = volume.geometry();
    {
        let h = &mut bytes[..HEADER_SIZE];
        LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
        h[38] = b'r'; // regular
        let dims = [3i16, g.size[0] as i16, g.size[1] as i16, g.size[2] as i16, 1, 1, 1, 1];
        for (i, d) in dims.iter().enumerate() {
            LittleEndian::write_i16(&mut h[40 + 2 * i..42 + 2 * i], *d);
        }
        LittleEndian::write_i16(&mut h[70..72], V::DATATYPE);
        LittleEndian::write_i16(&mut h[72..74], V::BITPIX);
        let pixdim = [1.0f32, g.spacing[0] as f32, g.spacing[1] as f32, g.spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
        for (i, p) in pixdim.iter().enumerate() {
            LittleEndian::write_f32(&mut h[76 + 4 * i..80 + 4 * i], *p);
        }
        LittleEndian::write_f32(&mut h[108..112], DATA_OFFSET as f32);
        LittleEndian::write_f32(&mut h[112..116], 1.0);
        LittleEndian::write_f32(&mut h[116..120], 0.0);
        h[123] = 2; // mm
        LittleEndian::write_i16(&mut h[252..254], 1);
        LittleEndian::write_i16(&mut h[254..256], 1);
        for a in 0..3 {
            LittleEndian::write_f32(&mut h[268 + 4 * a..272 + 4 * a], g.origin[a] as f32);
            let row = 280 + 16 * a;
            for c in 0..3 {
                let v = if a == c { g.spacing[a] as f32 } else { 0.0 };
                LittleEndian::write_f32(&mut h[row + 4 * c..row + 4 * c + 4], v);
            }
            LittleEndian::write_f32(&mut h[row + 12..row + 16], g.origin[a] as f32);
        }
        h[344..348].copy_from_slice(b"n+1\0");
    }
    bytes.reserve(volume.data().len() * V::BYTES);
    for v in volume.data() {
        v.write_le(&mut bytes);
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let gz = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    let result = if gz {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::fast());
        enc.write_all(&bytes).and_then(|_| enc.finish()).and_then(|mut w| w.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).and_then(|_| w.flush())
    };
    result.map_err(|e| Error::io(path, e))
}

/// Voxel types with a fixed on-disk NIfTI encoding.
pub trait NiftiVoxel: super::Voxel {
    const DATATYPE: i16;
    const BITPIX: i16;
    const BYTES: usize;
    fn write_le(&self, out: &mut Vec<u8>);
}

impl NiftiVoxel for f32 {
    const DATATYPE: i16 = DT_FLOAT32;
    const BITPIX: i16 = 32;
    const BYTES: usize = 4;
    fn write_le(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl NiftiVoxel for u8 {
    const DATATYPE: i16 = DT_UINT8;
    const BITPIX: i16 = 8;
    const BYTES: usize = 1;
    fn write_le(&self, out: &mut Vec<u8>) {
        out.push(*self);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, dims: [i16; 3], datatype: i16, srow: [[f32; 4]; 3], payload: &[u8]) {
        let mut h = vec![0u8; DATA_OFFSET];
        LittleEndian::write_i32(&mut h[0..4], 348);
        LittleEndian::write_i16(&mut h[40..42], 3);
        for a in 0..3 {
            LittleEndian::write_i16(&mut h[42 + 2 * a..44 + 2 * a], dims[a]);
            LittleEndian::write_f32(&mut h[80 + 4 * a..84 + 4 * a], srow[a][a].abs());
        }
        LittleEndian::write_i16(&mut h[70..72], datatype);
        LittleEndian::write_f32(&mut h[108..112], 352.0);
        LittleEndian::write_i16(&mut h[254..256], 1);
        for r in 0..3 {
            for c in 0..4 {
                LittleEndian::write_f32(&mut h[280 + 16 * r + 4 * c..284 + 16 * r + 4 * c], srow[r][c]);
            }
        }
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(payload);
        std::fs::write(path, h).unwrap();
    }

    #[test]
    fn flipped_affine_is_reoriented() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lps.nii");
        // stored value at (i,j,k) = i + 2j + 4k
        let payload: Vec<u8> = (0..8u8).collect();
        let srow = [[-1.0, 0.0, 0.0, 10.0], [0.0, -1.0, 0.0, 20.0], [0.0, 0.0, 3.0, 30.0]];
        write_raw(&path, [2, 2, 2], DT_UINT8, srow, &payload);
        let v = read_scalar(&path).unwrap();
        assert_eq!(v.geometry().spacing, [1.0, 1.0, 3.0]);
        // canonical (0,0,0) is stored (1,1,0): world (10-1, 20-1, 30)
        assert_eq!(v.geometry().origin, [9.0, 19.0, 30.0]);
        // by hand: canonical (i,j,k) <- stored (1-i, 1-j, k)
        let expected: Vec<f32> = (0..8)
            .map(|idx| {
                let (i, j, k) = (idx % 2, (idx / 2) % 2, idx / 4);
                ((1 - i) + 2 * (1 - j) + 4 * k) as f32
            })
            .collect();
        assert_eq!(v.data(), expected.as_slice());
        let full = read_nifti(&path).unwrap();
        assert_eq!(full.orientation.flipped, [true, true, false]);
    }

    #[test]
    fn permuted_axes_are_reoriented() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("perm.nii");
        // stored axis 0 -> world y, stored axis 1 -> world x
        let payload: Vec<u8> = (0..6u8).collect(); // stored size (3,2,1)
        let srow = [[0.0, 2.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        write_raw(&path, [3, 2, 1], DT_UINT8, srow, &payload);
        let v = read_scalar(&path).unwrap();
        assert_eq!(v.size(), [2, 3, 1]);
        assert_eq!(v.geometry().spacing, [2.0, 1.0, 1.0]);
        // canonical (i, j) <- stored (j, i)
        for j in 0..3 {
            for i in 0..2 {
                assert_eq!(v.get(i, j, 0), (j + 3 * i) as f32);
            }
        }
    }

    #[test]
    fn sheared_affine_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shear.nii");
        let srow = [[1.0, 0.5, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        write_raw(&path, [2, 2, 2], DT_UINT8, srow, &[0; 8]);
        match read_nifti(&path) {
            Err(Error::Orientation { path: p, .. }) => assert!(p.ends_with("shear.nii")),
            other => panic!("expected orientation error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.nii");
        std::fs::write(&path, vec![0u8; 200]).unwrap();
        assert!(matches!(read_nifti(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("magic.nii");
        let srow = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        write_raw(&path, [1, 1, 1], DT_UINT8, srow, &[0]);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[344] = b'x';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_nifti(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn unsupported_datatype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u16.nii");
        let srow = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        write_raw(&path, [1, 1, 1], 512, srow, &[0, 0]);
        assert!(matches!(read_nifti(&path), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn int16_with_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i16.nii");
        let srow = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let mut payload = vec![0u8; 4];
        LittleEndian::write_i16(&mut payload[0..2], -100);
        LittleEndian::write_i16(&mut payload[2..4], 250);
        write_raw(&path, [2, 1, 1], DT_INT16, srow, &payload);
        let mut bytes = std::fs::read(&path).unwrap();
        LittleEndian::write_f32(&mut bytes[112..116], 2.0);
        LittleEndian::write_f32(&mut bytes[116..120], -1.0);
        std::fs::write(&path, bytes).unwrap();
        let v = read_scalar(&path).unwrap();
        assert_eq!(v.data(), &[-201.0, 499.0]);
    }

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.nii");
        let g = ImageGeometry::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        write_nifti(&ScalarVolume::filled(g, 0.0), &path).unwrap();
        match read_nifti(&path).unwrap().data {
            VolumeData::Scalar(v) => {
                assert_eq!(v.data().len(), 64);
                assert!(v.data().iter().all(|&x| x == 0.0));
                assert_eq!(v.geometry().spacing, [1.0; 3]);
            }
            other => panic!("expected scalar volume, got {other:?}"),
        }
    }

    #[test]
    fn spacing_survives_gzip_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ct.nii.gz");
        let g = ImageGeometry::new([3, 3, 2], [0.98, 0.98, 3.0], [-12.5, 40.25, 100.0]).unwrap();
        let data: Vec<f32> = (0..18).map(|i| i as f32 * 0.37 - 2.0).collect();
        let v = ScalarVolume::new(g, data).unwrap();
        write_nifti(&v, &path).unwrap();
        let back = read_scalar(&path).unwrap();
        for a in 0..3 {
            assert_eq!(back.geometry().spacing[a], g.spacing[a] as f32 as f64);
            assert_eq!(back.geometry().origin[a], g.origin[a] as f32 as f64);
        }
        assert_eq!(back.data(), v.data());
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("label.nii.gz");
        let g = ImageGeometry::new([3, 2, 2], [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
        let labels = vec![0, 1, 2, 0, 0, 1, 2, 2, 0, 1, 0, 0];
        let v = LabelVolume::new(g, labels).unwrap();
        write_nifti(&v, &path).unwrap();
        assert_eq!(read_labels(&path).unwrap(), v);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing_dir").join("out.nii");
        let g = ImageGeometry::new([1, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        assert!(matches!(
            write_nifti(&ScalarVolume::filled(g, 1.0), &path),
            Err(Error::Io { .. })
        ));
    }
}
