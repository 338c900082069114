//! NIfTI-1 single-file (`.nii` / `.nii.gz`) reading and writing.
//!
//! Only the subset needed by the pipeline is supported: 3D volumes stored as
//! unsigned 8-bit, signed 16-bit, 32-bit float or 64-bit float. Files are read
//! in either byte order and always written little-endian. Extension blocks are
//! skipped on read and never written.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::volume::{Affine, GridError, GridSpec, Mask3D, Volume};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const VOX_OFFSET: usize = 352;
pub const MAGIC_SINGLE_FILE: &[u8; 4] = b"n+1\0";

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("not a single-file NIfTI-1 stream")]
    BadMagic,
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("voxel payload truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("degenerate dimensions {0:?}")]
    DegenerateDims(Vec<i16>),
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error("value {value} is not representable as {datatype:?}")]
    NotRepresentable { value: f64, datatype: Datatype },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Voxel storage types in the supported subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    F32,
    F64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self, NiftiError> {
        match code {
            2 => Ok(Datatype::U8),
            4 => Ok(Datatype::I16),
            16 => Ok(Datatype::F32),
            64 => Ok(Datatype::F64),
            other => Err(NiftiError::UnsupportedDatatype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn gunzip(bytes: &[u8]) -> Result<Vec<u8>, NiftiError> {
    let mut out = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|source| NiftiError::Io {
            path: "<gzip stream>".into(),
            source,
        })?;
    Ok(out)
}

/// Decodes a NIfTI-1 byte stream (optionally gzip-compressed).
pub fn load_nifti(bytes: &[u8]) -> Result<Volume, NiftiError> {
    if is_gzip(bytes) {
        let raw = gunzip(bytes)?;
        return load_raw(&raw);
    }
    load_raw(bytes)
}

fn load_raw(bytes: &[u8]) -> Result<Volume, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::BadMagic);
    }
    if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        decode::<LittleEndian>(bytes)
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        decode::<BigEndian>(bytes)
    } else {
        Err(NiftiError::BadMagic)
    }
}

fn read_f32s<E: ByteOrder>(bytes: &[u8], offset: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| f64::from(E::read_f32(&bytes[offset + 4 * i..])))
        .collect()
}

fn decode<E: ByteOrder>(bytes: &[u8]) -> Result<Volume, NiftiError> {
    if &bytes[344..348] != MAGIC_SINGLE_FILE {
        return Err(NiftiError::BadMagic);
    }

    let dim: Vec<i16> = (0..8).map(|i| E::read_i16(&bytes[40 + 2 * i..])).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(NiftiError::DegenerateDims(dim));
    }
    let ndim = ndim as usize;
    if dim[1..=ndim].iter().any(|&d| d <= 0) {
        return Err(NiftiError::DegenerateDims(dim));
    }
    if dim[4..=ndim.max(3)].iter().any(|&d| d > 1) {
        return Err(NiftiError::BadHeader(format!(
            "only 3D volumes are supported, dim = {dim:?}"
        )));
    }
    let extent = |axis: usize| if axis <= ndim { dim[axis] as usize } else { 1 };
    let dims = [extent(1), extent(2), extent(3)];

    let datatype = Datatype::from_code(E::read_i16(&bytes[70..72]))?;
    let pixdim = read_f32s::<E>(bytes, 76, 8);
    let vox_offset = E::read_f32(&bytes[108..112]);
    if !(vox_offset.is_finite() && vox_offset >= VOX_OFFSET as f32) {
        return Err(NiftiError::BadHeader(format!("vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let scl_slope = f64::from(E::read_f32(&bytes[112..116]));
    let scl_inter = f64::from(E::read_f32(&bytes[116..120]));

    let mut spacing = [1.0; 3];
    for (d, s) in spacing.iter_mut().enumerate() {
        let p = pixdim[d + 1].abs();
        // unused trailing axes may carry a zero pixdim
        *s = if d >= ndim && (p.is_nan() || p <= 0.0) { 1.0 } else { p };
        if !(s.is_finite() && *s > 0.0) {
            return Err(NiftiError::BadHeader(format!("pixdim {pixdim:?}")));
        }
    }

    let qform_code = E::read_i16(&bytes[252..254]);
    let sform_code = E::read_i16(&bytes[254..256]);
    let affine = if sform_code > 0 {
        let srow = read_f32s::<E>(bytes, 280, 12);
        Affine([
            [srow[0], srow[1], srow[2], srow[3]],
            [srow[4], srow[5], srow[6], srow[7]],
            [srow[8], srow[9], srow[10], srow[11]],
            [0.0, 0.0, 0.0, 1.0],
        ])
    } else if qform_code > 0 {
        let q = read_f32s::<E>(bytes, 256, 6);
        quaternion_affine([q[0], q[1], q[2]], [q[3], q[4], q[5]], spacing, pixdim[0])
    } else {
        Affine::diagonal(spacing)
    };

    let n = dims[0] * dims[1] * dims[2];
    let needed = n * datatype.size();
    let available = bytes.len().saturating_sub(vox_offset);
    if available < needed {
        return Err(NiftiError::Truncated {
            expected: needed,
            actual: available,
        });
    }
    let payload = &bytes[vox_offset..vox_offset + needed];
    let mut data: Vec<f64> = match datatype {
        Datatype::U8 => payload.iter().map(|&b| f64::from(b)).collect(),
        Datatype::I16 => payload.chunks_exact(2).map(|c| f64::from(E::read_i16(c))).collect(),
        Datatype::F32 => payload.chunks_exact(4).map(|c| f64::from(E::read_f32(c))).collect(),
        Datatype::F64 => payload.chunks_exact(8).map(E::read_f64).collect(),
    };
    if scl_slope != 0.0 && scl_slope.is_finite() && scl_inter.is_finite() && (scl_slope != 1.0 || scl_inter != 0.0) {
        for v in &mut data {
            *v = scl_slope * *v + scl_inter;
        }
    }

    let grid = GridSpec::new(dims, spacing, affine)?;
    Ok(Volume::new(grid, data)?)
}

/// Voxel-to-world transform from the qform quaternion representation.
fn quaternion_affine(bcd: [f64; 3], offset: [f64; 3], spacing: [f64; 3], qfac: f64) -> Affine {
    let [b, c, d] = bcd;
    let mut a = 1.0 - (b * b + c * c + d * d);
    let (mut b, mut c, mut d) = (b, c, d);
    if a < 1e-7 {
        // a is 0 and (b, c, d) should be normalised
        let norm = 1.0 / (b * b + c * c + d * d).sqrt();
        b *= norm;
        c *= norm;
        d *= norm;
        a = 0.0;
    } else {
        a = a.sqrt();
    }
    let qfac = if qfac < 0.0 { -1.0 } else { 1.0 };
    let [dx, dy, dz] = spacing;
    let dz = dz * qfac;
    let r = [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        ],
    ];
    Affine([
        [r[0][0] * dx, r[0][1] * dy, r[0][2] * dz, offset[0]],
        [r[1][0] * dx, r[1][1] * dy, r[1][2] * dz, offset[1]],
        [r[2][0] * dx, r[2][1] * dy, r[2][2] * dz, offset[2]],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

fn write_header(grid: &GridSpec, datatype: Datatype) -> Vec<u8> {
    type E = LittleEndian;
    let mut h = vec![0u8; VOX_OFFSET];
    E::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for d in 0..3 {
        dim[d + 1] = grid.dims[d] as i16;
    }
    for (i, v) in dim.iter().enumerate() {
        E::write_i16(&mut h[40 + 2 * i..], *v);
    }
    E::write_i16(&mut h[70..72], datatype.code());
    E::write_i16(&mut h[72..74], (datatype.size() * 8) as i16);
    let mut pixdim = [0f32; 8];
    pixdim[0] = 1.0;
    for d in 0..3 {
        pixdim[d + 1] = grid.spacing[d] as f32;
    }
    for (i, v) in pixdim.iter().enumerate() {
        E::write_f32(&mut h[76 + 4 * i..], *v);
    }
    E::write_f32(&mut h[108..112], VOX_OFFSET as f32);
    E::write_f32(&mut h[112..116], 1.0);
    E::write_f32(&mut h[116..120], 0.0);
    // sform_code 1: scanner-based anatomical coordinates
    E::write_i16(&mut h[254..256], 1);
    for r in 0..3 {
        for c in 0..4 {
            E::write_f32(&mut h[280 + 16 * r + 4 * c..], grid.affine.0[r][c] as f32);
        }
    }
    h[344..348].copy_from_slice(MAGIC_SINGLE_FILE);
    h
}

/// Encodes a volume with the requested storage type.
///
/// Values that the datatype cannot hold exactly (fractions or out-of-range
/// numbers for integer types) are rejected rather than rounded.
pub fn save_volume_as(vol: &Volume, datatype: Datatype) -> Result<Vec<u8>, NiftiError> {
    let mut out = write_header(vol.grid(), datatype);
    out.reserve(vol.data().len() * datatype.size());
    let bad = |value: f64| NiftiError::NotRepresentable { value, datatype };
    let mut buf = [0u8; 8];
    for &v in vol.data() {
        match datatype {
            Datatype::U8 => {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(bad(v));
                }
                out.push(v as u8);
            }
            Datatype::I16 => {
                if v.fract() != 0.0 || !(-32768.0..=32767.0).contains(&v) {
                    return Err(bad(v));
                }
                LittleEndian::write_i16(&mut buf, v as i16);
                out.extend_from_slice(&buf[..2]);
            }
            Datatype::F32 => {
                LittleEndian::write_f32(&mut buf, v as f32);
                out.extend_from_slice(&buf[..4]);
            }
            Datatype::F64 => {
                LittleEndian::write_f64(&mut buf, v);
                out.extend_from_slice(&buf);
            }
        }
    }
    Ok(out)
}

/// Encodes a volume as 64-bit float, which holds every intensity exactly.
pub fn save_volume(vol: &Volume) -> Vec<u8> {
    save_volume_as(vol, Datatype::F64).expect("f64 holds every value")
}

/// Encodes a mask as unsigned 8-bit with identity scaling.
pub fn save_mask(mask: &Mask3D) -> Vec<u8> {
    let mut out = write_header(mask.grid(), Datatype::U8);
    out.extend_from_slice(mask.bits());
    out
}

/// Decodes a label file: every non-zero voxel becomes 1.
pub fn load_mask(bytes: &[u8]) -> Result<Mask3D, NiftiError> {
    let vol = load_nifti(bytes)?;
    let bits = vol.data().iter().map(|&v| u8::from(v != 0.0)).collect();
    Ok(Mask3D::from_bits(vol.grid().clone(), bits)?)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NiftiError + '_ {
    move |source| NiftiError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn is_gz_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), NiftiError> {
    if is_gz_path(path) {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(io_err(path))?;
        enc.finish().map_err(io_err(path))?;
        Ok(())
    } else {
        fs::write(path, bytes).map_err(io_err(path))
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume, NiftiError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    load_nifti(&bytes)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask3D, NiftiError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    load_mask(&bytes)
}

/// Writes a volume; a `.gz` extension selects gzip compression.
pub fn write_volume(path: impl AsRef<Path>, vol: &Volume) -> Result<(), NiftiError> {
    write_bytes(path.as_ref(), &save_volume(vol))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask3D) -> Result<(), NiftiError> {
    write_bytes(path.as_ref(), &save_mask(mask))
}
