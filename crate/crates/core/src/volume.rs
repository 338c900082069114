//! Volumetric grid types shared by every stage of the pipeline.
//!
//! All grids store voxels x-fastest: the linear index of `(i, j, k)` is
//! `i + nx * (j + ny * k)`. Voxel indices are zero-based and the affine maps
//! the homogeneous index `(i, j, k, 1)` to world millimetres.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("degenerate dimensions {0:?}")]
    DegenerateDims([usize; 3]),
    #[error("voxel spacing must be positive and finite, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("affine is not invertible or its last row is not (0, 0, 0, 1)")]
    NonInvertibleAffine,
    #[error("expected {expected} voxels, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("grid dimensions differ: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
}

/// Homogeneous 4x4 voxel-to-world transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine(pub [[f64; 4]; 4]);

impl Affine {
    pub fn identity() -> Self {
        Self::diagonal([1.0, 1.0, 1.0])
    }

    pub fn diagonal(spacing: [f64; 3]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (r, s) in spacing.iter().enumerate() {
            m[r][r] = *s;
        }
        m[3][3] = 1.0;
        Affine(m)
    }

    pub fn with_translation(mut self, t: [f64; 3]) -> Self {
        for (r, v) in t.iter().enumerate() {
            self.0[r][3] = *v;
        }
        self
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
        }
        out
    }

    pub fn compose(&self, rhs: &Affine) -> Affine {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.0[r][k] * rhs.0[k][c]).sum();
            }
        }
        Affine(out)
    }

    fn last_row_ok(&self) -> bool {
        self.0[3] == [0.0, 0.0, 0.0, 1.0]
    }

    fn linear_det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_invertible(&self) -> bool {
        let det = self.linear_det();
        self.last_row_ok() && det.is_finite() && det.abs() > 1e-12
    }

    pub fn inverse(&self) -> Result<Affine, GridError> {
        if !self.is_invertible() {
            return Err(GridError::NonInvertibleAffine);
        }
        let m = &self.0;
        let det = self.linear_det();
        let mut inv = [[0.0; 4]; 4];
        // adjugate of the 3x3 linear block
        inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
        inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
        inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
        inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
        inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
        inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
        inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
        inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
        inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
        for r in 0..3 {
            inv[r][3] = -(inv[r][0] * m[0][3] + inv[r][1] * m[1][3] + inv[r][2] * m[2][3]);
        }
        inv[3][3] = 1.0;
        Ok(Affine(inv))
    }

    pub fn max_abs_diff(&self, other: &Affine) -> f64 {
        let mut d: f64 = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                d = d.max((self.0[r][c] - other.0[r][c]).abs());
            }
        }
        d
    }
}

/// A sampling lattice: extents, voxel size and placement in world space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub affine: Affine,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Affine) -> Result<Self, GridError> {
        if dims.contains(&0) {
            return Err(GridError::DegenerateDims(dims));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(GridError::BadSpacing(spacing));
        }
        if !affine.is_invertible() {
            return Err(GridError::NonInvertibleAffine);
        }
        Ok(Self { dims, spacing, affine })
    }

    /// Axis-aligned grid with the given spacing and the origin at voxel (0,0,0).
    pub fn isotropic(dims: [usize; 3], spacing: f64) -> Self {
        let s = [spacing; 3];
        Self::new(dims, s, Affine::diagonal(s)).expect("valid isotropic grid")
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }
}

/// Scalar intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: GridSpec,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(grid: GridSpec, data: Vec<f64>) -> Result<Self, GridError> {
        if data.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                actual: data.len(),
            });
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: GridSpec, value: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            data: vec![value; n],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.grid.affine
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, j, k)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Maps intensities through `f`, keeping the grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Binary label grid aligned with a [`GridSpec`]. Each element is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3D {
    grid: GridSpec,
    bits: Vec<u8>,
}

// GridSpec holds f64s; masks compare bit-exactly on the grid anyway.
impl Eq for GridSpec {}

impl Mask3D {
    pub fn empty(grid: GridSpec) -> Self {
        let n = grid.len();
        Self { grid, bits: vec![0; n] }
    }

    /// Builds a mask from arbitrary bytes: any non-zero entry becomes 1.
    pub fn from_bits(grid: GridSpec, bits: Vec<u8>) -> Result<Self, GridError> {
        if bits.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                actual: bits.len(),
            });
        }
        let bits = bits.into_iter().map(|b| u8::from(b != 0)).collect();
        Ok(Self { grid, bits })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = grid.dims;
        let mut bits = Vec::with_capacity(grid.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    bits.push(u8::from(f(i, j, k)));
                }
            }
        }
        Self { grid, bits }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.grid.index(i, j, k)] != 0
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.grid.index(i, j, k);
        self.bits[idx] = u8::from(v);
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    /// Treats the mask as a 0/1 intensity volume.
    pub fn to_volume(&self) -> Volume {
        Volume {
            grid: self.grid.clone(),
            data: self.bits.iter().map(|&b| f64::from(b)).collect(),
        }
    }

    /// Voxels strictly above `threshold`.
    pub fn threshold(vol: &Volume, threshold: f64) -> Self {
        Self {
            grid: vol.grid().clone(),
            bits: vol.data().iter().map(|&v| u8::from(v > threshold)).collect(),
        }
    }
}
