//! Conversion between volumes and stacks of windowed 8-bit slices.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{GridSpec, Mask3D, Volume};

#[derive(Debug, Error, PartialEq)]
pub enum SliceError {
    #[error("cannot compute an intensity window over an empty volume")]
    EmptyVolume,
    #[error("invalid window percentiles ({0}, {1})")]
    BadPercentiles(f64, f64),
    #[error("invalid intensity window ({0}, {1})")]
    BadWindow(f64, f64),
    #[error("expected {expected} slices along {axis}, got {actual}")]
    CountMismatch { axis: Axis, expected: usize, actual: usize },
    #[error("slice {index} is {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("unknown axis {0:?} (expected axial, coronal or sagittal)")]
    UnknownAxis(String),
}

/// Slicing plane normal. Axial slices are x-by-y planes stacked along z,
/// coronal are x-by-z along y, sagittal are y-by-z along x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[default]
    Axial,
    Coronal,
    Sagittal,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Coronal, Axis::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Axial => "axial",
            Axis::Coronal => "coronal",
            Axis::Sagittal => "sagittal",
        }
    }

    /// Grid axis index of the (in-plane x, in-plane y, stacking) directions.
    fn layout(self) -> [usize; 3] {
        match self {
            Axis::Axial => [0, 1, 2],
            Axis::Coronal => [0, 2, 1],
            Axis::Sagittal => [1, 2, 0],
        }
    }

    /// (width, height, count) of the slices this axis produces on `dims`.
    pub fn slice_shape(self, dims: [usize; 3]) -> (usize, usize, usize) {
        let [u, v, s] = self.layout();
        (dims[u], dims[v], dims[s])
    }

    /// Grid coordinates of pixel `(x, y)` on slice `index`.
    #[inline]
    pub fn voxel(self, x: usize, y: usize, index: usize) -> [usize; 3] {
        let [u, v, s] = self.layout();
        let mut p = [0; 3];
        p[u] = x;
        p[v] = y;
        p[s] = index;
        p
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = SliceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "axial" | "z" => Ok(Axis::Axial),
            "coronal" | "y" => Ok(Axis::Coronal),
            "sagittal" | "x" => Ok(Axis::Sagittal),
            _ => Err(SliceError::UnknownAxis(s.to_owned())),
        }
    }
}

/// Source-intensity bounds mapped onto pixel values 0 and 255.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn new(min: f64, max: f64) -> Result<Self, SliceError> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(SliceError::BadWindow(min, max));
        }
        Ok(Self { min, max })
    }

    /// `clamp((v - min) / (max - min), 0, 1) * 255`, rounded half-up.
    #[inline]
    pub fn pixel(&self, v: f64) -> u8 {
        let t = ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0);
        (t * 255.0 + 0.5).floor() as u8
    }
}

/// An 8-bit grayscale slice, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub axis: Axis,
    pub index: usize,
    pub pixels: Vec<u8>,
    pub window: Window,
}

impl SliceImage {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Debug-export file name, e.g. `slice_axial_0042.pgm`.
    pub fn pgm_name(&self) -> String {
        format!("slice_{}_{:04}.pgm", self.axis, self.index)
    }

    pub fn write_pgm(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::fs::File::create(dir.as_ref().join(self.pgm_name()))?;
        f.write_all(&self.to_pgm())
    }
}

/// Binary 2D mask, row-major, elements in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    pub width: usize,
    pub height: usize,
    bits: Vec<u8>,
}

impl Mask2D {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    /// Any non-zero byte becomes 1. Panics if the length is not `width * height`.
    pub fn from_bits(width: usize, height: usize, bits: Vec<u8>) -> Self {
        assert_eq!(bits.len(), width * height, "mask length");
        let bits = bits.into_iter().map(|b| u8::from(b != 0)).collect();
        Self { width, height, bits }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = u8::from(v);
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }
}

/// Nearest-rank quantile: the element at rank `floor(p * (n - 1) + 0.5)` of
/// the sorted values.
fn quantile_of_unsorted(values: &mut [f64], p: f64) -> f64 {
    let rank = (p * (values.len() - 1) as f64 + 0.5).floor() as usize;
    let rank = rank.min(values.len() - 1);
    *values.select_nth_unstable_by(rank, f64::total_cmp).1
}

/// Robust intensity window from the `lo_pct` and `hi_pct` quantiles of the
/// whole volume. A constant volume `q` yields `(q, q + 1)`.
pub fn compute_window(vol: &Volume, lo_pct: f64, hi_pct: f64) -> Result<Window, SliceError> {
    if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 1.0) {
        return Err(SliceError::BadPercentiles(lo_pct, hi_pct));
    }
    if vol.data().is_empty() {
        return Err(SliceError::EmptyVolume);
    }
    let (lo, hi) = quantiles(vol.data(), lo_pct, hi_pct);
    if lo < hi {
        Window::new(lo, hi)
    } else {
        Window::new(lo, lo + 1.0)
    }
}

/// The `lo_pct` and `hi_pct` nearest-rank quantiles of `data` (non-empty).
pub fn quantiles(data: &[f64], lo_pct: f64, hi_pct: f64) -> (f64, f64) {
    let mut values = data.to_vec();
    let lo = quantile_of_unsorted(&mut values, lo_pct);
    let hi = quantile_of_unsorted(&mut values, hi_pct);
    (lo, hi)
}

pub const DEFAULT_LO_PCT: f64 = 0.01;
pub const DEFAULT_HI_PCT: f64 = 0.99;

/// Extracts one slice.
pub fn slice_at(vol: &Volume, axis: Axis, index: usize, window: Window) -> SliceImage {
    let (width, height, _) = axis.slice_shape(vol.dims());
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let [i, j, k] = axis.voxel(x, y, index);
            pixels.push(window.pixel(vol.get(i, j, k)));
        }
    }
    SliceImage {
        width,
        height,
        axis,
        index,
        pixels,
        window,
    }
}

/// Every lattice plane along `axis`, in increasing index order.
pub fn decompose(vol: &Volume, axis: Axis, window: Window) -> Vec<SliceImage> {
    let (_, _, count) = axis.slice_shape(vol.dims());
    (0..count).map(|k| slice_at(vol, axis, k, window)).collect()
}

/// Splits a mask into its planes along `axis`.
pub fn mask_planes(mask: &Mask3D, axis: Axis) -> Vec<Mask2D> {
    let (width, height, count) = axis.slice_shape(mask.dims());
    (0..count)
        .map(|k| {
            let mut m = Mask2D::empty(width, height);
            for y in 0..height {
                for x in 0..width {
                    let [i, j, kk] = axis.voxel(x, y, k);
                    m.set(x, y, mask.get(i, j, kk));
                }
            }
            m
        })
        .collect()
}

/// Stacks per-slice masks back onto `grid`; the inverse of [`decompose`]'s
/// plane ordering.
pub fn reconstruct(masks: &[Mask2D], axis: Axis, grid: &GridSpec) -> Result<Mask3D, SliceError> {
    let (width, height, count) = axis.slice_shape(grid.dims);
    if masks.len() != count {
        return Err(SliceError::CountMismatch {
            axis,
            expected: count,
            actual: masks.len(),
        });
    }
    let mut out = Mask3D::empty(grid.clone());
    for (k, m) in masks.iter().enumerate() {
        if (m.width, m.height) != (width, height) {
            return Err(SliceError::ShapeMismatch {
                index: k,
                expected: (width, height),
                actual: (m.width, m.height),
            });
        }
        for y in 0..height {
            for x in 0..width {
                if m.get(x, y) {
                    let [i, j, kk] = axis.voxel(x, y, k);
                    out.set(i, j, kk, true);
                }
            }
        }
    }
    Ok(out)
}
