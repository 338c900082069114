//! Synthetic head phantoms with analytic ground truth.
//!
//! A phantom is a nest of concentric ellipsoids evaluated at voxel centres:
//! brain, a background-intensity gap, a skull shell and a scalp shell, plus an
//! optional lesion ellipsoid. Ground truth is brain plus lesion. Noise is
//! additive Gaussian from xoshiro256++ seeded through splitmix64
//! (`Xoshiro256PlusPlus::seed_from_u64`), drawn in storage order and clamped
//! at zero.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Affine, GridSpec, Mask3D, Volume};

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("phantom geometry does not fit: {0}")]
    SpecOutOfBounds(String),
    #[error("invalid phantom parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TissueIntensities {
    pub background: f64,
    pub brain: f64,
    pub skull: f64,
    pub scalp: f64,
}

impl Default for TissueIntensities {
    fn default() -> Self {
        Self {
            background: 0.0,
            brain: 100.0,
            skull: 200.0,
            scalp: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    /// Voxel coordinates of the lesion centre.
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    #[serde(default = "default_lesion_intensity")]
    pub intensity: f64,
}

fn default_lesion_intensity() -> f64 {
    160.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    /// Brain semi-axes in voxels.
    pub semi_axes: [f64; 3],
    /// Centre in voxel coordinates; the grid centre when absent.
    pub center: Option<[f64; 3]>,
    /// Gap between brain and skull, in voxels.
    pub skull_offset: f64,
    pub skull_thickness: f64,
    pub scalp_thickness: f64,
    pub intensities: TissueIntensities,
    pub lesion: Option<Lesion>,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Isotropic voxel size in millimetres.
    pub spacing: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [96, 96, 96],
            semi_axes: [30.0, 36.0, 28.0],
            center: None,
            skull_offset: 2.0,
            skull_thickness: 3.0,
            scalp_thickness: 2.0,
            intensities: TissueIntensities::default(),
            lesion: None,
            noise_sigma: 0.0,
            seed: 0,
            spacing: 1.0,
        }
    }
}

impl PhantomSpec {
    /// Default geometry scaled to a cubic grid of side `n`.
    pub fn scaled(n: usize) -> Self {
        let base = Self::default();
        let k = n as f64 / base.dims[0] as f64;
        Self {
            dims: [n; 3],
            semi_axes: base.semi_axes.map(|a| a * k),
            ..base
        }
    }

    pub fn center_voxel(&self) -> [f64; 3] {
        self.center.unwrap_or_else(|| self.dims.map(|n| (n as f64 - 1.0) / 2.0))
    }

    /// Adds a spherical lesion just inside the brain surface on the +x side.
    pub fn with_surface_lesion(mut self) -> Self {
        let c = self.center_voxel();
        let radius = (self.semi_axes[0] * 0.15).max(2.0);
        let depth = radius + (self.semi_axes[0] * 0.08).max(2.0);
        self.lesion = Some(Lesion {
            center: [c[0] + self.semi_axes[0] - depth, c[1], c[2]],
            semi_axes: [radius; 3],
            intensity: default_lesion_intensity(),
        });
        self
    }

    pub fn grid(&self) -> GridSpec {
        let s = [self.spacing; 3];
        GridSpec::new(self.dims, s, Affine::diagonal(s)).expect("validated phantom grid")
    }

    fn outer_semi_axes(&self) -> [f64; 3] {
        let grow = self.skull_offset + self.skull_thickness + self.scalp_thickness;
        self.semi_axes.map(|a| a + grow)
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.dims.contains(&0) {
            return Err(PhantomError::Invalid(format!("dims {:?}", self.dims)));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(PhantomError::Invalid(format!("spacing {}", self.spacing)));
        }
        if self.semi_axes.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return Err(PhantomError::Invalid(format!("semi-axes {:?}", self.semi_axes)));
        }
        if !(self.skull_thickness >= 1.0 && self.scalp_thickness >= 1.0 && self.skull_offset >= 0.0) {
            return Err(PhantomError::Invalid("shell thicknesses must be at least 1".into()));
        }
        let t = &self.intensities;
        if [t.background, t.brain, t.skull, t.scalp]
            .iter()
            .any(|&v| !(v.is_finite() && v >= 0.0))
        {
            return Err(PhantomError::Invalid("intensities must be non-negative".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(PhantomError::Invalid(format!("noise sigma {}", self.noise_sigma)));
        }
        let c = self.center_voxel();
        let fits = |center: [f64; 3], semi: [f64; 3]| {
            (0..3).all(|d| center[d] - semi[d] >= 0.0 && center[d] + semi[d] <= (self.dims[d] - 1) as f64)
        };
        if !fits(c, self.outer_semi_axes()) {
            return Err(PhantomError::SpecOutOfBounds(format!(
                "head with semi-axes {:?} centred at {c:?} exceeds dims {:?}",
                self.outer_semi_axes(),
                self.dims
            )));
        }
        if let Some(l) = &self.lesion {
            if l.semi_axes.iter().any(|&a| !(a.is_finite() && a > 0.0)) || l.intensity.is_nan() || l.intensity < 0.0 {
                return Err(PhantomError::Invalid("lesion semi-axes and intensity".into()));
            }
            if !fits(l.center, l.semi_axes) {
                return Err(PhantomError::SpecOutOfBounds("lesion exceeds dims".into()));
            }
            if ellipsoid(l.center, c, self.semi_axes) > 1.0 {
                return Err(PhantomError::SpecOutOfBounds(
                    "lesion centre must lie inside the brain".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Normalised ellipsoid radius squared: <= 1 inside.
#[inline]
fn ellipsoid(p: [f64; 3], c: [f64; 3], semi: [f64; 3]) -> f64 {
    (0..3).map(|d| ((p[d] - c[d]) / semi[d]).powi(2)).sum()
}

/// Tissue class at a voxel centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tissue {
    Background,
    Gap,
    Brain,
    Lesion,
    Skull,
    Scalp,
}

pub fn tissue_at(spec: &PhantomSpec, p: [f64; 3]) -> Tissue {
    let c = spec.center_voxel();
    if let Some(l) = &spec.lesion {
        if ellipsoid(p, l.center, l.semi_axes) <= 1.0 {
            return Tissue::Lesion;
        }
    }
    let a = spec.semi_axes;
    if ellipsoid(p, c, a) <= 1.0 {
        return Tissue::Brain;
    }
    let gap = spec.skull_offset;
    if ellipsoid(p, c, a.map(|x| x + gap)) <= 1.0 {
        return Tissue::Gap;
    }
    let skull = gap + spec.skull_thickness;
    if ellipsoid(p, c, a.map(|x| x + skull)) <= 1.0 {
        return Tissue::Skull;
    }
    if ellipsoid(p, c, spec.outer_semi_axes()) <= 1.0 {
        return Tissue::Scalp;
    }
    Tissue::Background
}

/// Builds the phantom volume and its ground-truth brain mask.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(Volume, Mask3D), PhantomError> {
    spec.validate()?;
    let grid = spec.grid();
    let t = &spec.intensities;
    let mut data = Vec::with_capacity(grid.len());
    let mut gt = Vec::with_capacity(grid.len());
    let [nx, ny, nz] = spec.dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let tissue = tissue_at(spec, [i as f64, j as f64, k as f64]);
                let v = match tissue {
                    Tissue::Background | Tissue::Gap => t.background,
                    Tissue::Brain => t.brain,
                    Tissue::Lesion => spec.lesion.map_or(t.brain, |l| l.intensity),
                    Tissue::Skull => t.skull,
                    Tissue::Scalp => t.scalp,
                };
                data.push(v);
                gt.push(u8::from(matches!(tissue, Tissue::Brain | Tissue::Lesion)));
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| PhantomError::Invalid(e.to_string()))?;
        for v in &mut data {
            *v = (*v + normal.sample(&mut rng)).max(0.0);
        }
    }
    let vol = Volume::new(grid.clone(), data).expect("sized to grid");
    let mask = Mask3D::from_bits(grid, gt).expect("sized to grid");
    Ok((vol, mask))
}

/// Ground-truth mask of lesion voxels only (empty without a lesion).
pub fn lesion_mask(spec: &PhantomSpec) -> Mask3D {
    let grid = spec.grid();
    match &spec.lesion {
        None => Mask3D::empty(grid),
        Some(l) => Mask3D::from_fn(grid, |i, j, k| {
            ellipsoid([i as f64, j as f64, k as f64], l.center, l.semi_axes) <= 1.0
        }),
    }
}
