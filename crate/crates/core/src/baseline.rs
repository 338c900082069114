//! The classical comparison arm: an adapter around an external BET
//! executable, and a built-in threshold-and-morphology baseline for machines
//! without one.
//!
//! The built-in method is not BET. It only borrows the meaning of BET's
//! fractional intensity threshold `f`: larger values cut more tissue.

use std::env;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::{dilate_6, erode_6, fill_holes_3d, largest_component_6};
use crate::nifti::{self, NiftiError};
use crate::slicing::{quantiles, DEFAULT_HI_PCT, DEFAULT_LO_PCT};
use crate::volume::{Mask3D, Volume};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("fractional intensity threshold must lie in (0, 1), got {0}")]
    InvalidF(f64),
    #[error("baseline executable not found: {0}")]
    ExecutableNotFound(String),
    #[error("baseline tool failed with {status}: {stderr}")]
    ToolFailed { status: String, stderr: String },
    #[error("baseline tool produced no output at {0}")]
    OutputMissing(PathBuf),
    #[error("no voxel exceeds the baseline threshold")]
    EmptyResult,
    #[error("cannot run baseline tool: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    External,
    #[default]
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Fractional intensity threshold in (0, 1).
    pub f: f64,
    pub executable_path: Option<PathBuf>,
    pub mode: BaselineMode,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            f: 0.5,
            executable_path: None,
            mode: BaselineMode::Builtin,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.f > 0.0 && self.f < 1.0) {
            return Err(BaselineError::InvalidF(self.f));
        }
        Ok(())
    }

    /// Footnote text identifying the mode and parameters of a report row.
    pub fn describe(&self) -> String {
        match self.mode {
            BaselineMode::Builtin => format!("builtin threshold baseline, f={}", self.f),
            BaselineMode::External => format!(
                "external BET ({}), f={}",
                self.executable_path
                    .as_deref()
                    .map_or("<unset>".into(), |p| p.display().to_string()),
                self.f
            ),
        }
    }
}

fn resolve_executable(path: &Path) -> Option<PathBuf> {
    if path.components().count() > 1 || path.is_absolute() {
        return path.is_file().then(|| path.to_path_buf());
    }
    let dirs = env::var_os("PATH")?;
    env::split_paths(&dirs)
        .map(|d| d.join(path))
        .find(|candidate| candidate.is_file())
}

/// Runs `<exe> <input> <workdir>/bet <-f f> -m` and loads
/// `<workdir>/bet_mask.nii.gz`.
pub fn run_external_bet(vol_path: &Path, cfg: &BaselineConfig, workdir: &Path) -> Result<Mask3D, BaselineError> {
    cfg.validate()?;
    let requested = cfg
        .executable_path
        .as_deref()
        .ok_or_else(|| BaselineError::ExecutableNotFound("<no executable configured>".into()))?;
    let exe = resolve_executable(requested)
        .ok_or_else(|| BaselineError::ExecutableNotFound(requested.display().to_string()))?;

    std::fs::create_dir_all(workdir)?;
    let prefix = workdir.join("bet");
    let output = Command::new(&exe)
        .arg(vol_path)
        .arg(&prefix)
        .arg("-f")
        .arg(cfg.f.to_string())
        .arg("-m")
        .output()?;
    if !output.status.success() {
        return Err(BaselineError::ToolFailed {
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    let mask_path = workdir.join("bet_mask.nii.gz");
    if !mask_path.is_file() {
        return Err(BaselineError::OutputMissing(mask_path));
    }
    Ok(nifti::read_mask(&mask_path)?)
}

/// `robust_min + f * (robust_max - robust_min)` over the 1% / 99% quantiles.
pub fn baseline_threshold(vol: &Volume, f: f64) -> f64 {
    let (lo, hi) = quantiles(vol.data(), DEFAULT_LO_PCT, DEFAULT_HI_PCT);
    lo + f * (hi - lo)
}

/// Voxels strictly above the `f` threshold, before any morphology.
pub fn threshold_set(vol: &Volume, f: f64) -> Mask3D {
    Mask3D::threshold(vol, baseline_threshold(vol, f))
}

/// Threshold, 6-connected opening, largest 6-connected component, hole fill.
pub fn builtin_baseline(vol: &Volume, cfg: &BaselineConfig) -> Result<Mask3D, BaselineError> {
    cfg.validate()?;
    let dims = vol.dims();
    let raw = threshold_set(vol, cfg.f);
    if raw.count() == 0 {
        return Err(BaselineError::EmptyResult);
    }
    let opened = dilate_6(&erode_6(raw.bits(), dims), dims);
    let largest = largest_component_6(&opened, dims);
    if largest.iter().all(|&b| b == 0) {
        return Err(BaselineError::EmptyResult);
    }
    let filled = fill_holes_3d(&largest, dims);
    Ok(Mask3D::from_bits(vol.grid().clone(), filled).expect("same grid"))
}

/// Dispatches on `cfg.mode`. External mode needs the volume on disk.
pub fn run_baseline(
    vol: &Volume,
    vol_path: Option<&Path>,
    cfg: &BaselineConfig,
    workdir: &Path,
) -> Result<Mask3D, BaselineError> {
    match cfg.mode {
        BaselineMode::Builtin => builtin_baseline(vol, cfg),
        BaselineMode::External => {
            let owned;
            let path = match vol_path {
                Some(p) => p,
                None => {
                    std::fs::create_dir_all(workdir)?;
                    owned = workdir.join("input.nii.gz");
                    nifti::write_volume(&owned, vol)?;
                    &owned
                }
            };
            run_external_bet(path, cfg, workdir)
        }
    }
}
