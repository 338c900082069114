//! Run configuration: a JSON file whose fields command-line flags override.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sambx_core::{BaselineConfig, PhantomSpec, PipelineConfig};
use serde::{Deserialize, Serialize};
use serde_with::{DeserializeFromStr, SerializeDisplay};
use sha2::{Digest, Sha256};

/// Where the resampling lattice comes from: `"native"` or a template path.
#[derive(Debug, Clone, PartialEq, Default, SerializeDisplay, DeserializeFromStr)]
pub enum Target {
    #[default]
    Native,
    Template(PathBuf),
}

impl std::str::FromStr for Target {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s == "native" {
            Target::Native
        } else {
            Target::Template(PathBuf::from(s))
        })
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Native => f.write_str("native"),
            Target::Template(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Ground truth for scoring: a mask file, or `"template-mask"` for the
/// template itself with nonzero voxels as brain.
#[derive(Debug, Clone, PartialEq, SerializeDisplay, DeserializeFromStr)]
pub enum GroundTruth {
    TemplateMask,
    Path(PathBuf),
}

impl std::str::FromStr for GroundTruth {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s == "template-mask" {
            GroundTruth::TemplateMask
        } else {
            GroundTruth::Path(PathBuf::from(s))
        })
    }
}

impl fmt::Display for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundTruth::TemplateMask => f.write_str("template-mask"),
            GroundTruth::Path(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    /// Used instead of `input` when set.
    pub phantom: Option<PhantomSpec>,
    pub target: Target,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub baseline: BaselineConfig,
    pub ground_truth: Option<GroundTruth>,
    pub manual_prompts: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            phantom: None,
            target: Target::Native,
            pipeline: PipelineConfig::default(),
            baseline: BaselineConfig::default(),
            ground_truth: None,
            manual_prompts: None,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Checks invariants and that every referenced path exists.
    pub fn validate(&self, needs_input: bool) -> Result<()> {
        if needs_input && self.input.is_none() && self.phantom.is_none() {
            bail!("no input: give --input or --phantom");
        }
        let exists = |what: &str, p: &Path| -> Result<()> {
            if !p.exists() {
                bail!("{what} not found: {}", p.display());
            }
            Ok(())
        };
        if self.phantom.is_none() {
            if let Some(p) = &self.input {
                exists("input", p)?;
            }
        }
        if let Target::Template(p) = &self.target {
            exists("target template", p)?;
        }
        match &self.ground_truth {
            Some(GroundTruth::Path(p)) => exists("ground truth", p)?,
            Some(GroundTruth::TemplateMask) if self.target == Target::Native => {
                bail!("ground truth \"template-mask\" needs a template target")
            }
            _ => {}
        }
        if let Some(p) = &self.manual_prompts {
            exists("manual prompts", p)?;
        }
        self.pipeline.validate()?;
        self.baseline.validate()?;
        Ok(())
    }

    /// Canonical JSON used for hashing and for `run.json`.
    pub fn canonical(&self) -> serde_json::Value {
        // round-trip through Value sorts object keys
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical config without the output directory, so
    /// reruns elsewhere hash the same.
    pub fn hash(&self) -> String {
        let mut v = self.canonical();
        v.as_object_mut().expect("object").remove("out");
        let bytes = serde_json::to_vec(&v).expect("value serializes");
        hex(&Sha256::digest(&bytes))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sambx_core::{Axis, BackendSpec};

    #[test]
    fn flat_json_round_trip() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{
                "input": "scan.nii.gz",
                "target": "native",
                "axis": "coronal",
                "parallelism": 4,
                "prompt": {"margin": 5},
                "backend": {"kind": "external-process", "command": ["python3", "sam.py"]},
                "baseline": {"f": 0.3, "mode": "external", "executable_path": "/usr/bin/bet"},
                "ground_truth": "template-mask"
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.pipeline.axis, Axis::Coronal);
        assert_eq!(cfg.pipeline.parallelism, 4);
        assert_eq!(cfg.pipeline.prompt.margin, 5);
        assert_eq!(cfg.pipeline.prompt.k_inc, 5);
        assert!(matches!(cfg.pipeline.backend, BackendSpec::ExternalProcess { .. }));
        assert_eq!(cfg.ground_truth, Some(GroundTruth::TemplateMask));
        assert_eq!(cfg.target, Target::Native);
        let again: RunConfig = serde_json::from_value(cfg.canonical()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn template_target() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"target": "/data/mni.nii.gz", "ground_truth": "gt.nii"}"#).unwrap();
        assert_eq!(cfg.target, Target::Template("/data/mni.nii.gz".into()));
        assert_eq!(cfg.ground_truth, Some(GroundTruth::Path("gt.nii".into())));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.pipeline.prompt.k_exc = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let moved = RunConfig {
            out: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(moved.hash(), a.hash());
    }

    #[test]
    fn template_mask_needs_template() {
        let cfg = RunConfig {
            phantom: Some(PhantomSpec::default()),
            ground_truth: Some(GroundTruth::TemplateMask),
            ..Default::default()
        };
        assert!(cfg.validate(true).is_err());
    }
}
