//! Promptable 2D segmentation: the backend contract, candidate resolution and
//! the available backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{PromptError, PromptSet};
use crate::slicing::{Mask2D, SliceImage};

pub mod protocol;
pub mod reference;
pub mod rle;

pub use protocol::{ProcessBackend, WireRequest, WireResponse};
pub use reference::{reference_segment, ReferenceBackend, ReferenceBackendConfig};
pub use rle::{rle_decode, rle_encode, RleError};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("prompt set has no inclusion points")]
    EmptyPromptSet,
    #[error(transparent)]
    InvalidPrompt(#[from] PromptError),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("backend did not answer within {0:?}")]
    Timeout(Duration),
}

/// One mask proposal with the backend's confidence in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub mask: Mask2D,
    pub score: f64,
}

/// A promptable 2D segmenter.
///
/// Implementations may hold a serial channel to an external process, hence
/// `&mut self`; parallel callers use one instance per worker.
pub trait Segmenter: Send {
    /// Human-readable identity recorded in run metadata.
    fn identity(&self) -> String;

    fn predict(&mut self, slice: &SliceImage, prompts: &PromptSet) -> Result<Vec<Candidate>, SegmentError>;
}

impl<S: Segmenter + ?Sized> Segmenter for Box<S> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn predict(&mut self, slice: &SliceImage, prompts: &PromptSet) -> Result<Vec<Candidate>, SegmentError> {
        (**self).predict(slice, prompts)
    }
}

/// Index of the highest-scoring candidate covering at least half of the
/// inclusion points, else of the highest score outright. Ties keep the
/// earlier candidate.
pub fn select_candidate(candidates: &[Candidate], inclusions: &[(usize, usize)]) -> Option<usize> {
    let argmax = |pred: &dyn Fn(&Candidate) -> bool| {
        candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| pred(c))
            .fold(None, |best: Option<(usize, f64)>, (i, c)| match best {
                Some((_, s)) if s >= c.score => best,
                _ => Some((i, c.score)),
            })
            .map(|(i, _)| i)
    };
    let covers_half = |c: &Candidate| {
        let covered = inclusions
            .iter()
            .filter(|&&(x, y)| x < c.mask.width && y < c.mask.height && c.mask.get(x, y))
            .count();
        2 * covered >= inclusions.len()
    };
    argmax(&covers_half).or_else(|| argmax(&|_| true))
}

/// Runs `backend` on one slice and reduces its proposals to a single mask,
/// cleared outside the prompt box.
pub fn segment(slice: &SliceImage, prompts: &PromptSet, backend: &mut dyn Segmenter) -> Result<Mask2D, SegmentError> {
    if prompts.inclusions.is_empty() {
        return Err(SegmentError::EmptyPromptSet);
    }
    prompts.validate(slice.width, slice.height)?;
    let candidates = backend.predict(slice, prompts)?;
    let chosen = select_candidate(&candidates, &prompts.inclusions)
        .ok_or_else(|| SegmentError::ProtocolError("backend returned no candidates".into()))?;
    let mut mask = candidates.into_iter().nth(chosen).expect("index in range").mask;
    if (mask.width, mask.height) != (slice.width, slice.height) {
        return Err(SegmentError::ProtocolError(format!(
            "candidate is {}x{}, slice is {}x{}",
            mask.width, mask.height, slice.width, slice.height
        )));
    }
    let b = prompts.bbox;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !b.contains(x, y) {
                mask.set(x, y, false);
            }
        }
    }
    Ok(mask)
}

/// How to obtain a segmenter; each pipeline worker builds its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    Reference(ReferenceBackendConfig),
    /// An external program speaking the JSON-lines protocol on stdio.
    ExternalProcess {
        command: Vec<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
    },
}

fn default_timeout_secs() -> f64 {
    protocol::DEFAULT_TIMEOUT.as_secs_f64()
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Reference(ReferenceBackendConfig::default())
    }
}

impl BackendSpec {
    pub fn build(&self) -> Result<Box<dyn Segmenter>, SegmentError> {
        match self {
            BackendSpec::Reference(cfg) => Ok(Box::new(ReferenceBackend::new(cfg.clone()))),
            BackendSpec::ExternalProcess { command, timeout_secs } => {
                let timeout = Duration::try_from_secs_f64(*timeout_secs)
                    .map_err(|e| SegmentError::BackendUnavailable(format!("bad timeout {timeout_secs}: {e}")))?;
                Ok(Box::new(ProcessBackend::spawn(command, timeout)?))
            }
        }
    }

    /// Identity string without spawning anything.
    pub fn identity(&self) -> String {
        match self {
            BackendSpec::Reference(cfg) => ReferenceBackend::new(cfg.clone()).identity(),
            BackendSpec::ExternalProcess { command, .. } => {
                format!("external-process({})", command.join(" "))
            }
        }
    }

    /// Report label for the pipeline arm this backend drives.
    pub fn tool_label(&self) -> &'static str {
        match self {
            BackendSpec::Reference(_) => "reference-pipeline",
            BackendSpec::ExternalProcess { .. } => "sam-pipeline",
        }
    }
}
