//! End-to-end extraction: decompose, prompt, segment per slice, reconstruct.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{segment, BackendSpec, SegmentError, Segmenter};
use crate::prompt::{generate_prompts, PromptConfig, PromptError, PromptFile, PromptSet};
use crate::slicing::{
    compute_window, decompose, reconstruct, Axis, Mask2D, SliceError, SliceImage, Window, DEFAULT_HI_PCT,
    DEFAULT_LO_PCT,
};
use crate::volume::{Mask3D, Volume};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("slice {index}: {source}")]
    Segment {
        index: usize,
        #[source]
        source: SegmentError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub axis: Axis,
    pub lo_pct: f64,
    pub hi_pct: f64,
    pub prompt: PromptConfig,
    pub backend: BackendSpec,
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            axis: Axis::Axial,
            lo_pct: DEFAULT_LO_PCT,
            hi_pct: DEFAULT_HI_PCT,
            prompt: PromptConfig::default(),
            backend: BackendSpec::default(),
            parallelism: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.parallelism < 1 {
            return Err(PipelineError::Config("parallelism must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lo_pct) || !(0.0..=1.0).contains(&self.hi_pct) || self.lo_pct >= self.hi_pct {
            return Err(PipelineError::Config(format!(
                "window percentiles must satisfy 0 <= lo < hi <= 1, got {} and {}",
                self.lo_pct, self.hi_pct
            )));
        }
        self.prompt.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub decompose_s: f64,
    pub prompts_s: f64,
    pub segment_s: f64,
    pub reconstruct_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub mask: Mask3D,
    pub prompts: PromptFile,
    pub window: Window,
    pub timings: Timings,
    pub backend_identity: String,
    /// Slices that were sent to the backend.
    pub segmented: usize,
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Runs the pipeline on `vol`. With `manual` prompts, only the slices listed
/// there are segmented and prompt generation is skipped.
pub fn extract(vol: &Volume, cfg: &PipelineConfig, manual: Option<&PromptFile>) -> Result<Extraction, PipelineError> {
    cfg.validate()?;
    let start = Instant::now();

    let window = compute_window(vol, cfg.lo_pct, cfg.hi_pct)?;
    let slices = decompose(vol, cfg.axis, window);
    let t_decompose = start.elapsed();

    let t = Instant::now();
    let slots = match manual {
        Some(file) => {
            if file.axis != cfg.axis {
                return Err(PipelineError::Config(format!(
                    "manual prompts are for the {} axis but the run uses {}",
                    file.axis, cfg.axis
                )));
            }
            if let Some(&i) = file.prompts.keys().find(|&&i| i >= slices.len()) {
                return Err(PipelineError::Config(format!(
                    "manual prompt for slice {i} but the {} axis has {} slices",
                    cfg.axis,
                    slices.len()
                )));
            }
            file.to_slots(slices.len())
        }
        None => generate_prompts(&slices, &cfg.prompt),
    };
    let t_prompts = t.elapsed();

    let t = Instant::now();
    let masks = segment_all(&slices, &slots, &cfg.backend, cfg.parallelism)?;
    let t_segment = t.elapsed();

    let t = Instant::now();
    let mask = reconstruct(&masks, cfg.axis, vol.grid())?;
    let t_reconstruct = t.elapsed();

    Ok(Extraction {
        mask,
        prompts: match manual {
            Some(file) => file.clone(),
            None => PromptFile::from_generated(cfg.axis, &slots),
        },
        window,
        timings: Timings {
            decompose_s: secs(t_decompose),
            prompts_s: secs(t_prompts),
            segment_s: secs(t_segment),
            reconstruct_s: secs(t_reconstruct),
            total_s: secs(start.elapsed()),
        },
        backend_identity: cfg.backend.identity(),
        segmented: slots.iter().filter(|(_, p)| p.is_some()).count(),
    })
}

/// Segments every prompted slice with a pool of `parallelism` workers, each
/// owning its own backend. Unprompted slices get empty masks. The output is
/// ordered by slice index whatever the completion order.
pub fn segment_all(
    slices: &[SliceImage],
    slots: &[(usize, Option<PromptSet>)],
    backend: &BackendSpec,
    parallelism: usize,
) -> Result<Vec<Mask2D>, PipelineError> {
    let jobs: Vec<(usize, &PromptSet)> = slots.iter().filter_map(|(i, p)| p.as_ref().map(|p| (*i, p))).collect();
    let mut masks: Vec<Mask2D> = slices.iter().map(|s| Mask2D::empty(s.width, s.height)).collect();
    if jobs.is_empty() {
        return Ok(masks);
    }

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<(usize, Result<Mask2D, SegmentError>)>> = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = parallelism.clamp(1, jobs.len());

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut seg: Option<Box<dyn Segmenter>> = None;
                loop {
                    if abort.load(Ordering::Relaxed) {
                        return;
                    }
                    let j = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(index, prompts)) = jobs.get(j) else {
                        return;
                    };
                    let outcome = match seg.as_mut() {
                        Some(b) => segment(&slices[index], prompts, b.as_mut()),
                        None => match backend.build() {
                            Ok(b) => segment(&slices[index], prompts, seg.insert(b).as_mut()),
                            Err(e) => Err(e),
                        },
                    };
                    if outcome.is_err() {
                        abort.store(true, Ordering::Relaxed);
                    }
                    results.lock().expect("result lock").push((index, outcome));
                }
            });
        }
    });

    let mut results = results.into_inner().expect("result lock");
    results.sort_by_key(|(i, _)| *i);
    for (index, outcome) in results {
        match outcome {
            Ok(m) => masks[index] = m,
            Err(source) => return Err(PipelineError::Segment { index, source }),
        }
    }
    Ok(masks)
}
