//! Prompt-driven brain extraction from volumetric MRI.
//!
//! A volume is cut into 2D slices, each slice gets a bounding box and
//! inclusion/exclusion markers derived from its intensities, a promptable 2D
//! segmenter turns the prompts into a mask, and the masks are stacked back
//! into a 3D brain mask. The crate also carries NIfTI-1 I/O, resampling, a
//! classical baseline, overlap metrics and synthetic head phantoms.

pub mod backend;
pub mod baseline;
pub mod evaluation;
pub mod morphology;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod prompt;
pub mod resample;
pub mod slicing;
pub mod volume;

pub use backend::{
    rle_decode, rle_encode, segment, select_candidate, BackendSpec, Candidate, ProcessBackend, ReferenceBackend,
    ReferenceBackendConfig, SegmentError, Segmenter,
};
pub use baseline::{run_baseline, BaselineConfig, BaselineError, BaselineMode};
pub use evaluation::{
    aggregate, confusion, emit_report, metrics, CategoryAggregate, ConfusionCounts, EvalError, MetricReport,
    ReportFormat,
};
pub use morphology::Connectivity2;
pub use nifti::{read_mask, read_volume, write_mask, write_volume, NiftiError};
pub use phantom::{make_phantom, Lesion, PhantomError, PhantomSpec};
pub use pipeline::{extract, Extraction, PipelineConfig, PipelineError, Timings};
pub use prompt::{generate_prompts, BoundingBox, PromptConfig, PromptError, PromptFile, PromptSet};
pub use resample::{resample, resample_mask, Interpolation};
pub use slicing::{decompose, reconstruct, Axis, Mask2D, SliceError, SliceImage, Window};
pub use volume::{Affine, GridError, GridSpec, Mask3D, Volume};
