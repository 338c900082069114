//! Deterministic offline segmenter: seeded region growing from the inclusion
//! points, blocked by the exclusion points.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Candidate, SegmentError, Segmenter};
use crate::morphology::{fill_holes_2d, Connectivity2};
use crate::prompt::PromptSet;
use crate::slicing::{Mask2D, SliceImage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceBackendConfig {
    /// Largest intensity step between a pixel and the neighbour admitting it.
    pub tolerance: u8,
    pub connectivity: Connectivity2,
}

impl Default for ReferenceBackendConfig {
    fn default() -> Self {
        Self {
            tolerance: 25,
            connectivity: Connectivity2::Four,
        }
    }
}

/// Grows a region from every inclusion point and returns their union with
/// holes filled.
///
/// A pixel joins when it is inside the box, not a barrier, differs from the
/// neighbour admitting it by at most `tolerance` and from its seed by at most
/// `2 * tolerance`. Exclusion points and their 8 neighbours are barriers.
pub fn reference_segment(
    slice: &SliceImage,
    prompts: &PromptSet,
    cfg: &ReferenceBackendConfig,
) -> Result<Mask2D, SegmentError> {
    if prompts.inclusions.is_empty() {
        return Err(SegmentError::EmptyPromptSet);
    }
    let (w, h) = (slice.width, slice.height);
    let bbox = prompts.bbox;

    let mut barrier = vec![false; w * h];
    for &(ex, ey) in &prompts.exclusions {
        for y in ey.saturating_sub(1)..=(ey + 1).min(h - 1) {
            for x in ex.saturating_sub(1)..=(ex + 1).min(w - 1) {
                barrier[y * w + x] = true;
            }
        }
    }

    let tol = i16::from(cfg.tolerance);
    let mut union = vec![0u8; w * h];
    let mut region = vec![false; w * h];
    let mut queue = VecDeque::new();

    for &(sx, sy) in &prompts.inclusions {
        if sx >= w || sy >= h || !bbox.contains(sx, sy) || barrier[sy * w + sx] {
            continue;
        }
        let seed_val = slice.at(sx, sy);
        region.iter_mut().for_each(|r| *r = false);
        region[sy * w + sx] = true;
        queue.push_back((sx, sy));
        while let Some((x, y)) = queue.pop_front() {
            let here = i16::from(slice.at(x, y));
            for &(dx, dy) in cfg.connectivity.offsets() {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if !bbox.contains(nx, ny) || nx >= w || ny >= h {
                    continue;
                }
                let n = ny * w + nx;
                if region[n] || barrier[n] {
                    continue;
                }
                let v = i16::from(slice.pixels[n]);
                if (v - here).abs() <= tol && (v - i16::from(seed_val)).abs() <= 2 * tol {
                    region[n] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        for (u, &r) in union.iter_mut().zip(&region) {
            *u |= u8::from(r);
        }
    }

    Ok(Mask2D::from_bits(w, h, fill_holes_2d(&union, w, h, cfg.connectivity)))
}

/// [`reference_segment`] behind the [`Segmenter`] interface; always returns a
/// single candidate with score 1.
#[derive(Debug, Clone, Default)]
pub struct ReferenceBackend {
    pub cfg: ReferenceBackendConfig,
}

impl ReferenceBackend {
    pub fn new(cfg: ReferenceBackendConfig) -> Self {
        Self { cfg }
    }
}

impl Segmenter for ReferenceBackend {
    fn identity(&self) -> String {
        format!(
            "reference-region-growing(tolerance={}, connectivity={})",
            self.cfg.tolerance,
            u8::from(self.cfg.connectivity)
        )
    }

    fn predict(&mut self, slice: &SliceImage, prompts: &PromptSet) -> Result<Vec<Candidate>, SegmentError> {
        Ok(vec![Candidate {
            mask: reference_segment(slice, prompts, &self.cfg)?,
            score: 1.0,
        }])
    }
}
