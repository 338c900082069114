//! Per-slice prompt generation: foreground estimate, bounding box, and the
//! inclusion / exclusion marker points handed to the 2D segmenter.
//!
//! Every step is deterministic. Foreground comes from Otsu's threshold on the
//! 8-bit histogram, restricted to the largest 8-connected component with its
//! holes filled. Inclusion markers sit at the deepest interior points of that
//! component; exclusion markers sit on the brightest pixels of a ring just
//! outside it, which on head images is the skull and scalp.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::{chebyshev_distance, dilate_square, fill_holes_2d, largest_component_2d, Connectivity2};
use crate::slicing::{Axis, Mask2D, SliceImage};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("foreground is empty")]
    EmptyForeground,
    #[error("invalid prompt: {0}")]
    Invalid(String),
}

/// Inclusive pixel rectangle `(x0, y0)..=(x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl From<[usize; 4]> for BoundingBox {
    fn from(v: [usize; 4]) -> Self {
        Self {
            x0: v[0],
            y0: v[1],
            x1: v[2],
            y1: v[3],
        }
    }
}

impl From<BoundingBox> for [usize; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BoundingBox {
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }

    /// Grown by `r` on every side and clipped to a `width` x `height` image.
    pub fn expanded(&self, r: usize, width: usize, height: usize) -> Self {
        Self {
            x0: self.x0.saturating_sub(r),
            y0: self.y0.saturating_sub(r),
            x1: (self.x1 + r).min(width - 1),
            y1: (self.y1 + r).min(height - 1),
        }
    }
}

pub type Point = (usize, usize);

/// One slice's prompts: a box plus inclusion (keep) and exclusion (reject)
/// points, all in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub inclusions: Vec<Point>,
    pub exclusions: Vec<Point>,
}

impl PromptSet {
    /// Checks the structural invariants against an image size.
    pub fn validate(&self, width: usize, height: usize) -> Result<(), PromptError> {
        let b = &self.bbox;
        if !(b.x0 <= b.x1 && b.x1 < width && b.y0 <= b.y1 && b.y1 < height) {
            return Err(PromptError::Invalid(format!(
                "box {:?} outside {width}x{height}",
                <[usize; 4]>::from(*b)
            )));
        }
        if let Some(p) = self.inclusions.iter().find(|p| !b.contains(p.0, p.1)) {
            return Err(PromptError::Invalid(format!("inclusion {p:?} outside box")));
        }
        if let Some(p) = self.exclusions.iter().find(|p| p.0 >= width || p.1 >= height) {
            return Err(PromptError::Invalid(format!("exclusion {p:?} outside image")));
        }
        if let Some(p) = self.inclusions.iter().find(|p| self.exclusions.contains(p)) {
            return Err(PromptError::Invalid(format!("{p:?} is both included and excluded")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    /// Pixels added around the foreground's bounding box.
    pub margin: usize,
    pub k_inc: usize,
    pub k_exc: usize,
    /// Smallest foreground component worth prompting.
    pub min_fg_area: usize,
    /// Exclusion ring offset and minimum marker separation.
    pub rim_width: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            margin: 3,
            k_inc: 5,
            k_exc: 8,
            min_fg_area: 64,
            rim_width: 4,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.k_inc < 1 || self.min_fg_area < 1 {
            return Err(PromptError::Invalid("k_inc and min_fg_area must be at least 1".into()));
        }
        Ok(())
    }
}

/// Otsu's threshold over a 256-bin histogram. Pixels strictly above the
/// returned level form the bright class; a single-level histogram returns 255
/// so that nothing lies above it. Ties go to the lowest level.
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 255;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut best_t = 255u8;
    let mut best_var = 0.0;
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for t in 0..255usize {
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

pub fn histogram(pixels: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &p in pixels {
        h[p as usize] += 1;
    }
    h
}

/// Largest bright 8-connected region of the slice with holes filled, or the
/// empty mask when nothing clears the Otsu level or the region is smaller
/// than `min_fg_area` pixels.
pub fn estimate_foreground(slice: &SliceImage, min_fg_area: usize) -> Mask2D {
    let (w, h) = (slice.width, slice.height);
    let t = otsu_threshold(&histogram(&slice.pixels));
    let candidates: Vec<u8> = slice.pixels.iter().map(|&p| u8::from(p > t)).collect();
    let largest = largest_component_2d(&candidates, w, h, Connectivity2::Eight);
    let area = largest.iter().filter(|&&b| b != 0).count();
    if area == 0 || area < min_fg_area {
        return Mask2D::empty(w, h);
    }
    Mask2D::from_bits(w, h, fill_holes_2d(&largest, w, h, Connectivity2::Eight))
}

/// Tight box around the set pixels, grown by `margin` and clipped.
pub fn compute_box(fg: &Mask2D, margin: usize) -> Option<BoundingBox> {
    let mut bb: Option<BoundingBox> = None;
    for y in 0..fg.height {
        for x in 0..fg.width {
            if !fg.get(x, y) {
                continue;
            }
            bb = Some(match bb {
                None => BoundingBox {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                },
                Some(b) => BoundingBox {
                    x0: b.x0.min(x),
                    y0: b.y0.min(y),
                    x1: b.x1.max(x),
                    y1: b.y1.max(y),
                },
            });
        }
    }
    bb.map(|b| b.expanded(margin, fg.width, fg.height))
}

#[inline]
fn chebyshev(a: Point, b: Point) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Greedy pick from `ranked` (best first) keeping pairwise Chebyshev
/// separation of at least `min_sep`.
fn pick_separated(ranked: &[Point], k: usize, min_sep: usize) -> Vec<Point> {
    let mut chosen: Vec<Point> = Vec::with_capacity(k);
    for &p in ranked {
        if chosen.len() == k {
            break;
        }
        if chosen.iter().all(|&q| q != p && chebyshev(p, q) >= min_sep) {
            chosen.push(p);
        }
    }
    chosen
}

/// Places inclusion markers deep inside `fg` and exclusion markers on the
/// bright ring around it. Fewer markers than requested come back when the
/// candidates run out.
pub fn place_markers(
    slice: &SliceImage,
    fg: &Mask2D,
    bbox: BoundingBox,
    cfg: &PromptConfig,
) -> Result<PromptSet, PromptError> {
    if fg.is_empty() {
        return Err(PromptError::EmptyForeground);
    }
    let (w, h) = (fg.width, fg.height);

    let depth = chebyshev_distance(fg.bits(), w, h);
    let mut interior: Vec<(u32, Point)> = (0..w * h)
        .filter(|&i| depth[i] > 0 && bbox.contains(i % w, i / w))
        .map(|i| (depth[i], (i % w, i / w)))
        .collect();
    // deepest first, then row-major (y, x)
    interior.sort_by(|a, b| b.0.cmp(&a.0).then((a.1 .1, a.1 .0).cmp(&(b.1 .1, b.1 .0))));
    let ranked: Vec<Point> = interior.into_iter().map(|(_, p)| p).collect();
    let inclusions = pick_separated(&ranked, cfg.k_inc, cfg.rim_width);

    let exclusions = if cfg.k_exc == 0 {
        Vec::new()
    } else {
        let near_fg = dilate_square(fg.bits(), w, h, cfg.rim_width);
        let reach = bbox.expanded(2 * cfg.rim_width, w, h);
        let mut ring: Vec<(u8, Point)> = Vec::new();
        for y in reach.y0..=reach.y1 {
            for x in reach.x0..=reach.x1 {
                if near_fg[y * w + x] == 0 {
                    ring.push((slice.at(x, y), (x, y)));
                }
            }
        }
        ring.sort_by(|a, b| b.0.cmp(&a.0).then((a.1 .1, a.1 .0).cmp(&(b.1 .1, b.1 .0))));
        let ranked: Vec<Point> = ring.into_iter().map(|(_, p)| p).collect();
        pick_separated(&ranked, cfg.k_exc, cfg.rim_width)
    };

    Ok(PromptSet {
        bbox,
        inclusions,
        exclusions,
    })
}

/// Prompts for a single slice, or `None` when it has no usable foreground.
pub fn prompt_slice(slice: &SliceImage, cfg: &PromptConfig) -> Option<PromptSet> {
    let fg = estimate_foreground(slice, cfg.min_fg_area);
    let bbox = compute_box(&fg, cfg.margin)?;
    place_markers(slice, &fg, bbox, cfg).ok()
}

/// Applies [`prompt_slice`] to every slice, keyed by slice index.
pub fn generate_prompts(slices: &[SliceImage], cfg: &PromptConfig) -> Vec<(usize, Option<PromptSet>)> {
    slices.iter().map(|s| (s.index, prompt_slice(s, cfg))).collect()
}

/// On-disk prompt collection (`prompts.json`, or a manual seed file).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptFile {
    #[serde(default)]
    pub axis: Axis,
    /// Slices without an entry receive no prompt.
    pub prompts: BTreeMap<usize, PromptSet>,
}

impl PromptFile {
    pub fn from_generated(axis: Axis, prompts: &[(usize, Option<PromptSet>)]) -> Self {
        Self {
            axis,
            prompts: prompts.iter().filter_map(|(i, p)| p.clone().map(|p| (*i, p))).collect(),
        }
    }

    /// Expands to one entry per slice index in `0..count`.
    pub fn to_slots(&self, count: usize) -> Vec<(usize, Option<PromptSet>)> {
        (0..count).map(|i| (i, self.prompts.get(&i).cloned())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicing::Window;

    pub(crate) fn square_slice(size: usize, x0: usize, y0: usize, side: usize, fg: u8, bg: u8) -> SliceImage {
        let mut pixels = vec![bg; size * size];
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                pixels[y * size + x] = fg;
            }
        }
        SliceImage {
            width: size,
            height: size,
            axis: Axis::Axial,
            index: 0,
            pixels,
            window: Window::new(0.0, 255.0).unwrap(),
        }
    }

    /// Exhaustive between-class variance over every cut of the histogram.
    fn brute_otsu_cuts(pixels: &[u8]) -> Vec<u8> {
        let var = |t: u8| {
            let (a, b): (Vec<f64>, Vec<f64>) = (
                pixels.iter().filter(|&&p| p <= t).map(|&p| f64::from(p)).collect(),
                pixels.iter().filter(|&&p| p > t).map(|&p| f64::from(p)).collect(),
            );
            if a.is_empty() || b.is_empty() {
                return 0.0;
            }
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            a.len() as f64 * b.len() as f64 * (ma - mb).powi(2)
        };
        let vars: Vec<f64> = (0..=255u8).map(var).collect();
        let best = vars.iter().cloned().fold(0.0, f64::max);
        (0..=255u8).filter(|&t| vars[t as usize] == best).collect()
    }

    #[test]
    fn otsu_splits_two_levels() {
        let s = square_slice(50, 15, 15, 20, 200, 10);
        let cuts = brute_otsu_cuts(&s.pixels);
        assert_eq!(cuts.first(), Some(&10));
        assert_eq!(cuts.last(), Some(&199));
        let t = otsu_threshold(&histogram(&s.pixels));
        assert!(cuts.contains(&t));
    }

    #[test]
    fn otsu_matches_brute_force_on_three_levels() {
        let mut pixels = vec![5u8; 300];
        pixels.extend(vec![90u8; 120]);
        pixels.extend(vec![230u8; 80]);
        let t = otsu_threshold(&histogram(&pixels));
        assert!(brute_otsu_cuts(&pixels).contains(&t));
    }

    #[test]
    fn bright_square_foreground() {
        let s = square_slice(50, 15, 15, 20, 200, 10);
        let fg = estimate_foreground(&s, 64);
        for y in 0..50 {
            for x in 0..50 {
                let inside = (15..35).contains(&x) && (15..35).contains(&y);
                assert_eq!(fg.get(x, y), inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn constant_slice_has_no_foreground() {
        let s = square_slice(20, 0, 0, 0, 0, 77);
        assert!(estimate_foreground(&s, 1).is_empty());
    }

    #[test]
    fn keeps_only_the_larger_blob() {
        // 10x10 = 100 px and 3x3 = 9 px
        let mut s = square_slice(40, 2, 2, 10, 220, 0);
        for y in 30..33 {
            for x in 30..33 {
                s.pixels[y * 40 + x] = 220;
            }
        }
        let fg = estimate_foreground(&s, 5);
        assert_eq!(fg.count(), 100);
        assert!(!fg.get(31, 31));
        // below the minimum area nothing survives
        assert!(estimate_foreground(&s, 101).is_empty());
    }

    #[test]
    fn box_with_margin() {
        let mut fg = Mask2D::empty(40, 40);
        for y in 10..30 {
            for x in 5..15 {
                fg.set(x, y, true);
            }
        }
        let b = compute_box(&fg, 2).unwrap();
        assert_eq!(<[usize; 4]>::from(b), [3, 8, 16, 31]);

        let mut edge = Mask2D::empty(10, 10);
        edge.set(0, 5, true);
        assert_eq!(compute_box(&edge, 2).unwrap().x0, 0);
        assert_eq!(compute_box(&Mask2D::empty(4, 4), 2), None);
    }

    #[test]
    fn first_inclusion_is_square_centre() {
        let s = square_slice(50, 15, 15, 20, 200, 10);
        let fg = estimate_foreground(&s, 64);
        let b = compute_box(&fg, 3).unwrap();
        let p = place_markers(&s, &fg, b, &PromptConfig::default()).unwrap();
        let (cx, cy) = p.inclusions[0];
        // the square spans 15..=34, centre 24.5
        assert!((cx as f64 - 24.5).abs() <= 1.0 && (cy as f64 - 24.5).abs() <= 1.0);
        assert_eq!(p.inclusions[0], (24, 24));
        assert_eq!(p.inclusions.len(), 5);
        for &(x, y) in &p.inclusions {
            assert!(fg.get(x, y) && b.contains(x, y));
        }
        p.validate(50, 50).unwrap();
    }

    #[test]
    fn exclusions_on_bright_ring() {
        // dark brain-like square framed by a bright band at distance 6
        let mut s = square_slice(60, 20, 20, 20, 120, 0);
        for y in 12..48 {
            for x in 12..48 {
                let band = !(14..46).contains(&x) || !(14..46).contains(&y);
                if band {
                    s.pixels[y * 60 + x] = 250;
                }
            }
        }
        let fg = Mask2D::from_bits(
            60,
            60,
            (0..3600)
                .map(|i| u8::from((20..40).contains(&(i % 60)) && (20..40).contains(&(i / 60))))
                .collect(),
        );
        let b = compute_box(&fg, 3).unwrap();
        let cfg = PromptConfig::default();
        let p = place_markers(&s, &fg, b, &cfg).unwrap();
        assert_eq!(p.exclusions.len(), cfg.k_exc);
        let near = dilate_square(fg.bits(), 60, 60, cfg.rim_width);
        for &(x, y) in &p.exclusions {
            assert_eq!(s.at(x, y), 250);
            assert_eq!(near[y * 60 + x], 0);
        }
        for (i, a) in p.exclusions.iter().enumerate() {
            for b in &p.exclusions[i + 1..] {
                assert!(chebyshev(*a, *b) >= cfg.rim_width);
            }
        }
    }

    #[test]
    fn zero_exclusions_requested() {
        let s = square_slice(50, 15, 15, 20, 200, 10);
        let fg = estimate_foreground(&s, 64);
        let b = compute_box(&fg, 3).unwrap();
        let cfg = PromptConfig {
            k_exc: 0,
            ..Default::default()
        };
        let p = place_markers(&s, &fg, b, &cfg).unwrap();
        assert!(p.exclusions.is_empty());
        p.validate(50, 50).unwrap();
    }

    #[test]
    fn exhausted_exclusion_candidates() {
        // the square fills the whole image, so the ring is empty
        let s = square_slice(12, 0, 0, 12, 200, 10);
        let fg = Mask2D::from_bits(12, 12, vec![1; 144]);
        let b = compute_box(&fg, 3).unwrap();
        let p = place_markers(&s, &fg, b, &PromptConfig::default()).unwrap();
        assert!(p.exclusions.is_empty());
        assert!(!p.inclusions.is_empty());
    }

    #[test]
    fn empty_foreground_is_an_error() {
        let s = square_slice(10, 0, 0, 0, 0, 0);
        let b = BoundingBox::from([0, 0, 9, 9]);
        assert_eq!(
            place_markers(&s, &Mask2D::empty(10, 10), b, &PromptConfig::default()),
            Err(PromptError::EmptyForeground)
        );
    }

    #[test]
    fn prompt_json_shape() {
        let p = PromptSet {
            bbox: BoundingBox::from([1, 2, 3, 4]),
            inclusions: vec![(2, 3)],
            exclusions: vec![(0, 0)],
        };
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"box": [1, 2, 3, 4], "inclusions": [[2, 3]], "exclusions": [[0, 0]]})
        );
        let file = PromptFile {
            axis: Axis::Coronal,
            prompts: BTreeMap::from([(7, p.clone())]),
        };
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"7\""));
        let back: PromptFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        let slots = back.to_slots(9);
        assert_eq!(slots.len(), 9);
        assert_eq!(slots[7].1.as_ref(), Some(&p));
        assert!(slots[6].1.is_none());
    }

    #[test]
    fn validate_rejects_bad_sets() {
        let good = PromptSet {
            bbox: BoundingBox::from([1, 1, 5, 5]),
            inclusions: vec![(2, 2)],
            exclusions: vec![(0, 0)],
        };
        good.validate(8, 8).unwrap();
        let mut p = good.clone();
        p.inclusions.push((7, 7));
        assert!(p.validate(8, 8).is_err());
        let mut p = good.clone();
        p.exclusions.push((2, 2));
        assert!(p.validate(8, 8).is_err());
        assert!(good.validate(5, 5).is_err());
    }
}
