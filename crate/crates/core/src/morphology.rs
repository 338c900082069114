//! Binary morphology and connectivity on 2D rasters and 3D grids.
//!
//! Rasters are row-major `u8` buffers holding 0/1. Hole filling floods the
//! background with the dual connectivity of the foreground (8 vs 4 in 2D,
//! 6 vs 26 in 3D).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// 2D pixel adjacency; serialized as the neighbour count (4 or 8).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity2 {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity2 {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            4 => Ok(Connectivity2::Four),
            8 => Ok(Connectivity2::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity2> for u8 {
    fn from(c: Connectivity2) -> u8 {
        match c {
            Connectivity2::Four => 4,
            Connectivity2::Eight => 8,
        }
    }
}

impl Connectivity2 {
    pub fn offsets(self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
        match self {
            Connectivity2::Four => &FOUR,
            Connectivity2::Eight => &EIGHT,
        }
    }

    pub fn dual(self) -> Self {
        match self {
            Connectivity2::Four => Connectivity2::Eight,
            Connectivity2::Eight => Connectivity2::Four,
        }
    }
}

#[inline]
fn step(x: usize, y: usize, d: (i64, i64), w: usize, h: usize) -> Option<(usize, usize)> {
    let nx = x as i64 + d.0;
    let ny = y as i64 + d.1;
    (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then_some((nx as usize, ny as usize))
}

/// Labels connected components; returns per-pixel labels (0 = background)
/// and the size of each label, indexed from 1.
pub fn label_2d(bits: &[u8], w: usize, h: usize, conn: Connectivity2) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; bits.len()];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if bits[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        let mut size = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            size += 1;
            let (x, y) = (idx % w, idx / w);
            for &d in conn.offsets() {
                if let Some((nx, ny)) = step(x, y, d, w, h) {
                    let n = ny * w + nx;
                    if bits[n] != 0 && labels[n] == 0 {
                        labels[n] = label;
                        queue.push_back(n);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps the largest component. Equal sizes resolve to the component whose
/// first pixel comes first in raster order.
pub fn largest_component_2d(bits: &[u8], w: usize, h: usize, conn: Connectivity2) -> Vec<u8> {
    let (labels, sizes) = label_2d(bits, w, h, conn);
    let best = sizes
        .iter()
        .enumerate()
        .skip(1)
        .fold(None, |best: Option<(usize, usize)>, (l, &s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((l, s)),
        });
    match best {
        None => vec![0; bits.len()],
        Some((l, _)) => labels.iter().map(|&x| u8::from(x == l as u32)).collect(),
    }
}

/// Fills every background region that cannot reach the image border.
pub fn fill_holes_2d(bits: &[u8], w: usize, h: usize, fg_conn: Connectivity2) -> Vec<u8> {
    let bg_conn = fg_conn.dual();
    let mut outside = vec![false; bits.len()];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        let i = y * w + x;
        if bits[i] == 0 && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut queue);
        seed(x, h - 1, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut queue);
        seed(w - 1, y, &mut outside, &mut queue);
    }
    while let Some(idx) = queue.pop_front() {
        let (x, y) = (idx % w, idx / w);
        for &d in bg_conn.offsets() {
            if let Some((nx, ny)) = step(x, y, d, w, h) {
                let n = ny * w + nx;
                if bits[n] == 0 && !outside[n] {
                    outside[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    outside.iter().map(|&o| u8::from(!o)).collect()
}

/// Chebyshev distance from each foreground pixel to the nearest background
/// pixel, counting everything beyond the image edge as background. Background
/// pixels get 0.
pub fn chebyshev_distance(bits: &[u8], w: usize, h: usize) -> Vec<u32> {
    let mut dist: Vec<u32> = (0..bits.len())
        .map(|i| {
            if bits[i] == 0 {
                0
            } else {
                let (x, y) = (i % w, i / w);
                (x + 1).min(y + 1).min(w - x).min(h - y) as u32
            }
        })
        .collect();
    // forward pass over the causal half of the 8-neighbourhood
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if dist[i] == 0 {
                continue;
            }
            for d in [(-1i64, -1i64), (0, -1), (1, -1), (-1, 0)] {
                if let Some((nx, ny)) = step(x, y, d, w, h) {
                    dist[i] = dist[i].min(dist[ny * w + nx] + 1);
                }
            }
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            if dist[i] == 0 {
                continue;
            }
            for d in [(1i64, 1i64), (0, 1), (-1, 1), (1, 0)] {
                if let Some((nx, ny)) = step(x, y, d, w, h) {
                    dist[i] = dist[i].min(dist[ny * w + nx] + 1);
                }
            }
        }
    }
    dist
}

/// Dilation by a (2r+1)x(2r+1) square, i.e. every pixel within Chebyshev
/// distance `r` of the foreground.
pub fn dilate_square(bits: &[u8], w: usize, h: usize, r: usize) -> Vec<u8> {
    if r == 0 {
        return bits.to_vec();
    }
    let mut rows = vec![0u8; bits.len()];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = u8::from(bits[y * w + lo..=y * w + hi].iter().any(|&b| b != 0));
        }
    }
    let mut out = vec![0u8; bits.len()];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = u8::from((lo..=hi).any(|yy| rows[yy * w + x] != 0));
        }
    }
    out
}

const SIX: [(i64, i64, i64); 6] = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];

#[inline]
fn step3(p: [usize; 3], d: (i64, i64, i64), dims: [usize; 3]) -> Option<usize> {
    let x = p[0] as i64 + d.0;
    let y = p[1] as i64 + d.1;
    let z = p[2] as i64 + d.2;
    if x < 0 || y < 0 || z < 0 {
        return None;
    }
    let (x, y, z) = (x as usize, y as usize, z as usize);
    (x < dims[0] && y < dims[1] && z < dims[2]).then(|| x + dims[0] * (y + dims[1] * z))
}

#[inline]
fn coords3(i: usize, dims: [usize; 3]) -> [usize; 3] {
    [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])]
}

fn twenty_six() -> Vec<(i64, i64, i64)> {
    let mut v = Vec::with_capacity(26);
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    v.push((dx, dy, dz));
                }
            }
        }
    }
    v
}

/// Erosion with the 6-connected unit cross; voxels beyond the grid count as
/// background.
pub fn erode_6(bits: &[u8], dims: [usize; 3]) -> Vec<u8> {
    (0..bits.len())
        .map(|i| {
            if bits[i] == 0 {
                return 0;
            }
            let p = coords3(i, dims);
            u8::from(SIX.iter().all(|&d| step3(p, d, dims).is_some_and(|n| bits[n] != 0)))
        })
        .collect()
}

pub fn dilate_6(bits: &[u8], dims: [usize; 3]) -> Vec<u8> {
    (0..bits.len())
        .map(|i| {
            if bits[i] != 0 {
                return 1;
            }
            let p = coords3(i, dims);
            u8::from(SIX.iter().any(|&d| step3(p, d, dims).is_some_and(|n| bits[n] != 0)))
        })
        .collect()
}

/// 6-connected component labelling; returns labels and sizes (index 0 unused).
pub fn label_6(bits: &[u8], dims: [usize; 3]) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; bits.len()];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if bits[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let p = coords3(i, dims);
            for &d in &SIX {
                if let Some(n) = step3(p, d, dims) {
                    if bits[n] != 0 && labels[n] == 0 {
                        labels[n] = label;
                        queue.push_back(n);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

pub fn largest_component_6(bits: &[u8], dims: [usize; 3]) -> Vec<u8> {
    let (labels, sizes) = label_6(bits, dims);
    let mut best = 0usize;
    for l in 1..sizes.len() {
        if best == 0 || sizes[l] > sizes[best] {
            best = l;
        }
    }
    if best == 0 {
        return vec![0; bits.len()];
    }
    labels.iter().map(|&x| u8::from(x == best as u32)).collect()
}

/// Fills enclosed cavities of a 6-connected foreground by flooding the
/// background from the grid boundary with 26-connectivity.
pub fn fill_holes_3d(bits: &[u8], dims: [usize; 3]) -> Vec<u8> {
    let neigh = twenty_six();
    let mut outside = vec![false; bits.len()];
    let mut queue = VecDeque::new();
    for i in 0..bits.len() {
        let [x, y, z] = coords3(i, dims);
        let border = x == 0 || y == 0 || z == 0 || x + 1 == dims[0] || y + 1 == dims[1] || z + 1 == dims[2];
        if border && bits[i] == 0 {
            outside[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let p = coords3(i, dims);
        for &d in &neigh {
            if let Some(n) = step3(p, d, dims) {
                if bits[n] == 0 && !outside[n] {
                    outside[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    outside.iter().map(|&o| u8::from(!o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(rows: &[&str]) -> (Vec<u8>, usize, usize) {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| u8::from(b == b'#')))
            .collect();
        (bits, w, h)
    }

    #[test]
    fn diagonal_pixels_connect_only_under_eight() {
        let (b, w, h) = raster(&["#..", ".#.", "..#"]);
        assert_eq!(label_2d(&b, w, h, Connectivity2::Eight).1.len() - 1, 1);
        assert_eq!(label_2d(&b, w, h, Connectivity2::Four).1.len() - 1, 3);
    }

    #[test]
    fn ring_hole_filled() {
        let (b, w, h) = raster(&[".....", ".###.", ".#.#.", ".###.", "....."]);
        let f = fill_holes_2d(&b, w, h, Connectivity2::Eight);
        assert_eq!(f[2 * w + 2], 1);
        assert_eq!(f.iter().filter(|&&v| v == 1).count(), 9);
    }

    #[test]
    fn diagonal_gap_is_not_a_hole_for_four_connected_fg() {
        // with 4-connected foreground the background is 8-connected, so the
        // centre leaks out through the missing corner
        let (b, w, h) = raster(&["....", ".##.", ".#..", "...."]);
        let f = fill_holes_2d(&b, w, h, Connectivity2::Four);
        assert_eq!(f, b);
    }

    #[test]
    fn chebyshev_matches_brute_force() {
        let (b, w, h) = raster(&["........", ".######.", ".######.", ".######.", ".####...", "........"]);
        let d = chebyshev_distance(&b, w, h);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if b[i] == 0 {
                    assert_eq!(d[i], 0);
                    continue;
                }
                let mut best = i64::MAX;
                for yy in -1..=h as i64 {
                    for xx in -1..=w as i64 {
                        let inside = xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64;
                        if !inside || b[yy as usize * w + xx as usize] == 0 {
                            best = best.min((xx - x as i64).abs().max((yy - y as i64).abs()));
                        }
                    }
                }
                assert_eq!(d[i] as i64, best, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn square_dilation() {
        let (b, w, h) = raster(&[".....", ".....", "..#..", ".....", "....."]);
        let d = dilate_square(&b, w, h, 1);
        assert_eq!(d.iter().filter(|&&v| v == 1).count(), 9);
        let d = dilate_square(&b, w, h, 2);
        assert!(d.iter().all(|&v| v == 1));
    }

    #[test]
    fn opening_removes_isolated_voxels() {
        let dims = [5, 5, 5];
        let mut bits = vec![0u8; 125];
        bits[2 + 5 * (2 + 5 * 2)] = 1;
        let opened = dilate_6(&erode_6(&bits, dims), dims);
        assert!(opened.iter().all(|&b| b == 0));
    }

    #[test]
    fn hollow_cube_is_filled() {
        let dims = [5, 5, 5];
        let mut bits = vec![0u8; 125];
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    if (x, y, z) != (2, 2, 2) {
                        bits[x + 5 * (y + 5 * z)] = 1;
                    }
                }
            }
        }
        let filled = fill_holes_3d(&bits, dims);
        assert_eq!(filled[2 + 5 * (2 + 5 * 2)], 1);
        assert_eq!(filled.iter().filter(|&&b| b == 1).count(), 27);
    }

    #[test]
    fn largest_3d_component() {
        let dims = [6, 1, 1];
        let bits = vec![1, 0, 1, 1, 0, 1];
        assert_eq!(largest_component_6(&bits, dims), vec![0, 0, 1, 1, 0, 0]);
    }
}
