//! Run-length codec for binary masks: alternating zero/one runs over the
//! row-major pixels, zero-run first.

use thiserror::Error;

use crate::slicing::Mask2D;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RleError {
    #[error("runs sum to {actual}, expected {expected}")]
    BadSum { expected: u64, actual: u64 },
    #[error("run {position} has length zero")]
    ZeroRun { position: usize },
}

/// `[z0, o1, z2, ...]`; only the leading zero-run may be 0.
pub fn rle_encode(mask: &Mask2D) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = 0u8;
    let mut len = 0u32;
    for &b in mask.bits() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u32], width: usize, height: usize) -> Result<Mask2D, RleError> {
    let expected = (width * height) as u64;
    let actual: u64 = runs.iter().map(|&r| u64::from(r)).sum();
    if actual != expected {
        return Err(RleError::BadSum { expected, actual });
    }
    if let Some(position) = runs.iter().skip(1).position(|&r| r == 0) {
        return Err(RleError::ZeroRun { position: position + 1 });
    }
    let mut bits = Vec::with_capacity(width * height);
    for (i, &r) in runs.iter().enumerate() {
        let v = (i % 2) as u8;
        bits.extend(std::iter::repeat_n(v, r as usize));
    }
    Ok(Mask2D::from_bits(width, height, bits))
}
