//! Full-image binary masks and their run-length codec.

use crate::error::{Error, Result};

/// Dense binary grid, row-major, one byte per pixel (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask { height, width, data: vec![0; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        debug_assert!(value <= 1);
        self.data[row * self.width + col] = value;
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Tight bounding box of the set pixels as half-open pixel extents
    /// (x1, y1, x2, y2), or None for an empty mask.
    pub fn tight_box(&self) -> Option<(f64, f64, f64, f64)> {
        let mut min_r = usize::MAX;
        let mut max_r = 0;
        let mut min_c = usize::MAX;
        let mut max_c = 0;
        let mut any = false;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) != 0 {
                    any = true;
                    min_r = min_r.min(r);
                    max_r = max_r.max(r);
                    min_c = min_c.min(c);
                    max_c = max_c.max(c);
                }
            }
        }
        any.then_some((min_c as f64, min_r as f64, max_c as f64 + 1.0, max_r as f64 + 1.0))
    }
}

/// Run lengths over the row-major flattened mask, alternating and starting
/// with a zero-run (which may be length 0 when the mask starts with 1).
pub fn encode_rle(mask: &BinaryMask) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current: u8 = 0;
    let mut len: u32 = 0;
    for &v in &mask.data {
        let bit = u8::from(v != 0);
        if bit == current {
            len += 1;
        } else {
            runs.push(len);
            current = bit;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn decode_rle(height: usize, width: usize, runs: &[u32]) -> Result<BinaryMask> {
    let total: u64 = runs.iter().map(|&r| r as u64).sum();
    if total != (height * width) as u64 {
        return Err(Error::parse(format!(
            "rle: runs cover {total} pixels, grid has {}",
            height * width
        )));
    }
    let mut mask = BinaryMask::zeros(height, width);
    let mut pos = 0usize;
    let mut bit = 0u8;
    for &run in runs {
        if bit == 1 {
            for p in pos..pos + run as usize {
                mask.data[p] = 1;
            }
        }
        pos += run as usize;
        bit ^= 1;
    }
    Ok(mask)
}
