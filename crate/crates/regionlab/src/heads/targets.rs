//! Training targets for mask and keypoint heads.

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Binary m x m grid labeling the RoI's pixels for class `class`.
#[derive(Debug, Clone)]
pub struct MaskTarget {
    pub grid: Vec<u8>,
    pub resolution: usize,
    /// 1-based foreground class.
    pub class: usize,
    /// True when the RoI was degenerate and the grid is all zeros.
    pub degenerate: bool,
}

/// Per keypoint type: the flat cell index of the single foreground pixel,
/// or None for invisible keypoints and keypoints outside the RoI.
#[derive(Debug, Clone)]
pub struct KeypointTarget {
    pub cells: Vec<Option<usize>>,
    pub resolution: usize,
}

impl KeypointTarget {
    pub fn visible(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Ground-truth mask value interpolated at continuous image point (x, y):
/// the {0,1} field lives on pixel centers, borders replicate inside the
/// image, everything outside the image rectangle reads 0.
fn sample_mask(mask: &BinaryMask, x: f64, y: f64) -> f64 {
    let (h, w) = (mask.height as f64, mask.width as f64);
    if x < 0.0 || x > w || y < 0.0 || y > h {
        return 0.0;
    }
    let u = (x - 0.5).clamp(0.0, w - 1.0);
    let v = (y - 0.5).clamp(0.0, h - 1.0);
    let u0 = u.floor();
    let v0 = v.floor();
    let du = u - u0;
    let dv = v - v0;
    let (c0, r0) = (u0 as usize, v0 as usize);
    let c1 = (c0 + 1).min(mask.width - 1);
    let r1 = (r0 + 1).min(mask.height - 1);
    let f = |r: usize, c: usize| mask.get(r, c) as f64;
    (1.0 - dv) * ((1.0 - du) * f(r0, c0) + du * f(r0, c1))
        + dv * ((1.0 - du) * f(r1, c0) + du * f(r1, c1))
}

/// Crop the ground-truth mask to the RoI (continuous crop), resample to
/// m x m by bilinear interpolation of the {0,1} field, and binarize at
/// >= 0.5. A degenerate RoI produces an all-zero, flagged target.
pub fn make_mask_target(
    roi: &BBox,
    gt_mask: &BinaryMask,
    m: usize,
    class: usize,
) -> Result<MaskTarget> {
    if gt_mask.height == 0 || gt_mask.width == 0 {
        return Err(Error::invalid("make_mask_target: empty ground-truth mask".to_string()));
    }
    if m == 0 {
        return Err(Error::invalid("make_mask_target: m must be >= 1".to_string()));
    }
    let (w, h) = (roi.width(), roi.height());
    if w <= 0.0 || h <= 0.0 {
        return Ok(MaskTarget { grid: vec![0; m * m], resolution: m, class, degenerate: true });
    }
    let mut grid = vec![0u8; m * m];
    for r in 0..m {
        let y = roi.y1 + (r as f64 + 0.5) / m as f64 * h;
        for c in 0..m {
            let x = roi.x1 + (c as f64 + 0.5) / m as f64 * w;
            grid[r * m + c] = u8::from(sample_mask(gt_mask, x, y) >= 0.5);
        }
    }
    Ok(MaskTarget { grid, resolution: m, class, degenerate: false })
}

/// Map each visible keypoint to the RoI-relative cell containing it; the
/// left/top edges are inclusive, the right/bottom exclusive. Keypoints
/// outside the RoI are dropped from the loss.
pub fn make_keypoint_target(
    roi: &BBox,
    keypoints: &[(f64, f64, bool)],
    m: usize,
) -> Result<KeypointTarget> {
    if m == 0 {
        return Err(Error::invalid("make_keypoint_target: m must be >= 1".to_string()));
    }
    let (w, h) = (roi.width(), roi.height());
    let mut cells = Vec::with_capacity(keypoints.len());
    for &(x, y, visible) in keypoints {
        if !visible || w <= 0.0 || h <= 0.0 {
            cells.push(None);
            continue;
        }
        if x < roi.x1 || x >= roi.x2 || y < roi.y1 || y >= roi.y2 {
            cells.push(None);
            continue;
        }
        let col = (((x - roi.x1) / w) * m as f64).floor() as usize;
        let row = (((y - roi.y1) / h) * m as f64).floor() as usize;
        cells.push(Some(row.min(m - 1) * m + col.min(m - 1)));
    }
    Ok(KeypointTarget { cells, resolution: m })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_mask(h: usize, w: usize) -> BinaryMask {
        let mut m = BinaryMask::zeros(h, w);
        m.data.iter_mut().for_each(|v| *v = 1);
        m
    }

    #[test]
    fn covering_gt_gives_all_ones() {
        let gt = full_mask(32, 32);
        let roi = BBox::new(4.0, 4.0, 28.0, 28.0).unwrap();
        let t = make_mask_target(&roi, &gt, 14, 1).unwrap();
        assert!(t.grid.iter().all(|&v| v == 1));
        assert!(!t.degenerate);
    }

    #[test]
    fn disjoint_gt_gives_all_zeros() {
        let mut gt = BinaryMask::zeros(32, 32);
        for r in 0..4 {
            for c in 0..4 {
                gt.set(r, c, 1);
            }
        }
        let roi = BBox::new(16.0, 16.0, 30.0, 30.0).unwrap();
        let t = make_mask_target(&roi, &gt, 14, 2).unwrap();
        assert!(t.grid.iter().all(|&v| v == 0));
    }

    #[test]
    fn half_plane_at_pixel_boundary_splits_columns() {
        // gt covers the left half of a 32-wide image; RoI is the full
        // image; m = 8 -> left 4 target columns 1, right 4 columns 0
        let mut gt = BinaryMask::zeros(32, 32);
        for r in 0..32 {
            for c in 0..16 {
                gt.set(r, c, 1);
            }
        }
        let roi = BBox::new(0.0, 0.0, 32.0, 32.0).unwrap();
        let t = make_mask_target(&roi, &gt, 8, 1).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(t.grid[r * 8 + c], u8::from(c < 4), "cell ({r},{c})");
            }
        }
    }

    #[test]
    fn degenerate_roi_flagged() {
        let gt = full_mask(16, 16);
        let roi = BBox::new(5.0, 5.0, 5.0, 9.0).unwrap();
        let t = make_mask_target(&roi, &gt, 4, 1).unwrap();
        assert!(t.degenerate);
        assert!(t.grid.iter().all(|&v| v == 0));
    }

    #[test]
    fn idempotent_on_axis_aligned_half_planes() {
        // re-applying at the same m over the target-as-mask is identity
        let mut gt = BinaryMask::zeros(16, 16);
        for r in 0..16 {
            for c in 0..7 {
                gt.set(r, c, 1);
            }
        }
        let m = 16;
        let roi = BBox::new(0.0, 0.0, 16.0, 16.0).unwrap();
        let first = make_mask_target(&roi, &gt, m, 1).unwrap();
        let as_mask = BinaryMask { height: m, width: m, data: first.grid.clone() };
        let roi2 = BBox::new(0.0, 0.0, m as f64, m as f64).unwrap();
        let second = make_mask_target(&roi2, &as_mask, m, 1).unwrap();
        assert_eq!(first.grid, second.grid);
    }

    #[test]
    fn keypoint_at_center_maps_to_middle_cell() {
        let roi = BBox::new(10.0, 10.0, 20.0, 20.0).unwrap();
        let t = make_keypoint_target(&roi, &[(15.0, 15.0, true)], 56).unwrap();
        assert_eq!(t.cells[0], Some(28 * 56 + 28));
    }

    #[test]
    fn invisible_and_outside_keypoints_dropped() {
        let roi = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let t = make_keypoint_target(
            &roi,
            &[(5.0, 5.0, false), (50.0, 5.0, true), (5.0, 5.0, true)],
            8,
        )
        .unwrap();
        assert_eq!(t.cells[0], None);
        assert_eq!(t.cells[1], None);
        assert!(t.cells[2].is_some());
        assert_eq!(t.visible(), 1);
    }

    #[test]
    fn left_edge_maps_to_column_zero() {
        let roi = BBox::new(4.0, 4.0, 12.0, 12.0).unwrap();
        let t = make_keypoint_target(&roi, &[(4.0, 8.0, true)], 8).unwrap();
        let cell = t.cells[0].unwrap();
        assert_eq!(cell % 8, 0);
        // right edge is exclusive
        let t2 = make_keypoint_target(&roi, &[(12.0, 8.0, true)], 8).unwrap();
        assert_eq!(t2.cells[0], None);
    }
}
