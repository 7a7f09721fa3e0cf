//! Reference boxes tiled over feature-grid cells.

use super::BBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub stride: f64,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl AnchorSet {
    /// Anchors per grid cell.
    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

/// One anchor per (cell, scale, ratio), centered on the cell center
/// ((j+0.5)*stride, (i+0.5)*stride), with area scale^2 and width/height
/// ratio r. Iteration order: cells row-major, then scales, then ratios.
pub fn generate_anchors(
    grid_h: usize,
    grid_w: usize,
    stride: f64,
    scales: &[f64],
    ratios: &[f64],
) -> Result<AnchorSet> {
    if stride <= 0.0 {
        return Err(Error::invalid("anchor stride must be positive".to_string()));
    }
    if scales.is_empty() || ratios.is_empty() {
        return Err(Error::invalid("anchor scales and ratios must be nonempty".to_string()));
    }
    if scales.iter().any(|&s| s <= 0.0) || ratios.iter().any(|&r| r <= 0.0) {
        return Err(Error::invalid("anchor scales and ratios must be positive".to_string()));
    }
    let mut boxes = Vec::with_capacity(grid_h * grid_w * scales.len() * ratios.len());
    for i in 0..grid_h {
        for j in 0..grid_w {
            let cx = (j as f64 + 0.5) * stride;
            let cy = (i as f64 + 0.5) * stride;
            for &scale in scales {
                for &ratio in ratios {
                    let w = scale * ratio.sqrt();
                    let h = scale / ratio.sqrt();
                    boxes.push(BBox {
                        x1: cx - w / 2.0,
                        y1: cy - h / 2.0,
                        x2: cx + w / 2.0,
                        y2: cy + h / 2.0,
                    });
                }
            }
        }
    }
    Ok(AnchorSet {
        boxes,
        scales: scales.to_vec(),
        ratios: ratios.to_vec(),
        stride,
        grid_h,
        grid_w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_unit_ratio() {
        let set = generate_anchors(1, 1, 16.0, &[16.0], &[1.0]).unwrap();
        assert_eq!(set.boxes.len(), 1);
        let b = set.boxes[0];
        assert_eq!(b.center(), (8.0, 8.0));
        assert_eq!((b.width(), b.height()), (16.0, 16.0));
    }

    #[test]
    fn ratio_preserves_area() {
        let set = generate_anchors(1, 1, 16.0, &[20.0], &[2.0]).unwrap();
        let b = set.boxes[0];
        assert!((b.width() * b.height() - 400.0).abs() < 1e-9);
        assert!((b.width() / b.height() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn count_is_cells_times_scales_times_ratios() {
        let set = generate_anchors(2, 2, 8.0, &[8.0, 16.0], &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(set.boxes.len(), 24);
        assert_eq!(set.per_cell(), 6);
    }

    #[test]
    fn nonpositive_inputs_rejected() {
        assert!(generate_anchors(1, 1, 0.0, &[8.0], &[1.0]).is_err());
        assert!(generate_anchors(1, 1, 16.0, &[-8.0], &[1.0]).is_err());
        assert!(generate_anchors(1, 1, 16.0, &[8.0], &[]).is_err());
    }
}
