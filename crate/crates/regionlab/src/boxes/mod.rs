//! Continuous-coordinate box algebra: IoU, NMS, anchor generation, box
//! regression coding, and positive/negative RoI sampling.
//!
//! Boxes are half-open rectangles with area (x2-x1)*(y2-y1); nothing is
//! ever rounded on construction.

mod anchors;
mod coding;
mod nms;
mod sampler;

pub use anchors::{generate_anchors, AnchorSet};
pub use coding::{decode_box, encode_box, BoxDelta};
pub use nms::nms;
pub use sampler::{match_and_sample, RoiSample, SamplerConfig};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in continuous image coordinates (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::invalid(format!(
                "box coordinates must be finite: ({x1},{y1},{x2},{y2})"
            )));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::invalid(format!(
                "box must satisfy x2 >= x1, y2 >= y1: ({x1},{y1},{x2},{y2})"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let x1 = self.x1.clamp(0.0, width);
        let y1 = self.y1.clamp(0.0, height);
        BBox {
            x1,
            y1,
            x2: self.x2.clamp(x1, width),
            y2: self.y2.clamp(y1, height),
        }
    }
}

/// Intersection-over-union. An empty union (two zero-area boxes) gives 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
