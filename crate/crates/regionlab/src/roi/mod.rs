//! RoI feature extraction, three ways.
//!
//! * `align`: no coordinate is ever rounded. The RoI is mapped to feature
//!   space by dividing by the stride, bins keep their exact fractional
//!   extents, and each bin is sampled at interior points by bilinear
//!   interpolation.
//! * `pool`: the classic quantizing operator. RoI corners round to whole
//!   feature cells, bins round again, and covered cells are max-reduced.
//! * `warp`: quantizes the RoI rectangle exactly like `pool`, then
//!   resamples bilinearly inside it like `align`.
//!
//! Grid convention: feature value (i, j) lives at continuous (x = j,
//! y = i) — not at cell centers (j + 0.5). This shifts every result by
//! half a pixel relative to the center convention; all modules here and
//! downstream assume it. Out-of-range bilinear neighbors contribute zero
//! (no clamping), which keeps the operator linear in the feature map.

mod backward;
mod bilinear;
mod forward;
mod graph_op;

pub use backward::roi_backward;
pub use bilinear::bilinear_sample;
pub use forward::{roi_align_forward, roi_pool_forward, roi_warp_forward};
pub use graph_op::RoiExtract;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiKind {
    Align,
    Pool,
    Warp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Max,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiOpSpec {
    pub kind: RoiKind,
    pub output_h: usize,
    pub output_w: usize,
    /// Sampling points per bin axis (align/warp); pool ignores it.
    pub sampling_points: usize,
    pub aggregation: Aggregation,
    pub feature_stride: f64,
}

impl RoiOpSpec {
    pub fn new(
        kind: RoiKind,
        output_h: usize,
        output_w: usize,
        sampling_points: usize,
        aggregation: Aggregation,
        feature_stride: f64,
    ) -> Result<Self> {
        if output_h == 0 || output_w == 0 {
            return Err(Error::invalid("roi spec: output extents must be >= 1".to_string()));
        }
        if sampling_points == 0 {
            return Err(Error::invalid("roi spec: sampling points must be >= 1".to_string()));
        }
        if feature_stride <= 0.0 || !feature_stride.is_finite() {
            return Err(Error::invalid("roi spec: feature stride must be positive".to_string()));
        }
        Ok(RoiOpSpec { kind, output_h, output_w, sampling_points, aggregation, feature_stride })
    }

    pub fn with_kind(mut self, kind: RoiKind) -> Self {
        self.kind = kind;
        self
    }
}

/// How a forward pass produced each output cell; enough to replay the
/// backward scatter exactly.
#[derive(Debug, Clone)]
pub enum Provenance {
    /// Average of bilinear samples: the sampling coordinates per output
    /// cell (row-major cells; identical across channels).
    BilinearAverage {
        channels: usize,
        cells: usize,
        samples_per_cell: usize,
        points: Vec<(f64, f64)>,
    },
    /// Max over bilinear samples: the winning sample coordinate per
    /// (channel, cell).
    BilinearMax { channels: usize, cells: usize, argmax: Vec<(f64, f64)> },
    /// Max over integer cells: the winning (y, x) cell per (channel,
    /// cell); None marks an empty bin.
    CellMax { channels: usize, cells: usize, argmax: Vec<Option<(usize, usize)>> },
}

impl Provenance {
    pub fn channels(&self) -> usize {
        match self {
            Provenance::BilinearAverage { channels, .. }
            | Provenance::BilinearMax { channels, .. }
            | Provenance::CellMax { channels, .. } => *channels,
        }
    }

    pub fn cells(&self) -> usize {
        match self {
            Provenance::BilinearAverage { cells, .. }
            | Provenance::BilinearMax { cells, .. }
            | Provenance::CellMax { cells, .. } => *cells,
        }
    }
}

/// Extracted RoI feature map plus the provenance of every output cell.
#[derive(Debug, Clone)]
pub struct RoiFeature {
    pub values: Tensor,
    pub provenance: Provenance,
}
