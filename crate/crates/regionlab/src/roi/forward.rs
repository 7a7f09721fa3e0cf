//! Forward passes of the three RoI operators.

use super::bilinear::sample_into;
use super::{Aggregation, Provenance, RoiFeature, RoiKind, RoiOpSpec};
use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn require_kind(spec: &RoiOpSpec, kind: RoiKind, name: &str) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::invalid(format!("{name}: spec.kind is {:?}", spec.kind)));
    }
    Ok(())
}

/// RoI rectangle in feature coordinates, with no rounding anywhere.
fn to_feature_coords(roi: &BBox, stride: f64) -> (f64, f64, f64, f64) {
    (roi.x1 / stride, roi.y1 / stride, roi.x2 / stride, roi.y2 / stride)
}

/// Quantize a feature-space coordinate to a whole cell index, rounding
/// half to even, clamped to [0, limit].
fn quantize(coord: f64, limit: usize) -> usize {
    let r = coord.round_ties_even();
    if r < 0.0 {
        0
    } else if r > limit as f64 {
        limit
    } else {
        r as usize
    }
}

/// Bilinear sampling over exact fractional bins, aggregated per bin.
/// Shared by align (on the raw rectangle) and warp (on the quantized one).
fn sample_bins(
    feature: &Tensor,
    rect: (f64, f64, f64, f64),
    spec: &RoiOpSpec,
) -> RoiFeature {
    let (c, _, _) = (feature.shape()[0], feature.shape()[1], feature.shape()[2]);
    let (oh, ow, n) = (spec.output_h, spec.output_w, spec.sampling_points);
    let (rx1, ry1, rx2, ry2) = rect;
    let bin_w = (rx2 - rx1) / ow as f64;
    let bin_h = (ry2 - ry1) / oh as f64;
    let cells = oh * ow;
    let samples_per_cell = n * n;

    let mut values = Tensor::zeros(&[c, oh, ow]);
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(cells * samples_per_cell);
    // per (channel, cell) winner for max aggregation, channel-major
    let mut argmax: Vec<(f64, f64)> = match spec.aggregation {
        Aggregation::Max => vec![(0.0, 0.0); c * cells],
        Aggregation::Average => Vec::new(),
    };
    let mut scratch = vec![0.0f64; c];
    let mut best = vec![f64::NEG_INFINITY; c];
    let mut acc = vec![0.0f64; c];

    for bi in 0..oh {
        for bj in 0..ow {
            let y0 = ry1 + bi as f64 * bin_h;
            let x0 = rx1 + bj as f64 * bin_w;
            acc.iter_mut().for_each(|v| *v = 0.0);
            best.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            let mut best_xy = vec![(0.0, 0.0); c];
            for p in 0..n {
                let sy = y0 + (p as f64 + 0.5) / n as f64 * bin_h;
                for q in 0..n {
                    let sx = x0 + (q as f64 + 0.5) / n as f64 * bin_w;
                    scratch.iter_mut().for_each(|v| *v = 0.0);
                    sample_into(feature, sx, sy, &mut scratch);
                    points.push((sx, sy));
                    for ci in 0..c {
                        match spec.aggregation {
                            Aggregation::Average => acc[ci] += scratch[ci],
                            Aggregation::Max => {
                                if scratch[ci] > best[ci] {
                                    best[ci] = scratch[ci];
                                    best_xy[ci] = (sx, sy);
                                }
                            }
                        }
                    }
                }
            }
            for ci in 0..c {
                let v = match spec.aggregation {
                    Aggregation::Average => acc[ci] / samples_per_cell as f64,
                    Aggregation::Max => best[ci],
                };
                values.set(&[ci, bi, bj], v);
            }
            if spec.aggregation == Aggregation::Max {
                let cell = bi * ow + bj;
                for ci in 0..c {
                    argmax[ci * cells + cell] = best_xy[ci];
                }
            }
        }
    }

    let provenance = match spec.aggregation {
        Aggregation::Average => Provenance::BilinearAverage {
            channels: c,
            cells,
            samples_per_cell,
            points,
        },
        Aggregation::Max => Provenance::BilinearMax { channels: c, cells, argmax },
    };
    RoiFeature { values, provenance }
}

/// Quantization-free extraction: the RoI maps to feature coordinates by
/// dividing by the stride with no rounding; bins keep fractional extents;
/// the n x n sampling pattern sits at fractions ((p+0.5)/n, (q+0.5)/n) of
/// each bin. A degenerate RoI collapses the sampling points onto a line
/// but stays well-defined.
pub fn roi_align_forward(feature: &Tensor, roi: &BBox, spec: &RoiOpSpec) -> Result<RoiFeature> {
    require_kind(spec, RoiKind::Align, "roi_align_forward")?;
    Ok(sample_bins(feature, to_feature_coords(roi, spec.feature_stride), spec))
}

/// Classic quantizing extraction: corners round to whole cells
/// (round half to even), bin (bi, bj) covers integer rows
/// [floor(bi*h/oh), ceil((bi+1)*h/oh)), and covered cells max-reduce.
/// Empty bins yield 0 with no provenance.
pub fn roi_pool_forward(feature: &Tensor, roi: &BBox, spec: &RoiOpSpec) -> Result<RoiFeature> {
    require_kind(spec, RoiKind::Pool, "roi_pool_forward")?;
    let (c, fh, fw) = (feature.shape()[0], feature.shape()[1], feature.shape()[2]);
    let (oh, ow) = (spec.output_h, spec.output_w);
    let (rx1, ry1, rx2, ry2) = to_feature_coords(roi, spec.feature_stride);
    let x1 = quantize(rx1, fw);
    let y1 = quantize(ry1, fh);
    let x2 = quantize(rx2, fw).max(x1);
    let y2 = quantize(ry2, fh).max(y1);
    let (h, w) = (y2 - y1, x2 - x1);

    let cells = oh * ow;
    let mut values = Tensor::zeros(&[c, oh, ow]);
    let mut argmax: Vec<Option<(usize, usize)>> = vec![None; c * cells];
    let data = feature.data();
    for bi in 0..oh {
        let r0 = bi * h / oh;
        let r1 = ((bi + 1) * h).div_ceil(oh);
        for bj in 0..ow {
            let c0 = bj * w / ow;
            let c1 = ((bj + 1) * w).div_ceil(ow);
            let cell = bi * ow + bj;
            for ci in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_cell = None;
                for rr in r0..r1 {
                    let iy = y1 + rr;
                    if iy >= fh {
                        continue;
                    }
                    for cc in c0..c1 {
                        let ix = x1 + cc;
                        if ix >= fw {
                            continue;
                        }
                        let v = data[(ci * fh + iy) * fw + ix];
                        if v > best {
                            best = v;
                            best_cell = Some((iy, ix));
                        }
                    }
                }
                if best_cell.is_some() {
                    values.set(&[ci, bi, bj], best);
                    argmax[ci * cells + cell] = best_cell;
                }
            }
        }
    }
    Ok(RoiFeature { values, provenance: Provenance::CellMax { channels: c, cells, argmax } })
}

/// Quantizes the RoI rectangle exactly like `pool`, then samples
/// bilinearly inside the quantized rectangle exactly like `align`.
pub fn roi_warp_forward(feature: &Tensor, roi: &BBox, spec: &RoiOpSpec) -> Result<RoiFeature> {
    require_kind(spec, RoiKind::Warp, "roi_warp_forward")?;
    let (fh, fw) = (feature.shape()[1], feature.shape()[2]);
    let (rx1, ry1, rx2, ry2) = to_feature_coords(roi, spec.feature_stride);
    let x1 = quantize(rx1, fw);
    let y1 = quantize(ry1, fh);
    let x2 = quantize(rx2, fw).max(x1);
    let y2 = quantize(ry2, fh).max(y1);
    Ok(sample_bins(feature, (x1 as f64, y1 as f64, x2 as f64, y2 as f64), spec))
}

/// Dispatch on spec.kind.
pub fn roi_extract(feature: &Tensor, roi: &BBox, spec: &RoiOpSpec) -> Result<RoiFeature> {
    match spec.kind {
        RoiKind::Align => roi_align_forward(feature, roi, spec),
        RoiKind::Pool => roi_pool_forward(feature, roi, spec),
        RoiKind::Warp => roi_warp_forward(feature, roi, spec),
    }
}
