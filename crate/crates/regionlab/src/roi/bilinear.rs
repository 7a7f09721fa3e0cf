//! Bilinear interpolation on the feature grid.

use crate::tensor::Tensor;

/// The four grid neighbors of a continuous point with their weights,
/// restricted to in-range coordinates. Grid point (i, j) sits at
/// continuous (x = j, y = i).
pub(crate) fn neighbor_weights(
    x: f64,
    y: f64,
    height: usize,
    width: usize,
) -> [(usize, usize, f64); 4] {
    let x0 = x.floor();
    let y0 = y.floor();
    let dx = x - x0;
    let dy = y - y0;
    let mut out = [(0usize, 0usize, 0.0f64); 4];
    let mut k = 0;
    for (ny, wy) in [(y0, 1.0 - dy), (y0 + 1.0, dy)] {
        for (nx, wx) in [(x0, 1.0 - dx), (x0 + 1.0, dx)] {
            let w = wy * wx;
            if w != 0.0 && ny >= 0.0 && nx >= 0.0 && (ny as usize) < height && (nx as usize) < width
            {
                out[k] = (ny as usize, nx as usize, w);
                k += 1;
            }
        }
    }
    // entries past k keep weight 0.0 and are skipped by callers
    out
}

/// Value of every channel at continuous (x, y). Coordinates outside
/// [-1, W] x [-1, H] contribute nothing; partial-boundary samples use
/// zero for missing neighbors.
pub fn bilinear_sample(feature: &Tensor, x: f64, y: f64) -> Vec<f64> {
    let mut out = vec![0.0; feature.shape()[0]];
    sample_into(feature, x, y, &mut out);
    out
}

/// Same as [`bilinear_sample`] but accumulates channel values into `out`.
pub(crate) fn sample_into(feature: &Tensor, x: f64, y: f64, out: &mut [f64]) {
    let (c, h, w) = (feature.shape()[0], feature.shape()[1], feature.shape()[2]);
    debug_assert_eq!(out.len(), c);
    let data = feature.data();
    for (ny, nx, weight) in neighbor_weights(x, y, h, w) {
        if weight == 0.0 {
            continue;
        }
        let base = ny * w + nx;
        for (ci, o) in out.iter_mut().enumerate() {
            *o += weight * data[ci * h * w + base];
        }
    }
}
