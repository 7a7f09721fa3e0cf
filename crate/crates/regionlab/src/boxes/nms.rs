//! Greedy non-maximum suppression.

use super::{iou, BBox};

/// Greedy descending-score selection: a box is suppressed when its IoU
/// with an already kept box exceeds `threshold`. Score ties break toward
/// the lower original index, so runs are bit-reproducible. Returns kept
/// indices in selection order.
pub fn nms(boxes: &[(BBox, f64)], threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .1
            .partial_cmp(&boxes[a].1)
            .expect("nms scores must be finite")
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| iou(&boxes[k].0, &boxes[i].0) > threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn single_box_is_kept() {
        let boxes = vec![(b(0.0, 0.0, 1.0, 1.0), 0.7)];
        assert_eq!(nms(&boxes, 0.5), vec![0]);
    }

    #[test]
    fn duplicate_suppressed() {
        let boxes = vec![(b(0.0, 0.0, 1.0, 1.0), 0.9), (b(0.0, 0.0, 1.0, 1.0), 0.8)];
        assert_eq!(nms(&boxes, 0.5), vec![0]);
    }

    #[test]
    fn greedy_trace_three_boxes() {
        // pairwise IoUs: (A,B) = 0.6, (A,C) = 0.2, (B,C) ~ 0.1;
        // scores A > B > C, threshold 0.5 -> keep {A, C}.
        // A and B share 6 of 10 total area; C overlaps A slightly.
        let a = b(0.0, 0.0, 8.0, 1.0);
        let bb = b(2.0, 0.0, 10.0, 1.0); // inter 6, union 10 -> 0.6
        let c = b(6.0, 0.0, 9.0, 1.0); // vs A: inter 2, union 9 -> 0.222...
        assert!((iou(&a, &bb) - 0.6).abs() < 1e-12);
        assert!(iou(&a, &c) < 0.5 && iou(&bb, &c) > 0.0);
        let boxes = vec![(a, 0.9), (bb, 0.8), (c, 0.7)];
        assert_eq!(nms(&boxes, 0.5), vec![0, 2]);
    }

    #[test]
    fn empty_input_empty_output() {
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn tie_breaks_by_lower_index() {
        let boxes = vec![
            (b(0.0, 0.0, 1.0, 1.0), 0.5),
            (b(10.0, 10.0, 11.0, 11.0), 0.5),
        ];
        assert_eq!(nms(&boxes, 0.5), vec![0, 1]);
    }

    #[test]
    fn kept_set_is_antichain() {
        let mut rng = crate::rng::Rng::seeded(77);
        for _ in 0..50 {
            let boxes: Vec<(BBox, f64)> = (0..20)
                .map(|_| {
                    let x1 = rng.range_f64(0.0, 50.0);
                    let y1 = rng.range_f64(0.0, 50.0);
                    let w = rng.range_f64(1.0, 20.0);
                    let h = rng.range_f64(1.0, 20.0);
                    (b(x1, y1, x1 + w, y1 + h), rng.uniform())
                })
                .collect();
            let kept = nms(&boxes, 0.4);
            for (i, &a) in kept.iter().enumerate() {
                for &c in &kept[i + 1..] {
                    assert!(iou(&boxes[a].0, &boxes[c].0) <= 0.4);
                }
            }
        }
    }
}
