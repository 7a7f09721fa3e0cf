//! Analytic shapes: containment tests, areas, perimeters, keypoints.
//! Rasterization is by pixel-center containment with no anti-aliasing;
//! ground truth must be exact.

/// Shape classes. Class ids are 1-based: circle 1, square 2, triangle 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Circle { cx: f64, cy: f64, r: f64 },
    /// Axis-aligned square with half-extent `half`.
    Square { cx: f64, cy: f64, half: f64 },
    /// Equilateral triangle pointing up, circumradius `r`.
    Triangle { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    pub fn from_class(class: usize, cx: f64, cy: f64, size: f64) -> Shape {
        let half = size / 2.0;
        match class {
            1 => Shape::Circle { cx, cy, r: half },
            2 => Shape::Square { cx, cy, half },
            3 => Shape::Triangle { cx, cy, r: half },
            _ => panic!("shape class must be 1..=3, got {class}"),
        }
    }

    pub fn class(&self) -> usize {
        match self {
            Shape::Circle { .. } => 1,
            Shape::Square { .. } => 2,
            Shape::Triangle { .. } => 3,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Circle { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Square { cx, cy, half } => (x - cx).abs() <= half && (y - cy).abs() <= half,
            Shape::Triangle { cx, cy, r } => {
                let verts = triangle_vertices(cx, cy, r);
                // inside iff on the same side of all three edges
                let mut sign = 0.0;
                for i in 0..3 {
                    let (x1, y1) = verts[i];
                    let (x2, y2) = verts[(i + 1) % 3];
                    let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
                    if cross.abs() < 1e-12 {
                        continue; // on the edge counts as inside
                    }
                    if sign == 0.0 {
                        sign = cross.signum();
                    } else if cross.signum() != sign {
                        return false;
                    }
                }
                true
            }
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Shape::Circle { r, .. } => std::f64::consts::PI * r * r,
            Shape::Square { half, .. } => 4.0 * half * half,
            Shape::Triangle { r, .. } => 3.0 * 3.0_f64.sqrt() / 4.0 * r * r,
        }
    }

    pub fn perimeter(&self) -> f64 {
        match *self {
            Shape::Circle { r, .. } => 2.0 * std::f64::consts::PI * r,
            Shape::Square { half, .. } => 8.0 * half,
            Shape::Triangle { r, .. } => 3.0 * 3.0_f64.sqrt() * r,
        }
    }

    /// Three keypoints per shape: centroid plus two extremal points.
    pub fn keypoints(&self) -> [(f64, f64); 3] {
        match *self {
            Shape::Circle { cx, cy, r } => [(cx, cy), (cx, cy - r), (cx + r, cy)],
            Shape::Square { cx, cy, half } => {
                [(cx, cy), (cx - half, cy - half), (cx + half, cy + half)]
            }
            Shape::Triangle { cx, cy, r } => {
                let v = triangle_vertices(cx, cy, r);
                [(cx, cy), v[0], v[2]]
            }
        }
    }
}

/// Vertices at angles 90, 210, 330 degrees: apex, bottom-left,
/// bottom-right. The vertex centroid is exactly (cx, cy).
fn triangle_vertices(cx: f64, cy: f64, r: f64) -> [(f64, f64); 3] {
    let c30 = 3.0_f64.sqrt() / 2.0;
    [(cx, cy - r), (cx - c30 * r, cy + r / 2.0), (cx + c30 * r, cy + r / 2.0)]
}
