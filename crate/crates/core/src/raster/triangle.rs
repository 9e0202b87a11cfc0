//! Screen-space triangle setup with a top-left fill rule.

use nalgebra::Vector2;

/// Twice the signed area of `(a, b, p)`; positive when `p` lies on the
/// interior side of the directed edge `a -> b` for a normalized triangle.
#[inline]
pub fn edge_function(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// With `y` pointing down and interiors on the positive side, a top edge is
/// horizontal and runs toward `+x`; a left edge runs toward `-y`.
#[inline]
fn is_top_left(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let d = b - a;
    d.y < 0.0 || (d.y == 0.0 && d.x > 0.0)
}

#[derive(Debug, Clone)]
pub struct ScreenTriangle {
    /// Vertices reordered so the signed area is positive.
    pub v: [Vector2<f64>; 3],
    /// Maps the reordered slots back to the caller's vertex order.
    pub order: [usize; 3],
    area: f64,
    top_left: [bool; 3],
}

impl ScreenTriangle {
    /// `None` for degenerate (zero-area or non-finite) triangles.
    pub fn new(p: [Vector2<f64>; 3]) -> Option<Self> {
        let area = edge_function(&p[0], &p[1], &p[2]);
        if !area.is_finite() || area == 0.0 {
            return None;
        }
        let (v, order) = if area > 0.0 {
            (p, [0, 1, 2])
        } else {
            ([p[0], p[2], p[1]], [0, 2, 1])
        };
        let top_left = [
            is_top_left(&v[1], &v[2]),
            is_top_left(&v[2], &v[0]),
            is_top_left(&v[0], &v[1]),
        ];
        Some(Self {
            v,
            order,
            area: area.abs(),
            top_left,
        })
    }

    /// Screen-space barycentrics of `p` in the reordered slots, or `None`
    /// when `p` is not covered under the fill rule.
    #[inline]
    pub fn barycentric(&self, p: &Vector2<f64>) -> Option<[f64; 3]> {
        let w = [
            edge_function(&self.v[1], &self.v[2], p),
            edge_function(&self.v[2], &self.v[0], p),
            edge_function(&self.v[0], &self.v[1], p),
        ];
        for (&wk, &owned) in w.iter().zip(&self.top_left) {
            if wk < 0.0 || (wk == 0.0 && !owned) {
                return None;
            }
        }
        Some([w[0] / self.area, w[1] / self.area, w[2] / self.area])
    }

    /// Inclusive range of pixel rows whose centers can be covered, clipped to
    /// `[0, height)`.
    pub fn row_range(&self, height: usize) -> Option<(usize, usize)> {
        let lo = self.v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let hi = self.v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        pixel_span(lo, hi, height)
    }

    pub fn col_range(&self, width: usize) -> Option<(usize, usize)> {
        let lo = self.v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let hi = self.v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        pixel_span(lo, hi, width)
    }
}

/// Pixels `i` with center `i + 0.5` in `[lo, hi]`, clipped to `[0, n)`.
fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    if first > last {
        None
    } else {
        Some((first as usize, last as usize))
    }
}

/// Every `(row, col)` whose pixel center the triangle covers.
pub fn covered_pixels(tri: [Vector2<f64>; 3], width: usize, height: usize) -> Vec<(usize, usize)> {
    let Some(t) = ScreenTriangle::new(tri) else {
        return Vec::new();
    };
    let (Some((r0, r1)), Some((c0, c1))) = (t.row_range(height), t.col_range(width)) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for i in r0..=r1 {
        for j in c0..=c1 {
            if t.barycentric(&Vector2::new(j as f64 + 0.5, i as f64 + 0.5)).is_some() {
                out.push((i, j));
            }
        }
    }
    out
}
