//! Planar points and 2D affine transforms.

use serde::{Deserialize, Serialize};

use crate::math;

/// A point in pixel space: `x` grows to the east (columns), `y` grows to the
/// south (rows). Integer coordinates are pixel centres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        math::hypot(self.x - other.x, self.y - other.y)
    }

    pub fn dist2(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// A point in the local planar world frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub east: f64,
    pub north: f64,
}

impl WorldPoint {
    pub const fn new(east: f64, north: f64) -> Self {
        Self { east, north }
    }

    pub fn dist(self, other: WorldPoint) -> f64 {
        math::hypot(self.east - other.east, self.north - other.north)
    }
}

/// Affine map `p' = A p + t`, stored as the 2x3 matrix `[A | t]`.
///
/// In the pipeline it maps query pixel coordinates into reference pixel
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 6]", from = "[f64; 6]")]
pub struct AffineTransform2D {
    pub m: [[f64; 3]; 2],
}

impl From<AffineTransform2D> for [f64; 6] {
    fn from(t: AffineTransform2D) -> Self {
        t.row_major()
    }
}

impl From<[f64; 6]> for AffineTransform2D {
    fn from(v: [f64; 6]) -> Self {
        Self {
            m: [[v[0], v[1], v[2]], [v[3], v[4], v[5]]],
        }
    }
}

impl Default for AffineTransform2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform2D {
    pub const fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    /// Rotation by `deg` about `center`. Positive angles turn clockwise on a
    /// north-up display (y axis pointing down).
    pub fn rotation_about(center: Point2, deg: f64) -> Self {
        let th = deg.to_radians();
        let (s, c) = (math::sin(th), math::cos(th));
        let tx = center.x - (c * center.x - s * center.y);
        let ty = center.y - (s * center.x + c * center.y);
        Self {
            m: [[c, -s, tx], [s, c, ty]],
        }
    }

    pub fn row_major(&self) -> [f64; 6] {
        [
            self.m[0][0],
            self.m[0][1],
            self.m[0][2],
            self.m[1][0],
            self.m[1][1],
            self.m[1][2],
        ]
    }

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        Point2 {
            x: self.m[0][0] * p.x + self.m[0][1] * p.y + self.m[0][2],
            y: self.m[1][0] * p.x + self.m[1][1] * p.y + self.m[1][2],
        }
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Ratio of the larger to the smaller singular value of the linear part;
    /// 1 for similarities, infinite when singular.
    pub fn anisotropy(&self) -> f64 {
        let [[a, b, _], [c, d, _]] = self.m;
        let e = (a + d) / 2.0;
        let f = (a - d) / 2.0;
        let g = (c + b) / 2.0;
        let h = (c - b) / 2.0;
        let q = math::hypot(e, h);
        let r = math::hypot(f, g);
        let (s1, s2) = (q + r, (q - r).abs());
        if s2 <= 1e-12 * s1.max(1.0) {
            f64::INFINITY
        } else {
            s1 / s2
        }
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det.abs() < 1e-12 || !det.is_finite() {
            return None;
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Some(Self {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        })
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        let a = &self.m;
        let b = &other.m;
        Self {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                    a[0][0] * b[0][2] + a[0][1] * b[1][2] + a[0][2],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                    a[1][0] * b[0][2] + a[1][1] * b[1][2] + a[1][2],
                ],
            ],
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let a = self.row_major();
        let b = other.row_major();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Exact affine through three correspondences; `None` if the source
    /// triangle is degenerate.
    pub fn from_three(src: [Point2; 3], dst: [Point2; 3]) -> Option<Self> {
        let area2 = triangle_area2(src[0], src[1], src[2]);
        if area2.abs() < 1e-9 {
            return None;
        }
        let rows = [
            [src[0].x, src[0].y, 1.0],
            [src[1].x, src[1].y, 1.0],
            [src[2].x, src[2].y, 1.0],
        ];
        let rx = solve3(rows, [dst[0].x, dst[1].x, dst[2].x])?;
        let ry = solve3(rows, [dst[0].y, dst[1].y, dst[2].y])?;
        Some(Self { m: [rx, ry] })
    }

    /// Least-squares affine fit `dst ≈ T(src)`. Needs at least three
    /// non-collinear sources.
    pub fn fit_least_squares(src: &[Point2], dst: &[Point2]) -> Option<Self> {
        let n = src.len();
        if n < 3 || dst.len() != n {
            return None;
        }
        // Centre both sets for conditioning.
        let (mut cx, mut cy, mut dx, mut dy) = (0.0, 0.0, 0.0, 0.0);
        for (s, d) in src.iter().zip(dst) {
            cx += s.x;
            cy += s.y;
            dx += d.x;
            dy += d.y;
        }
        let nf = n as f64;
        let (cx, cy, dx, dy) = (cx / nf, cy / nf, dx / nf, dy / nf);

        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        let (mut bx0, mut bx1, mut by0, mut by1) = (0.0, 0.0, 0.0, 0.0);
        for (s, d) in src.iter().zip(dst) {
            let (x, y) = (s.x - cx, s.y - cy);
            let (u, v) = (d.x - dx, d.y - dy);
            sxx += x * x;
            sxy += x * y;
            syy += y * y;
            bx0 += x * u;
            bx1 += y * u;
            by0 += x * v;
            by1 += y * v;
        }
        let det = sxx * syy - sxy * sxy;
        if det.abs() <= 1e-9 * (sxx * syy).max(1e-300) {
            return None;
        }
        let a00 = (syy * bx0 - sxy * bx1) / det;
        let a01 = (sxx * bx1 - sxy * bx0) / det;
        let a10 = (syy * by0 - sxy * by1) / det;
        let a11 = (sxx * by1 - sxy * by0) / det;
        Some(Self {
            m: [
                [a00, a01, dx - a00 * cx - a01 * cy],
                [a10, a11, dy - a10 * cx - a11 * cy],
            ],
        })
    }
}

pub(crate) fn triangle_area2(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
pub(crate) fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_composes_to_identity() {
        let t = AffineTransform2D {
            m: [[1.2, -0.3, 14.0], [0.25, 0.9, -7.5]],
        };
        let id = t.compose(&t.inverse().unwrap());
        assert!(id.max_abs_diff(&AffineTransform2D::identity()) < 1e-12);
    }

    #[test]
    fn exact_fit_recovers_transform() {
        let t = AffineTransform2D::rotation_about(Point2::new(50.0, 40.0), 5.0)
            .compose(&AffineTransform2D::translation(20.0, -3.0));
        let src = [
            Point2::new(0.0, 0.0),
            Point2::new(100.0, 10.0),
            Point2::new(30.0, 90.0),
        ];
        let dst = src.map(|p| t.apply(p));
        let fit = AffineTransform2D::from_three(src, dst).unwrap();
        assert!(fit.max_abs_diff(&t) < 1e-9);
    }

    #[test]
    fn collinear_points_are_rejected() {
        let src = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(2.0, 2.0),
        ];
        assert!(AffineTransform2D::from_three(src, src).is_none());
        assert!(AffineTransform2D::fit_least_squares(&src, &src).is_none());
    }

    #[test]
    fn rotation_is_clockwise_on_screen() {
        // East (+x) turns towards south (+y) under a clockwise quarter turn.
        let r = AffineTransform2D::rotation_about(Point2::new(0.0, 0.0), 90.0);
        let p = r.apply(Point2::new(1.0, 0.0));
        assert!((p.x).abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12);
    }
}
