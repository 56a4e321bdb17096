use serde::{Deserialize, Serialize};

/// Rigid motion `p -> R(theta) (p - c) + c + d` in pixel coordinates
/// (`x` to the right, `y` down), rotating about a fixed centre `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    rotation: f64,
    translation: (f64, f64),
    center: (f64, f64),
    matrix: [[f64; 3]; 2],
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self::rigid(0.0, 0.0, 0.0)
    }

    /// Rotation (radians) about the origin followed by a translation.
    pub fn rigid(rotation: f64, dx: f64, dy: f64) -> Self {
        Self::with_center(rotation, dx, dy, (0.0, 0.0))
    }

    pub fn with_center(rotation: f64, dx: f64, dy: f64, center: (f64, f64)) -> Self {
        let (s, c) = rotation.sin_cos();
        let (cx, cy) = center;
        let matrix = [
            [c, -s, cx + dx - (c * cx - s * cy)],
            [s, c, cy + dy - (s * cx + c * cy)],
        ];
        Self {
            rotation,
            translation: (dx, dy),
            center,
            matrix,
        }
    }

    /// Rotation about the pixel-grid centre `((w - 1) / 2, (h - 1) / 2)`.
    pub fn about_image_center(rotation: f64, dx: f64, dy: f64, height: usize, width: usize) -> Self {
        Self::with_center(rotation, dx, dy, image_center(height, width))
    }

    pub fn rotation(&self) -> f64 {
        self.rotation
    }

    pub fn rotation_degrees(&self) -> f64 {
        self.rotation.to_degrees()
    }

    pub fn translation(&self) -> (f64, f64) {
        self.translation
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    /// The cached 2x3 matrix `[A | b]` with `p' = A p + b`.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        self.matrix
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.matrix;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// Group inverse; keeps the same rotation centre.
    pub fn inverse(&self) -> Self {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = self.translation;
        // -R^T d
        let ix = -(c * dx + s * dy);
        let iy = -(-s * dx + c * dy);
        Self::with_center(-self.rotation, ix, iy, self.center)
    }

    /// `self ∘ inner`: first `inner`, then `self`. The result rotates about
    /// `inner`'s centre.
    pub fn compose(&self, inner: &AffineTransform) -> Self {
        let (cx, cy) = inner.center;
        let (ox, oy) = self.apply(inner.apply(cx, cy).0, inner.apply(cx, cy).1);
        Self::with_center(self.rotation + inner.rotation, ox - cx, oy - cy, inner.center)
    }

    /// Same motion expressed on a grid whose coordinates are multiplied by
    /// `factor` (0.5 for one pyramid level down).
    pub fn rescaled(&self, factor: f64) -> Self {
        Self::with_center(
            self.rotation,
            self.translation.0 * factor,
            self.translation.1 * factor,
            (self.center.0 * factor, self.center.1 * factor),
        )
    }

    /// Same motion re-parameterised about another centre.
    pub fn recentered(&self, center: (f64, f64)) -> Self {
        let (px, py) = self.apply(center.0, center.1);
        Self::with_center(self.rotation, px - center.0, py - center.1, center)
    }

    pub fn max_matrix_diff(&self, other: &AffineTransform) -> f64 {
        let (a, b) = (self.matrix, other.matrix);
        (0..2)
            .flat_map(|r| (0..3).map(move |c| (a[r][c] - b[r][c]).abs()))
            .fold(0.0, f64::max)
    }

    /// Mean displacement between the two transforms over the four corners of
    /// an `height x width` grid.
    pub fn corner_error(&self, other: &AffineTransform, height: usize, width: usize) -> f64 {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
            .iter()
            .map(|&(x, y)| {
                let (ax, ay) = self.apply(x, y);
                let (bx, by) = other.apply(x, y);
                ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
            })
            .sum::<f64>()
            / 4.0
    }
}

pub fn image_center(height: usize, width: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

pub fn invert_transform(t: &AffineTransform) -> AffineTransform {
    t.inverse()
}

/// JSON record for a per-frame transform. Transforms are rotations about the
/// frame centre and use the gather convention of [`super::build_warp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation_deg: f64,
    pub dx: f64,
    pub dy: f64,
    pub ecc: f64,
    pub converged: bool,
}

impl TransformRecord {
    pub fn from_transform(t: &AffineTransform, ecc: f64, converged: bool) -> Self {
        Self {
            rotation_deg: t.rotation_degrees(),
            dx: t.translation().0,
            dy: t.translation().1,
            ecc,
            converged,
        }
    }

    pub fn to_transform(&self, height: usize, width: usize) -> AffineTransform {
        AffineTransform::about_image_center(self.rotation_deg.to_radians(), self.dx, self.dy, height, width)
    }
}
