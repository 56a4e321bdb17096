//! Procedural ground-truth scenes: a smooth colour ramp overlaid with
//! anti-aliased ellipses, rotated rectangles and sinusoidal gratings.
//! Stands in for a photographic dataset when none is at hand.

use rand::Rng;

use crate::image::{Image, PixelSpace};

enum Shape {
    Ellipse { a: f64, b: f64 },
    Rect { a: f64, b: f64 },
    Grating { radius: f64, freq: f64, other: [f64; 3] },
}

struct Placed {
    cx: f64,
    cy: f64,
    angle: f64,
    color: [f64; 3],
    shape: Shape,
}

impl Placed {
    /// Coverage in [0, 1] and the colour at pixel centre `(x, y)`.
    fn eval(&self, x: f64, y: f64) -> (f64, [f64; 3]) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        let dist = match self.shape {
            Shape::Ellipse { a, b } => (((u / a).powi(2) + (v / b).powi(2)).sqrt() - 1.0) * a.min(b),
            Shape::Rect { a, b } => (u.abs() - a).max(v.abs() - b),
            Shape::Grating { radius, freq, other } => {
                let t = 0.5 + 0.5 * (freq * u).sin();
                let mixed = [0, 1, 2].map(|k| self.color[k] * (1.0 - t) + other[k] * t);
                return (coverage((u * u + v * v).sqrt() - radius), mixed);
            }
        };
        (coverage(dist), self.color)
    }
}

/// One-pixel-wide linear edge ramp from an approximate signed distance.
fn coverage(dist: f64) -> f64 {
    (0.5 - dist).clamp(0.0, 1.0)
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.random_range(0.05..0.95))
}

pub fn random_scene<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Image {
    let (hf, wf) = (height as f64, width as f64);
    let scale = hf.min(wf);
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let dir = rng.random_range(0.0..std::f64::consts::TAU);
    let (ds, dc) = dir.sin_cos();

    let count = rng.random_range(6..14);
    let shapes: Vec<Placed> = (0..count)
        .map(|_| {
            let size = scale * rng.random_range(0.06..0.3);
            let shape = match rng.random_range(0..3) {
                0 => Shape::Ellipse {
                    a: size,
                    b: size * rng.random_range(0.4..1.0),
                },
                1 => Shape::Rect {
                    a: size,
                    b: size * rng.random_range(0.3..1.0),
                },
                _ => Shape::Grating {
                    radius: size,
                    freq: rng.random_range(0.3..1.2),
                    other: random_color(rng),
                },
            };
            Placed {
                cx: rng.random_range(0.0..wf),
                cy: rng.random_range(0.0..hf),
                angle: rng.random_range(0.0..std::f64::consts::PI),
                color: random_color(rng),
                shape,
            }
        })
        .collect();

    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let t = (((xf - wf / 2.0) * dc + (yf - hf / 2.0) * ds) / scale + 0.5).clamp(0.0, 1.0);
            let mut px = [0, 1, 2].map(|k| c0[k] * (1.0 - t) + c1[k] * t);
            for shape in &shapes {
                let (alpha, color) = shape.eval(xf, yf);
                if alpha > 0.0 {
                    for k in 0..3 {
                        px[k] = px[k] * (1.0 - alpha) + color[k] * alpha;
                    }
                }
            }
            data.extend(px.iter().map(|&v| v.clamp(0.0, 1.0) as f32));
        }
    }
    Image::from_raw(height, width, 3, data, PixelSpace::LinearRgb)
}
