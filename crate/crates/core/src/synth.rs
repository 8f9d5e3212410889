//! Seeded procedural RGB images: smooth colour gradients, anti-aliased discs
//! and rectangles, and striped patches. They contain both flat regions and
//! sharp edges, which is enough for smoke training and quantization tests.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Shape, Tensor};

enum Figure {
    Disc {
        cy: f32,
        cx: f32,
        r: f32,
    },
    Rect {
        y0: f32,
        x0: f32,
        y1: f32,
        x1: f32,
    },
    Stripes {
        cy: f32,
        cx: f32,
        r: f32,
        freq: f32,
        angle: f32,
    },
}

impl Figure {
    /// Coverage in `[0, 1]` at pixel centre `(y, x)`.
    fn coverage(&self, y: f32, x: f32) -> f32 {
        let edge = |d: f32| (0.5 - d).clamp(0.0, 1.0);
        match *self {
            Figure::Disc { cy, cx, r } => edge(((y - cy).powi(2) + (x - cx).powi(2)).sqrt() - r),
            Figure::Rect { y0, x0, y1, x1 } => {
                let d = (y0 - y).max(y - y1).max(x0 - x).max(x - x1);
                edge(d)
            }
            Figure::Stripes {
                cy,
                cx,
                r,
                freq,
                angle,
            } => {
                let inside = edge(((y - cy).powi(2) + (x - cx).powi(2)).sqrt() - r);
                let t = (x - cx) * angle.cos() + (y - cy) * angle.sin();
                inside * (0.5 + 0.5 * (t * freq).sin())
            }
        }
    }
}

/// `h x w` RGB image in `[0, 1]`, fully determined by `seed`.
pub fn image(seed: u64, h: usize, w: usize) -> Result<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colour = |rng: &mut ChaCha8Rng| -> [f32; 3] { [rng.random(), rng.random(), rng.random()] };
    let corners = [
        colour(&mut rng),
        colour(&mut rng),
        colour(&mut rng),
        colour(&mut rng),
    ];
    let (hf, wf) = (h as f32, w as f32);
    let side = hf.min(wf);
    let count = rng.random_range(12..24);
    let mut figures: Vec<(Figure, [f32; 3])> = Vec::with_capacity(count);
    for _ in 0..count {
        let cy = rng.random_range(0.0..hf);
        let cx = rng.random_range(0.0..wf);
        let r = rng.random_range(0.03..0.2) * side;
        let fig = match rng.random_range(0..3) {
            0 => Figure::Disc { cy, cx, r },
            1 => Figure::Rect {
                y0: cy - r,
                x0: cx - r * 0.7,
                y1: cy + r * 0.6,
                x1: cx + r,
            },
            _ => Figure::Stripes {
                cy,
                cx,
                r,
                freq: rng.random_range(0.3..1.6),
                angle: rng.random_range(0.0..core::f32::consts::PI),
            },
        };
        figures.push((fig, colour(&mut rng)));
    }
    let shape = Shape::new(1, h, w, 3);
    let mut data = Vec::with_capacity(shape.len());
    for y in 0..h {
        let v = if h > 1 { y as f32 / (hf - 1.0) } else { 0.0 };
        for x in 0..w {
            let u = if w > 1 { x as f32 / (wf - 1.0) } else { 0.0 };
            let mut px = [0.0f32; 3];
            for (c, p) in px.iter_mut().enumerate() {
                *p = (1.0 - v) * ((1.0 - u) * corners[0][c] + u * corners[1][c])
                    + v * ((1.0 - u) * corners[2][c] + u * corners[3][c]);
            }
            let (py, pxx) = (y as f32 + 0.5, x as f32 + 0.5);
            for (fig, col) in &figures {
                let a = fig.coverage(py, pxx);
                if a > 0.0 {
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - a) + col[c] * a;
                    }
                }
            }
            data.extend(px.iter().map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Tensor::from_vec(shape, data)
}

/// `count` images with consecutive seeds starting at `seed`.
pub fn images(seed: u64, count: usize, h: usize, w: usize) -> Result<Vec<Tensor<f32>>> {
    (0..count as u64)
        .map(|i| image(seed.wrapping_add(i), h, w))
        .collect()
}
