//! Procedural single-channel shapes with a known generating process.

use ecgan_tensor::{Rng, Tensor};

use super::Dataset;
use crate::error::{DataError, Result};

pub const SHAPE_NAMES: [&str; 5] = ["square", "circle", "cross", "triangle", "stripes"];

/// `n_per_class` images of each of the first `K` shapes, class-major order.
///
/// Each shape is white on black, centred at `0.5 ± 0.12` of the image in
/// each axis with half-extent `r ∈ [0.2, 0.32]` (fractions of the side).
/// Position and size are the only per-sample jitter; `noise_sigma` then adds
/// i.i.d. Gaussian pixel noise, clamped to `[0,1]`.
pub fn synth_shapes(n_per_class: usize, num_classes: usize, size: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if !(2..=SHAPE_NAMES.len()).contains(&num_classes) {
        return Err(DataError::Unsupported(format!("shapes has 2..=5 classes, asked for {num_classes}")).into());
    }
    if !matches!(size, 16 | 32) || n_per_class == 0 {
        return Err(DataError::Unsupported(format!("{n_per_class} images of size {size}")).into());
    }
    let mut rng = Rng::seed(seed);
    let plane = size * size;
    let mut pixels = Vec::with_capacity(num_classes * n_per_class * plane);
    let mut labels = Vec::with_capacity(num_classes * n_per_class);
    for class in 0..num_classes {
        for _ in 0..n_per_class {
            let cx = 0.5 + rng.uniform_range(-0.12, 0.12);
            let cy = 0.5 + rng.uniform_range(-0.12, 0.12);
            let r = rng.uniform_range(0.2, 0.32);
            for y in 0..size {
                for x in 0..size {
                    let dx = (x as f64 + 0.5) / size as f64 - cx;
                    let dy = (y as f64 + 0.5) / size as f64 - cy;
                    let on = inside(class, dx, dy, r);
                    let mut v = if on { 1.0 } else { 0.0 };
                    if noise_sigma > 0.0 {
                        v += noise_sigma * rng.normal();
                    }
                    pixels.push(v.clamp(0.0, 1.0) as f32);
                }
            }
            labels.push(class);
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, 1, size, size], pixels)?, labels, num_classes)
}

fn inside(class: usize, dx: f64, dy: f64, r: f64) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    match class {
        0 => ax <= 0.8 * r && ay <= 0.8 * r,
        1 => dx * dx + dy * dy <= r * r,
        2 => (ax <= r && ay <= r / 3.0) || (ay <= r && ax <= r / 3.0),
        3 => ay <= r && ax <= (dy + r) / 2.0,
        _ => ax <= r && ay <= r && ((dy + r) / (0.4 * r)).floor() as i64 % 2 == 0,
    }
}
