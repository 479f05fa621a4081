//! Datasets, loaders, the synthetic shapes set, augmentation, stratified
//! subsampling and batching.

mod idx;
mod pnm;
mod shapes;

use std::path::Path;

use ecgan_tensor::{Rng, Tensor};

use crate::error::{DataError, Result};

pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use pnm::{read_pnm, write_pnm, Image};
pub use shapes::{synth_shapes, SHAPE_NAMES};

/// Images in `[0,1]`, shape `[N,C,S,S]`, with integer labels in `0..K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(DataError::Unsupported(format!("images must be [N,C,H,W], got {s:?}")).into());
        }
        if s[0] != labels.len() {
            return Err(DataError::CountMismatch { images: s[0], labels: labels.len() }.into());
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Unsupported(format!("label {bad} outside 0..{num_classes}")).into());
        }
        Ok(Dataset { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    /// Height (images are square after loading).
    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `indices` in the given order.
    pub fn gather(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Nearest-neighbour resize to `size × size` and channel conversion
    /// (gray is replicated; colour is averaged down to gray).
    pub fn resized(&self, size: usize, channels: usize) -> Result<Dataset> {
        let s = self.images.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut out = Vec::with_capacity(n * channels * size * size);
        for img in self.images.data().chunks(c * h * w) {
            out.extend(resample(img, c, h, w, size, channels));
        }
        Dataset::new(
            Tensor::new(vec![n, channels, size, size], out)?,
            self.labels.clone(),
            self.num_classes,
        )
    }

    /// A batch of rows, optionally augmented, mapped to `[-1,1]`.
    pub fn batch(&self, indices: &[usize], augment: Option<(&AugmentPolicy, &mut Rng)>) -> Batch {
        let mut images = self.images.gather_rows(indices);
        if let Some((policy, rng)) = augment {
            images = policy.apply(&images, rng);
        }
        Batch {
            images: normalize(&images),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Nearest-neighbour resample of one `[c,h,w]` image.
pub(crate) fn resample(img: &[f32], c: usize, h: usize, w: usize, size: usize, channels: usize) -> Vec<f32> {
    let mut out = vec![0.0; channels * size * size];
    for y in 0..size {
        let sy = y * h / size;
        for x in 0..size {
            let sx = x * w / size;
            let px = |ch: usize| img[(ch * h + sy) * w + sx];
            let gray = || (0..c).map(px).sum::<f32>() / c as f32;
            for ch in 0..channels {
                out[(ch * size + y) * size + x] = if c == channels { px(ch) } else { gray() };
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B,C,S,S]` in `[-1,1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// `x ↦ (x − 0.5) / 0.5`.
pub fn normalize(images: &Tensor) -> Tensor {
    map(images, |v| (v - 0.5) / 0.5)
}

/// `x ↦ 0.5·x + 0.5`.
pub fn denormalize(images: &Tensor) -> Tensor {
    map(images, |v| v * 0.5 + 0.5)
}

fn map(t: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

/// Random pad-and-crop followed by a random rotation, both filling with zero
/// in `[0,1]` space (−1 after normalization).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Padding for the random crop; the crop offset is uniform in `[0, 2p]`.
    pub crop_pad: usize,
    /// Rotation angle is uniform in `[−deg, deg]`.
    pub rotation_deg: f64,
    pub enabled: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            crop_pad: 4,
            rotation_deg: 10.0,
            enabled: false,
        }
    }
}

impl AugmentPolicy {
    pub fn enabled() -> Self {
        AugmentPolicy {
            enabled: true,
            ..Default::default()
        }
    }

    /// Augments every image of `[N,C,H,W]` independently. Disabled policies
    /// return the input unchanged without touching `rng`.
    pub fn apply(&self, images: &Tensor, rng: &mut Rng) -> Tensor {
        if !self.enabled {
            return images.clone();
        }
        let s = images.shape();
        let (c, h, w) = (s[1], s[2], s[3]);
        let mut out = Vec::with_capacity(images.numel());
        for img in images.data().chunks(c * h * w) {
            let p = self.crop_pad as i64;
            let dx = if p > 0 { rng.below(2 * p as usize + 1) as i64 - p } else { 0 };
            let dy = if p > 0 { rng.below(2 * p as usize + 1) as i64 - p } else { 0 };
            let angle = if self.rotation_deg > 0.0 {
                rng.uniform_range(-self.rotation_deg, self.rotation_deg).to_radians()
            } else {
                0.0
            };
            out.extend(transform(img, c, h, w, dx as f64, dy as f64, angle));
        }
        Tensor::new(s.to_vec(), out).expect("same shape")
    }
}

/// Output pixel (x,y) samples the input at the inverse rotation of (x,y)
/// about the image centre, shifted by (dx,dy), bilinearly with zero fill.
fn transform(img: &[f32], c: usize, h: usize, w: usize, dx: f64, dy: f64, angle: f64) -> Vec<f32> {
    let (sin, cos) = angle.sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let (rx, ry) = (x as f64 - cx, y as f64 - cy);
            let u = cx + cos * rx + sin * ry + dx;
            let v = cy - sin * rx + cos * ry + dy;
            let (x0, y0) = (u.floor(), v.floor());
            let (fx, fy) = (u - x0, v - y0);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for ch in 0..c {
                let plane = &img[ch * h * w..(ch + 1) * h * w];
                let mut acc = 0.0f64;
                for &(tx, ty, wt) in &taps {
                    if wt != 0.0 && tx >= 0.0 && ty >= 0.0 && (tx as usize) < w && (ty as usize) < h {
                        acc += wt * f64::from(plane[ty as usize * w + tx as usize]);
                    }
                }
                out[(ch * h + y) * w + x] = acc as f32;
            }
        }
    }
    out
}

/// Stratified subsample keeping `round(percent/100 · n_c)` rows of each
/// class, chosen by a seeded shuffle; original row order is preserved.
pub fn subsample(dataset: &Dataset, percent: f64, seed: u64) -> Result<Dataset> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(DataError::Unsupported(format!("percent {percent} outside (0, 100]")).into());
    }
    let mut keep = Vec::new();
    for class in 0..dataset.num_classes {
        let mut rows: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        let available = rows.len();
        let count = (percent / 100.0 * available as f64).round() as usize;
        if count == 0 {
            return Err(DataError::Underflow { class, available, percent }.into());
        }
        Rng::stream(seed, class as u64).shuffle(&mut rows);
        keep.extend_from_slice(&rows[..count]);
    }
    keep.sort_unstable();
    Ok(dataset.gather(&keep))
}

/// Shuffled batch indices for one epoch, deterministic in `(seed, epoch)`.
/// The final short batch is kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    Rng::stream(seed, (1 << 32) + epoch as u64).shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Image directory with a `labels.csv` of `filename,label` rows
/// (header required). Labels must be non-negative integers; `K` is the
/// largest label plus one.
pub fn load_image_dir(root: &Path, labels_csv: &Path, size: usize, channels: usize) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(labels_csv)
        .map_err(|e| DataError::BadRow { row: 0, reason: e.to_string() })?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| DataError::BadRow { row, reason: e.to_string() })?;
        if rec.len() != 2 {
            return Err(DataError::BadRow { row, reason: format!("expected 2 fields, found {}", rec.len()) }.into());
        }
        let (file, label) = (rec[0].trim(), rec[1].trim());
        let label: usize = label
            .parse()
            .map_err(|_| DataError::UnknownLabel { row, label: label.to_string() })?;
        let path = root.join(file);
        if !path.is_file() {
            return Err(DataError::MissingFile { row, path: path.display().to_string() }.into());
        }
        let img = read_pnm(&path)?;
        images.extend(resample(&img.pixels, img.channels, img.height, img.width, size, channels));
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(DataError::Empty.into());
    }
    let k = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(Tensor::new(vec![labels.len(), channels, size, size], images)?, labels, k)
}
