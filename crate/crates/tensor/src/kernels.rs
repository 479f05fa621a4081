//! Convolution kernels built on im2col + GEMM.
//!
//! A transposed convolution is the data-gradient of a convolution, so both
//! ops share one geometry: `ConvGeom` always describes the *forward
//! convolution view* (input `cin×h×w` → output `cout×oh×ow`). A transposed
//! convolution from `a×H×W` to `b×OH×OW` is the conv view with
//! `cin = b, h = OH, cout = a, oh = H`.

use crate::gemm::gemm;
use crate::{Real, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn conv(
        (cin, h, w): (usize, usize, usize),
        (cout, kh, kw): (usize, usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(TensorError::mismatch("conv2d", "stride must be at least 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::mismatch(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        Ok(ConvGeom {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Conv view of a transposed convolution taking `cin_t×h×w` to
    /// `cout_t×OH×OW` with `OH = (h−1)·stride − 2·pad + kh`.
    pub fn transpose(
        (cin_t, h, w): (usize, usize, usize),
        (cout_t, kh, kw): (usize, usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(TensorError::mismatch("conv_transpose2d", "stride must be at least 1"));
        }
        let big_h = ((h as isize - 1) * stride as isize - 2 * pad as isize + kh as isize).max(0) as usize;
        let big_w = ((w as isize - 1) * stride as isize - 2 * pad as isize + kw as isize).max(0) as usize;
        if h == 0 || w == 0 || big_h == 0 || big_w == 0 {
            return Err(TensorError::mismatch(
                "conv_transpose2d",
                format!("output size {big_h}x{big_w} is not positive"),
            ));
        }
        Ok(ConvGeom {
            cin: cout_t,
            h: big_h,
            w: big_w,
            cout: cin_t,
            kh,
            kw,
            stride,
            pad,
            oh: h,
            ow: w,
        })
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.oh * self.ow
    }

    /// Rows of the column matrix: `cin·kh·kw`.
    pub fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one image `cin×h×w` into `cols[(c·kh+i)·kw+j][oy·ow+ox]`.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let npix = g.out_pixels();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * npix;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an image.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let npix = g.out_pixels();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * npix;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution `y = w ⋆ x` (no bias); `y` is overwritten.
pub(crate) fn conv_forward<T: Real>(x: &[T], w: &[T], g: &ConvGeom, batch: usize, y: &mut [T]) {
    let (pl, np) = (g.patch_len(), g.out_pixels());
    let mut cols = vec![T::zero(); pl * np];
    for n in 0..batch {
        im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], g, &mut cols);
        let out = &mut y[n * g.out_len()..(n + 1) * g.out_len()];
        gemm(g.cout, pl, np, T::one(), w, (pl, 1), &cols, (np, 1), T::zero(), out, (np, 1));
    }
}

/// Accumulates `dx += ∂(w ⋆ x)/∂x · dy`.
pub(crate) fn conv_backward_data<T: Real>(dy: &[T], w: &[T], g: &ConvGeom, batch: usize, dx: &mut [T]) {
    let (pl, np) = (g.patch_len(), g.out_pixels());
    let mut dcols = vec![T::zero(); pl * np];
    for n in 0..batch {
        let dyn_ = &dy[n * g.out_len()..(n + 1) * g.out_len()];
        gemm(pl, g.cout, np, T::one(), w, (1, pl), dyn_, (np, 1), T::zero(), &mut dcols, (np, 1));
        col2im(&dcols, g, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
    }
}

/// Accumulates `dw += ∂(w ⋆ x)/∂w · dy`.
pub(crate) fn conv_backward_weight<T: Real>(dy: &[T], x: &[T], g: &ConvGeom, batch: usize, dw: &mut [T]) {
    let (pl, np) = (g.patch_len(), g.out_pixels());
    let mut cols = vec![T::zero(); pl * np];
    for n in 0..batch {
        im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], g, &mut cols);
        let dyn_ = &dy[n * g.out_len()..(n + 1) * g.out_len()];
        gemm(g.cout, np, pl, T::one(), dyn_, (np, 1), &cols, (1, np), T::one(), dw, (pl, 1));
    }
}

/// Adds a per-channel bias to an `[N, C, spatial]` buffer.
pub(crate) fn add_channel_bias<T: Real>(y: &mut [T], bias: &[T], spatial: usize) {
    let c = bias.len();
    for (i, chunk) in y.chunks_mut(spatial).enumerate() {
        let b = bias[i % c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

/// Accumulates the per-channel sum of an `[N, C, spatial]` buffer.
pub(crate) fn channel_sums<T: Real>(dy: &[T], channels: usize, spatial: usize, out: &mut [T]) {
    for (i, chunk) in dy.chunks(spatial).enumerate() {
        out[i % channels] += chunk.iter().copied().sum::<T>();
    }
}
