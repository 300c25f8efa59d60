//! Convolution and resampling kernels on raw channel-first buffers.
//!
//! Convolution lowers to a single matrix product through an im2col buffer:
//! the weight matrix is `c_out × (c_in·k·k)` and the column buffer is
//! `(c_in·k·k) × (h_out·w_out)`.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn out_pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    /// 1×1, stride 1, no padding: the input already is the column buffer.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output columns `ox` whose input column `ox·stride + kj − padding` lies
/// inside the image.
/// Input channels per block when scattering the input gradient.
const CHANNEL_BLOCK: usize = 8;

fn valid_cols(g: &ConvGeometry, kj: usize, wo: usize) -> (usize, usize) {
    let lo = if g.padding > kj {
        (g.padding - kj).div_ceil(g.stride)
    } else {
        0
    };
    let hi = if g.width + g.padding > kj {
        ((g.width + g.padding - kj - 1) / g.stride + 1).min(wo)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn im2col<T: Real>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut cols = Vec::with_capacity(g.patch_len() * g.out_pixels());
    im2col_channels(input, g, 0..g.c_in, &mut cols);
    cols
}

/// Appends the column rows of channels `channels` to `cols`. Every entry is
/// written, padding included, so `cols` needs no prior zeroing.
fn im2col_channels<T: Real>(input: &[T], g: &ConvGeometry, channels: std::ops::Range<usize>, cols: &mut Vec<T>) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = valid_cols(g, kj, wo);
                let ix0 = (lo * g.stride + kj).saturating_sub(g.padding);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize || lo == hi {
                        cols.resize(cols.len() + wo, T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    cols.resize(cols.len() + lo, T::zero());
                    if g.stride == 1 {
                        cols.extend_from_slice(&src_row[ix0..ix0 + (hi - lo)]);
                    } else {
                        cols.extend(src_row[ix0..].iter().step_by(g.stride).take(hi - lo));
                    }
                    cols.resize(cols.len() + wo - hi, T::zero());
                }
            }
        }
    }
}

/// Scatters the column rows of channels `channels` (starting at the first row
/// of `cols`) back onto the image gradient.
fn col2im_add<T: Real>(cols: &[T], g: &ConvGeometry, channels: std::ops::Range<usize>, grad_input: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for (local, c) in channels.enumerate() {
        let plane = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (local * k + ki) * k + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                let (lo, hi) = valid_cols(g, kj, wo);
                if lo == hi {
                    continue;
                }
                let ix0 = lo * g.stride + kj - g.padding;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[oy * wo + lo..oy * wo + hi];
                    if g.stride == 1 {
                        for (d, &s) in dst_row[ix0..ix0 + (hi - lo)].iter_mut().zip(src_row) {
                            *d += s;
                        }
                    } else {
                        for (d, &s) in dst_row[ix0..].iter_mut().step_by(g.stride).zip(src_row) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(input: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
    conv2d_forward_keep(input, weight, bias, g, false).0
}

/// Like [`conv2d_forward`], optionally handing back the column buffer for a
/// later weight gradient (never for pointwise convolutions).
pub(crate) fn conv2d_forward_keep<T: Real>(
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &ConvGeometry,
    keep_cols: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let n = g.out_pixels();
    let mut out = vec![T::zero(); g.c_out * n];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(n).zip(b) {
            row.iter_mut().for_each(|v| *v = bv);
        }
    }
    let owned = (!g.is_pointwise()).then(|| im2col(input, g));
    let cols: &[T] = owned.as_deref().unwrap_or(input);
    let kk = g.patch_len();
    T::gemm(
        g.c_out,
        kk,
        n,
        T::one(),
        weight,
        kk,
        1,
        cols,
        n,
        1,
        T::one(),
        &mut out,
        n,
        1,
    );
    (out, keep_cols.then_some(owned).flatten())
}

/// Vector-Jacobian products of [`conv2d_forward`]. Each requested gradient is
/// accumulated into the provided buffer.
pub fn conv2d_backward<T: Real>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    grad_input: Option<&mut [T]>,
    grad_weight: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    conv2d_backward_cols(input, None, weight, grad_out, g, grad_input, grad_weight, grad_bias)
}

/// [`conv2d_backward`] reusing the forward column buffer when available.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_cols<T: Real>(
    input: &[T],
    cached_cols: Option<&[T]>,
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    grad_input: Option<&mut [T]>,
    grad_weight: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let n = g.out_pixels();
    let kk = g.patch_len();
    if let Some(gb) = grad_bias {
        for (acc, row) in gb.iter_mut().zip(grad_out.chunks(n)) {
            *acc += row.iter().copied().sum::<T>();
        }
    }
    if let Some(gw) = grad_weight {
        let owned = (!g.is_pointwise() && cached_cols.is_none()).then(|| im2col(input, g));
        let cols: &[T] = cached_cols.or(owned.as_deref()).unwrap_or(input);
        // dW += dOut · colsᵀ
        T::gemm(
            g.c_out,
            n,
            kk,
            T::one(),
            grad_out,
            n,
            1,
            cols,
            1,
            n,
            T::one(),
            gw,
            kk,
            1,
        );
    }
    if let Some(gi) = grad_input {
        // dCols = Wᵀ · dOut
        if g.is_pointwise() {
            T::gemm(
                kk,
                g.c_out,
                n,
                T::one(),
                weight,
                1,
                kk,
                grad_out,
                n,
                1,
                T::one(),
                gi,
                n,
                1,
            );
        } else {
            // dCols = Wᵀ · dOut, a block of input channels at a time so the
            // scratch stays small.
            let kk2 = g.kernel * g.kernel;
            let block = CHANNEL_BLOCK.min(g.c_in);
            let mut dcols = vec![T::zero(); block * kk2 * n];
            for c0 in (0..g.c_in).step_by(block) {
                let c1 = (c0 + block).min(g.c_in);
                let rows = (c1 - c0) * kk2;
                T::gemm(
                    rows,
                    g.c_out,
                    n,
                    T::one(),
                    &weight[c0 * kk2..],
                    1,
                    kk,
                    grad_out,
                    n,
                    1,
                    T::zero(),
                    &mut dcols[..rows * n],
                    n,
                    1,
                );
                col2im_add(&dcols, g, c0..c1, gi);
            }
        }
    }
}

pub fn upsample_nearest2x_forward<T: Real>(input: &[T], channels: usize, height: usize, width: usize) -> Vec<T> {
    let (h2, w2) = (2 * height, 2 * width);
    let mut out = vec![T::zero(); channels * h2 * w2];
    for c in 0..channels {
        for y in 0..h2 {
            let src = &input[(c * height + y / 2) * width..(c * height + y / 2 + 1) * width];
            let dst = &mut out[(c * h2 + y) * w2..(c * h2 + y + 1) * w2];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2x_backward<T: Real>(
    grad_out: &[T],
    channels: usize,
    height: usize,
    width: usize,
    grad_input: &mut [T],
) {
    let (h2, w2) = (2 * height, 2 * width);
    for c in 0..channels {
        for y in 0..h2 {
            let src = &grad_out[(c * h2 + y) * w2..(c * h2 + y + 1) * w2];
            let dst = &mut grad_input[(c * height + y / 2) * width..(c * height + y / 2 + 1) * width];
            for (x, &s) in src.iter().enumerate() {
                dst[x / 2] += s;
            }
        }
    }
}
