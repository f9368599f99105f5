//! CPU kernels behind the graph operations.
//!
//! Convolutions lower to im2col/col2im plus GEMM. Parallel work is always cut
//! into fixed-size pieces (output-row blocks, channels) whose boundaries do not
//! depend on the thread count, and every reduction runs in a fixed order, so
//! results are bit-identical for any rayon pool size.

use rayon::prelude::*;

use crate::tensor::Scalar;

/// GEMM output rows handled by one task.
const ROW_BLOCK: usize = 64;

/// Storage of a GEMM operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    /// The logical `r×c` matrix is stored row-major as `r×c`.
    Plain,
    /// The logical `r×c` matrix is the transpose of a row-major `c×r` buffer.
    Transposed,
}

fn strides(layout: Layout, rows: usize, cols: usize) -> (isize, isize) {
    match layout {
        Layout::Plain => (cols as isize, 1),
        Layout::Transposed => (1, rows as isize),
    }
}

/// `c (m×n, row-major) = a (m×k) · b (k×n) + beta · c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    a_layout: Layout,
    b: &[S],
    b_layout: Layout,
    beta: S,
    c: &mut [S],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = strides(a_layout, m, k);
    let (rsb, csb) = strides(b_layout, k, n);
    c.par_chunks_mut(ROW_BLOCK * n)
        .enumerate()
        .for_each(|(block, c_rows)| {
            let row0 = block * ROW_BLOCK;
            let rows = c_rows.len() / n;
            // SAFETY: row0 + rows <= m, so every address touched through the
            // strides lies inside `a`, `b` and `c_rows`.
            unsafe {
                S::gemm_raw(
                    rows,
                    k,
                    n,
                    S::one(),
                    a.as_ptr().offset(row0 as isize * rsa),
                    rsa,
                    csa,
                    b.as_ptr(),
                    rsb,
                    csb,
                    beta,
                    c_rows.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

/// Geometry shared by convolution and its transpose.
///
/// The "image" side is `channels×height×width`; the "column" side is the
/// `out_h×out_w` grid of kernel placements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn placements(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Maps placement coordinate `o` and kernel offset `k` to an image index.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

/// Gathers patches of `image` into `cols` (`patch_len × placements`).
pub(crate) fn im2col<S: Scalar>(g: &Geometry, image: &[S], cols: &mut [S]) {
    debug_assert_eq!(image.len(), g.image_len());
    debug_assert_eq!(cols.len(), g.patch_len() * g.placements());
    let plane = g.height * g.width;
    let per_channel = g.kh * g.kw * g.placements();
    cols.par_chunks_mut(per_channel)
        .enumerate()
        .for_each(|(c, chunk)| {
            let src = &image[c * plane..(c + 1) * plane];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = &mut chunk[(ki * g.kw + kj) * g.placements()..][..g.placements()];
                    for oy in 0..g.out_h {
                        let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                        match Geometry::source(oy, ki, g.stride, g.pad, g.height) {
                            None => dst.fill(S::zero()),
                            Some(iy) => {
                                let line = &src[iy * g.width..(iy + 1) * g.width];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match Geometry::source(ox, kj, g.stride, g.pad, g.width) {
                                        Some(ix) => line[ix],
                                        None => S::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        });
}

/// Scatter-adds `cols` back onto `image` (adjoint of [`im2col`]).
///
/// `image` is accumulated into, not overwritten.
pub(crate) fn col2im<S: Scalar>(g: &Geometry, cols: &[S], image: &mut [S]) {
    debug_assert_eq!(image.len(), g.image_len());
    debug_assert_eq!(cols.len(), g.patch_len() * g.placements());
    let plane = g.height * g.width;
    let per_channel = g.kh * g.kw * g.placements();
    image
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(c, dst)| {
            let chunk = &cols[c * per_channel..(c + 1) * per_channel];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = &chunk[(ki * g.kw + kj) * g.placements()..][..g.placements()];
                    for oy in 0..g.out_h {
                        let Some(iy) = Geometry::source(oy, ki, g.stride, g.pad, g.height) else {
                            continue;
                        };
                        let line = &mut dst[iy * g.width..(iy + 1) * g.width];
                        let src = &row[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, &v) in src.iter().enumerate() {
                            if let Some(ix) = Geometry::source(ox, kj, g.stride, g.pad, g.width) {
                                line[ix] = line[ix] + v;
                            }
                        }
                    }
                }
            }
        });
}

/// Convolution forward. `input` is `n × g.image_len()`, `weight` is
/// `filters × g.patch_len()`; returns `n × filters × placements`.
pub(crate) fn conv2d_forward<S: Scalar>(
    g: &Geometry,
    n: usize,
    filters: usize,
    input: &[S],
    weight: &[S],
    bias: &[S],
) -> Vec<S> {
    let p = g.placements();
    let mut out = vec![S::zero(); n * filters * p];
    let mut cols = vec![S::zero(); g.patch_len() * p];
    for (x, y) in input
        .chunks(g.image_len())
        .zip(out.chunks_mut(filters * p))
    {
        im2col(g, x, &mut cols);
        gemm(filters, g.patch_len(), p, weight, Layout::Plain, &cols, Layout::Plain, S::zero(), y);
        add_channel_bias(y, bias, p);
    }
    out
}

/// Which gradients a convolution backward pass should produce.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Wanted {
    pub input: bool,
    pub params: bool,
}

pub(crate) struct ConvGrads<S> {
    pub input: Option<Vec<S>>,
    pub weight: Option<Vec<S>>,
    pub bias: Option<Vec<S>>,
}

impl<S> ConvGrads<S> {
    fn pack(want: Wanted, input: Vec<S>, weight: Vec<S>, bias: Vec<S>) -> Self {
        Self {
            input: want.input.then_some(input),
            weight: want.params.then_some(weight),
            bias: want.params.then_some(bias),
        }
    }
}

pub(crate) fn conv2d_backward<S: Scalar>(
    g: &Geometry,
    n: usize,
    filters: usize,
    input: &[S],
    weight: &[S],
    grad_out: &[S],
    want: Wanted,
) -> ConvGrads<S> {
    let p = g.placements();
    let k = g.patch_len();
    let mut d_input = vec![S::zero(); if want.input { n * g.image_len() } else { 0 }];
    let mut d_weight = vec![S::zero(); filters * k];
    let mut d_bias = vec![S::zero(); filters];
    let mut cols = vec![S::zero(); k * p];
    let mut d_cols = vec![S::zero(); k * p];
    for (i, (x, dy)) in input
        .chunks(g.image_len())
        .zip(grad_out.chunks(filters * p))
        .enumerate()
    {
        if want.params {
            im2col(g, x, &mut cols);
            gemm(filters, p, k, dy, Layout::Plain, &cols, Layout::Transposed, S::one(), &mut d_weight);
            accumulate_channel_sums(dy, &mut d_bias, p);
        }
        if want.input {
            gemm(k, filters, p, weight, Layout::Transposed, dy, Layout::Plain, S::zero(), &mut d_cols);
            col2im(g, &d_cols, &mut d_input[i * g.image_len()..(i + 1) * g.image_len()]);
        }
    }
    ConvGrads::pack(want, d_input, d_weight, d_bias)
}

/// Transposed convolution forward. Here `g` describes the *output* as the
/// image side and the input grid as the placements; `weight` is
/// `in_channels × g.patch_len()`. Returns `n × g.image_len()`.
pub(crate) fn conv_transpose2d_forward<S: Scalar>(
    g: &Geometry,
    n: usize,
    in_channels: usize,
    input: &[S],
    weight: &[S],
    bias: &[S],
) -> Vec<S> {
    let p = g.placements();
    let k = g.patch_len();
    let mut out = vec![S::zero(); n * g.image_len()];
    let mut cols = vec![S::zero(); k * p];
    for (x, y) in input.chunks(in_channels * p).zip(out.chunks_mut(g.image_len())) {
        gemm(k, in_channels, p, weight, Layout::Transposed, x, Layout::Plain, S::zero(), &mut cols);
        col2im(g, &cols, y);
        add_channel_bias(y, bias, g.height * g.width);
    }
    out
}

pub(crate) fn conv_transpose2d_backward<S: Scalar>(
    g: &Geometry,
    n: usize,
    in_channels: usize,
    input: &[S],
    weight: &[S],
    grad_out: &[S],
    want: Wanted,
) -> ConvGrads<S> {
    let p = g.placements();
    let k = g.patch_len();
    let mut d_input = vec![S::zero(); if want.input { n * in_channels * p } else { 0 }];
    let mut d_weight = vec![S::zero(); in_channels * k];
    let mut d_bias = vec![S::zero(); g.channels];
    let mut d_cols = vec![S::zero(); k * p];
    for (i, (x, dy)) in input
        .chunks(in_channels * p)
        .zip(grad_out.chunks(g.image_len()))
        .enumerate()
    {
        im2col(g, dy, &mut d_cols);
        if want.input {
            let dx = &mut d_input[i * in_channels * p..(i + 1) * in_channels * p];
            gemm(in_channels, k, p, weight, Layout::Plain, &d_cols, Layout::Plain, S::zero(), dx);
        }
        if want.params {
            gemm(in_channels, p, k, x, Layout::Plain, &d_cols, Layout::Transposed, S::one(), &mut d_weight);
            accumulate_channel_sums(dy, &mut d_bias, g.height * g.width);
        }
    }
    ConvGrads::pack(want, d_input, d_weight, d_bias)
}

fn add_channel_bias<S: Scalar>(y: &mut [S], bias: &[S], plane: usize) {
    for (row, &b) in y.chunks_mut(plane).zip(bias) {
        for v in row {
            *v = *v + b;
        }
    }
}

fn accumulate_channel_sums<S: Scalar>(dy: &[S], acc: &mut [S], plane: usize) {
    for (row, a) in dy.chunks(plane).zip(acc.iter_mut()) {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        *a = *a + S::from_f64(s);
    }
}

/// Saved state of a batch-norm forward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormCache<S> {
    pub normalized: Vec<S>,
    pub inv_std: Vec<S>,
}

/// Per-channel statistics over N, H and W of an NCHW buffer.
pub(crate) fn channel_stats<S: Scalar>(x: &[S], [n, c, h, w]: [usize; 4]) -> Vec<(f64, f64)> {
    let plane = h * w;
    let count = (n * plane) as f64;
    (0..c)
        .map(|ch| {
            let planes = || (0..n).map(move |i| &x[(i * c + ch) * plane..][..plane]);
            let mean = planes().flatten().map(|v| v.as_f64()).sum::<f64>() / count;
            let var = planes()
                .flatten()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / count;
            (mean, var)
        })
        .collect()
}

pub(crate) fn batch_norm_forward<S: Scalar>(
    x: &[S],
    dims: [usize; 4],
    stats: &[(f64, f64)],
    gamma: &[S],
    beta: &[S],
    eps: f64,
) -> (Vec<S>, NormCache<S>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let inv_std: Vec<S> = stats
        .iter()
        .map(|&(_, var)| S::from_f64(1.0 / (var + eps).sqrt()))
        .collect();
    let mut normalized = vec![S::zero(); x.len()];
    let mut out = vec![S::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * plane;
            let mean = S::from_f64(stats[ch].0);
            for j in off..off + plane {
                let xhat = (x[j] - mean) * inv_std[ch];
                normalized[j] = xhat;
                out[j] = gamma[ch] * xhat + beta[ch];
            }
        }
    }
    (out, NormCache { normalized, inv_std })
}

/// Returns `(d_input, d_gamma, d_beta)`. With `frozen` statistics the mean
/// and variance are constants and the input gradient is a plain rescale.
pub(crate) fn batch_norm_backward<S: Scalar>(
    cache: &NormCache<S>,
    dims: [usize; 4],
    gamma: &[S],
    grad_out: &[S],
    frozen: bool,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut d_input = vec![S::zero(); grad_out.len()];
    let mut d_gamma = vec![S::zero(); c];
    let mut d_beta = vec![S::zero(); c];
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |i| ((i * c + ch) * plane)..((i * c + ch) * plane + plane));
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for j in idx() {
            sum_dy += grad_out[j].as_f64();
            sum_dy_xhat += grad_out[j].as_f64() * cache.normalized[j].as_f64();
        }
        d_gamma[ch] = S::from_f64(sum_dy_xhat);
        d_beta[ch] = S::from_f64(sum_dy);
        let scale = gamma[ch] * cache.inv_std[ch];
        if frozen {
            for j in idx() {
                d_input[j] = scale * grad_out[j];
            }
        } else {
            let mean_dy = S::from_f64(sum_dy / count);
            let mean_dy_xhat = S::from_f64(sum_dy_xhat / count);
            for j in idx() {
                d_input[j] = scale * (grad_out[j] - mean_dy - cache.normalized[j] * mean_dy_xhat);
            }
        }
    }
    (d_input, d_gamma, d_beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_layouts() {
        let (m, k, n) = (130, 7, 9);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive_matmul(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, la) in [(&a, Layout::Plain), (&at, Layout::Transposed)] {
            for (bb, lb) in [(&b, Layout::Plain), (&bt, Layout::Transposed)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, la, bb, lb, 0.0, &mut c);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Geometry {
            channels: 2,
            height: 5,
            width: 6,
            kh: 3,
            kw: 2,
            stride: 2,
            pad: 1,
            out_h: 3,
            out_w: 4,
        };
        let x: Vec<f64> = (0..g.image_len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..g.patch_len() * g.placements())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
