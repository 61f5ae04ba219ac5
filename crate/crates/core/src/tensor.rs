//! Dense row-major `f64` tensors and the convolution kernels built on them.
//!
//! Image batches are laid out `[batch, channels, height, width]`.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// First element; the value of a scalar tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// `(batch, channels, height, width)` of a rank-4 tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected rank-4 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sample `index` of a batched tensor, keeping a leading batch dim of 1.
    pub fn batch_item(&self, index: usize) -> Tensor {
        let per = self.data.len() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::new(&shape, self.data[index * per..(index + 1) * per].to_vec())
    }

    /// Concatenates tensors along the leading (batch) dimension.
    pub fn stack_batch(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty());
        let inner = &items[0].shape[1..];
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        let mut batch = 0;
        for t in items {
            assert_eq!(&t.shape[1..], inner, "stack_batch shape mismatch");
            batch += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(inner);
        Tensor::new(&shape, data)
    }

    /// Per-channel sum over every axis except axis 1.
    pub fn channel_sums(&self) -> Vec<f64> {
        let c = self.shape[1];
        let inner: usize = self.shape[2..].iter().product();
        let mut out = vec![0.0; c];
        for chunk in self.data.chunks(c * inner) {
            for (ch, plane) in chunk.chunks(inner).enumerate() {
                out[ch] += plane.iter().sum::<f64>();
            }
        }
        out
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` over row-major buffers.
///
/// `a` is `m x k` (or `k x m` when `trans_a`), `b` is `k x n` (or `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe buffers whose lengths were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Unfolds `image` (`channels x height x width`) into `cols`.
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        let plane = self.height * self.width;
        for ci in 0..self.channels {
            let src = &image[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src_row = &src[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, out) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *out = if ix < 0 || ix >= self.width as isize {
                                0.0
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters-adds `cols` into `image`.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        let plane = self.height * self.width;
        for ci in 0..self.channels {
            let dst = &mut image[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst_row =
                            &mut dst[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst_row[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward 2-D convolution. `weight` is `[out, in, k, k]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (b, ci, h, w) = x.dims4();
    let (co, wci, k, _) = weight.dims4();
    assert_eq!(ci, wci, "conv2d channel mismatch");
    let geo = ConvGeometry {
        channels: ci,
        height: h,
        width: w,
        kernel: k,
        stride,
        pad,
    };
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let mut out = Tensor::zeros(&[b, co, oh, ow]);
    let mut cols = vec![0.0; geo.col_rows() * geo.col_cols()];
    let in_per = ci * h * w;
    let out_per = co * oh * ow;
    for n in 0..b {
        geo.im2col(&x.data[n * in_per..(n + 1) * in_per], &mut cols);
        let dst = &mut out.data[n * out_per..(n + 1) * out_per];
        for (c, plane) in dst.chunks_mut(oh * ow).enumerate() {
            plane.fill(bias.data[c]);
        }
        gemm(co, geo.col_rows(), oh * ow, &weight.data, false, &cols, false, 1.0, dst);
    }
    out
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let (b, ci, h, w) = x.dims4();
    let (co, _, k, _) = weight.dims4();
    let geo = ConvGeometry {
        channels: ci,
        height: h,
        width: w,
        kernel: k,
        stride,
        pad,
    };
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let gb = Tensor::new(&[co], grad_out.channel_sums());
    let mut cols = vec![0.0; geo.col_rows() * geo.col_cols()];
    let mut dcols = vec![0.0; geo.col_rows() * geo.col_cols()];
    let in_per = ci * h * w;
    let out_per = co * oh * ow;
    for n in 0..b {
        let go = &grad_out.data[n * out_per..(n + 1) * out_per];
        geo.im2col(&x.data[n * in_per..(n + 1) * in_per], &mut cols);
        gemm(co, oh * ow, geo.col_rows(), go, false, &cols, true, 1.0, &mut gw.data);
        gemm(geo.col_rows(), co, oh * ow, &weight.data, true, go, false, 0.0, &mut dcols);
        geo.col2im(&dcols, &mut gx.data[n * in_per..(n + 1) * in_per]);
    }
    (gx, gw, gb)
}

fn transposed_geometry(out_c: usize, in_h: usize, in_w: usize, k: usize, stride: usize, pad: usize) -> ConvGeometry {
    let geo = ConvGeometry {
        channels: out_c,
        height: in_h * stride,
        width: in_w * stride,
        kernel: k,
        stride,
        pad,
    };
    assert_eq!(
        (geo.out_height(), geo.out_width()),
        (in_h, in_w),
        "transposed conv kernel {k}/stride {stride}/pad {pad} cannot upsample exactly"
    );
    geo
}

/// Transposed convolution upsampling by `stride`; the exact adjoint of a
/// [`conv2d`] mapping `stride*H` down to `H`. `weight` is `[in, out, k, k]`.
pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (b, ci, h, w) = x.dims4();
    let (wci, co, k, _) = weight.dims4();
    assert_eq!(ci, wci, "conv_transpose2d channel mismatch");
    let geo = transposed_geometry(co, h, w, k, stride, pad);
    let (oh, ow) = (geo.height, geo.width);
    let mut out = Tensor::zeros(&[b, co, oh, ow]);
    let mut cols = vec![0.0; geo.col_rows() * geo.col_cols()];
    let in_per = ci * h * w;
    let out_per = co * oh * ow;
    for n in 0..b {
        gemm(geo.col_rows(), ci, h * w, &weight.data, true, &x.data[n * in_per..(n + 1) * in_per], false, 0.0, &mut cols);
        let dst = &mut out.data[n * out_per..(n + 1) * out_per];
        for (c, plane) in dst.chunks_mut(oh * ow).enumerate() {
            plane.fill(bias.data[c]);
        }
        geo.col2im(&cols, dst);
    }
    out
}

/// Gradients of [`conv_transpose2d`] with respect to input, weight and bias.
pub fn conv_transpose2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let (b, ci, h, w) = x.dims4();
    let (_, co, k, _) = weight.dims4();
    let geo = transposed_geometry(co, h, w, k, stride, pad);
    let (oh, ow) = (geo.height, geo.width);
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let gb = Tensor::new(&[co], grad_out.channel_sums());
    let mut dcols = vec![0.0; geo.col_rows() * geo.col_cols()];
    let in_per = ci * h * w;
    let out_per = co * oh * ow;
    for n in 0..b {
        geo.im2col(&grad_out.data[n * out_per..(n + 1) * out_per], &mut dcols);
        let xs = &x.data[n * in_per..(n + 1) * in_per];
        gemm(ci, geo.col_rows(), h * w, &weight.data, false, &dcols, false, 0.0, &mut gx.data[n * in_per..(n + 1) * in_per]);
        gemm(ci, h * w, geo.col_rows(), xs, false, &dcols, true, 1.0, &mut gw.data);
    }
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Direct-summation convolution used as an oracle for the im2col path.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (bn, ci, h, wd) = x.dims4();
        let (co, _, k, _) = w.dims4();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[bn, co, oh, ow]);
        for n in 0..bn {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data[((n * ci + c) * h + iy as usize) * wd + ix as usize]
                                            * w.data[((o * ci + c) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out.data[((n * co + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(5, 2, 2), (3, 1, 1), (1, 1, 0)] {
            let x = random(&[2, 3, 8, 8], &mut rng);
            let w = random(&[4, 3, k, k], &mut rng);
            let b = random(&[4], &mut rng);
            let fast = conv2d(&x, &w, &b, s, p);
            let slow = naive_conv(&x, &w, &b, s, p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(u), v> == <u, conv_t(v)> with zero bias
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random(&[1, 4, 8, 8], &mut rng);
        let v = random(&[1, 5, 4, 4], &mut rng);
        let w = random(&[5, 4, 5, 5], &mut rng);
        let lhs: f64 = conv2d(&u, &w, &Tensor::zeros(&[5]), 2, 2)
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| a * b)
            .sum();
        let up = conv_transpose2d(&v, &w, &Tensor::zeros(&[4]), 2, 2);
        assert_eq!(up.shape(), &[1, 4, 8, 8]);
        let rhs: f64 = up.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
