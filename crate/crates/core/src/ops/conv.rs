//! Per-frame 2-D convolutions of the backbone: 1x1 (pointwise) and 3x3 (spatial).
//!
//! Neither mixes information across frames. Both lower to one GEMM per sample: a sample's
//! `(c, t, h, w)` block is a `c x (t*h*w)` matrix, and the 3x3 case gathers an im2col buffer
//! of `(c_in*9) x (t*h_out*w_out)` first.

use super::gemm::{gemm, MatView};
use super::GradPair;
use crate::error::{domain_err, shape_err, Result};
use crate::tensor::{lane_sum, Float, Shape, VideoTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseWeights<T> {
    pub c_out: usize,
    pub c_in: usize,
    /// Row-major `c_out x c_in`.
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Float> PointwiseWeights<T> {
    pub fn new(c_out: usize, c_in: usize, weight: Vec<T>, bias: Option<Vec<T>>) -> Result<Self> {
        if weight.len() != c_out * c_in || bias.as_ref().is_some_and(|b| b.len() != c_out) {
            return shape_err(format!("pointwise weights do not match {c_out}x{c_in}"));
        }
        Ok(PointwiseWeights { c_out, c_in, weight, bias })
    }

    pub fn identity(c: usize) -> Self {
        let mut weight = vec![T::zero(); c * c];
        for i in 0..c {
            weight[i * c + i] = T::one();
        }
        PointwiseWeights { c_out: c, c_in: c, weight, bias: None }
    }

    pub fn zeros_like(&self) -> Self {
        PointwiseWeights {
            c_out: self.c_out,
            c_in: self.c_in,
            weight: vec![T::zero(); self.weight.len()],
            bias: self.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
        }
    }
}

pub fn conv_pointwise<T: Float>(x: &VideoTensor<T>, w: &PointwiseWeights<T>) -> Result<VideoTensor<T>> {
    let s = x.shape();
    if s.c != w.c_in {
        return shape_err(format!("pointwise conv expects {} input channels, got {}", w.c_in, s.c));
    }
    let out_shape = s.with_c(w.c_out);
    let cols = s.channel_len();
    let mut out = VideoTensor::zeros(out_shape);
    for n in 0..s.n {
        let y = out.data_mut();
        if let Some(b) = &w.bias {
            for (co, &bv) in b.iter().enumerate() {
                let start = (n * w.c_out + co) * cols;
                y[start..start + cols].iter_mut().for_each(|v| *v = bv);
            }
        }
        gemm(
            T::one(),
            &w.weight,
            MatView::dense(0, w.c_out, w.c_in),
            x.data(),
            MatView::dense(n * s.sample_len(), s.c, cols),
            T::one(),
            y,
            MatView::dense(n * out_shape.sample_len(), w.c_out, cols),
        );
    }
    Ok(out)
}

pub fn conv_pointwise_backward<T: Float>(
    x: &VideoTensor<T>,
    w: &PointwiseWeights<T>,
    d_out: &VideoTensor<T>,
) -> Result<GradPair<VideoTensor<T>, PointwiseWeights<T>>> {
    let s = x.shape();
    let out_shape = s.with_c(w.c_out);
    if s.c != w.c_in || d_out.shape() != out_shape {
        return shape_err(format!("pointwise backward: input {s}, d_out {}", d_out.shape()));
    }
    let cols = s.channel_len();
    let mut d_input = VideoTensor::zeros(s);
    let mut d_w = w.zeros_like();
    for n in 0..s.n {
        gemm(
            T::one(),
            d_out.data(),
            MatView::dense(n * out_shape.sample_len(), w.c_out, cols),
            x.data(),
            MatView::dense(n * s.sample_len(), s.c, cols).t(),
            T::one(),
            &mut d_w.weight,
            MatView::dense(0, w.c_out, w.c_in),
        );
        gemm(
            T::one(),
            &w.weight,
            MatView::dense(0, w.c_out, w.c_in).t(),
            d_out.data(),
            MatView::dense(n * out_shape.sample_len(), w.c_out, cols),
            T::zero(),
            d_input.data_mut(),
            MatView::dense(n * s.sample_len(), s.c, cols),
        );
        if let Some(db) = d_w.bias.as_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += lane_sum(d_out.channel(n, co));
            }
        }
    }
    Ok(GradPair { d_input, d_weights: d_w })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights<T> {
    pub c_out: usize,
    pub c_in: usize,
    /// Row-major `c_out x c_in x 3 x 3`.
    pub weight: Vec<T>,
}

impl<T: Float> SpatialWeights<T> {
    pub fn new(c_out: usize, c_in: usize, weight: Vec<T>) -> Result<Self> {
        if weight.len() != c_out * c_in * 9 {
            return shape_err(format!("3x3 weights do not match {c_out}x{c_in}x3x3"));
        }
        Ok(SpatialWeights { c_out, c_in, weight })
    }

    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        SpatialWeights { c_out, c_in, weight: vec![T::zero(); c_out * c_in * 9] }
    }
}

/// Output extent of a 3x3, padding-1 convolution with the given stride.
pub fn conv_out_len(len: usize, stride: usize) -> usize {
    (len + 2 - 3) / stride + 1
}

fn check_stride(stride: usize) -> Result<()> {
    if stride != 1 && stride != 2 {
        return domain_err(format!("stride must be 1 or 2, got {stride}"));
    }
    Ok(())
}

/// Range of output columns whose input column `ox * stride + kx - 1` lies inside `[0, w)`.
fn valid_cols(w: usize, wo: usize, stride: usize, kx: usize) -> (usize, usize) {
    let lo = usize::from(kx == 0);
    let hi = if w >= kx { ((w - kx) / stride + 1).min(wo) } else { 0 };
    (lo, hi.max(lo))
}

/// Gather `(c_in*9) x (t*ho*wo)` patches of sample `n`.
fn im2col<T: Float>(x: &VideoTensor<T>, n: usize, stride: usize, ho: usize, wo: usize, cols: &mut [T]) {
    let s = x.shape();
    let ncols = s.t * ho * wo;
    for ci in 0..s.c {
        let src = x.channel(n, ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let (lo, hi) = valid_cols(s.w, wo, stride, kx);
                let row = (ci * 9 + ky * 3 + kx) * ncols;
                let dst = &mut cols[row..row + ncols];
                for t in 0..s.t {
                    let frame = &src[t * s.h * s.w..(t + 1) * s.h * s.w];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        let out_row = &mut dst[(t * ho + oy) * wo..(t * ho + oy + 1) * wo];
                        if iy < 0 || iy >= s.h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let in_row = &frame[iy as usize * s.w..(iy as usize + 1) * s.w];
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        if stride == 1 {
                            out_row[lo..hi].copy_from_slice(&in_row[lo + kx - 1..hi + kx - 1]);
                        } else {
                            for (ox, v) in (lo..hi).zip(&mut out_row[lo..hi]) {
                                *v = in_row[ox * stride + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add patches back into the gradient of sample `n`.
fn col2im<T: Float>(cols: &[T], d: &mut VideoTensor<T>, n: usize, stride: usize, ho: usize, wo: usize) {
    let s = d.shape();
    let ncols = s.t * ho * wo;
    for ci in 0..s.c {
        let dst = d.channel_mut(n, ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let (lo, hi) = valid_cols(s.w, wo, stride, kx);
                let row = (ci * 9 + ky * 3 + kx) * ncols;
                let src = &cols[row..row + ncols];
                for t in 0..s.t {
                    let frame = &mut dst[t * s.h * s.w..(t + 1) * s.h * s.w];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let in_row = &mut frame[iy as usize * s.w..(iy as usize + 1) * s.w];
                        let g_row = &src[(t * ho + oy) * wo..(t * ho + oy + 1) * wo];
                        if stride == 1 {
                            for (v, &g) in in_row[lo + kx - 1..hi + kx - 1].iter_mut().zip(&g_row[lo..hi]) {
                                *v += g;
                            }
                        } else {
                            for ox in lo..hi {
                                in_row[ox * stride + kx - 1] += g_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, zero padding 1, applied to every frame independently.
pub fn conv2d_spatial<T: Float>(x: &VideoTensor<T>, w: &SpatialWeights<T>, stride: usize) -> Result<VideoTensor<T>> {
    check_stride(stride)?;
    let s = x.shape();
    if s.c != w.c_in {
        return shape_err(format!("3x3 conv expects {} input channels, got {}", w.c_in, s.c));
    }
    let (ho, wo) = (conv_out_len(s.h, stride), conv_out_len(s.w, stride));
    let out_shape = Shape { c: w.c_out, h: ho, w: wo, ..s };
    let ncols = s.t * ho * wo;
    let k = s.c * 9;
    let mut cols = vec![T::zero(); k * ncols];
    let mut out = VideoTensor::zeros(out_shape);
    for n in 0..s.n {
        im2col(x, n, stride, ho, wo, &mut cols);
        gemm(
            T::one(),
            &w.weight,
            MatView::dense(0, w.c_out, k),
            &cols,
            MatView::dense(0, k, ncols),
            T::zero(),
            out.data_mut(),
            MatView::dense(n * out_shape.sample_len(), w.c_out, ncols),
        );
    }
    Ok(out)
}

pub fn conv2d_spatial_backward<T: Float>(
    x: &VideoTensor<T>,
    w: &SpatialWeights<T>,
    stride: usize,
    d_out: &VideoTensor<T>,
) -> Result<GradPair<VideoTensor<T>, SpatialWeights<T>>> {
    check_stride(stride)?;
    let s = x.shape();
    let (ho, wo) = (conv_out_len(s.h, stride), conv_out_len(s.w, stride));
    let out_shape = Shape { c: w.c_out, h: ho, w: wo, ..s };
    if s.c != w.c_in || d_out.shape() != out_shape {
        return shape_err(format!("3x3 backward: input {s}, d_out {} (expected {out_shape})", d_out.shape()));
    }
    let ncols = s.t * ho * wo;
    let k = s.c * 9;
    let mut cols = vec![T::zero(); k * ncols];
    let mut d_cols = vec![T::zero(); k * ncols];
    let mut d_input = VideoTensor::zeros(s);
    let mut d_w = SpatialWeights::zeros(w.c_out, w.c_in);
    for n in 0..s.n {
        let g = MatView::dense(n * out_shape.sample_len(), w.c_out, ncols);
        im2col(x, n, stride, ho, wo, &mut cols);
        gemm(T::one(), d_out.data(), g, &cols, MatView::dense(0, k, ncols).t(), T::one(), &mut d_w.weight, MatView::dense(0, w.c_out, k));
        gemm(T::one(), &w.weight, MatView::dense(0, w.c_out, k).t(), d_out.data(), g, T::zero(), &mut d_cols, MatView::dense(0, k, ncols));
        col2im(&d_cols, &mut d_input, n, stride, ho, wo);
    }
    Ok(GradPair { d_input, d_weights: d_w })
}

/// Keep every `stride`-th row and column (the sampling of a strided 1x1 projection).
pub fn subsample_spatial<T: Float>(x: &VideoTensor<T>, stride: usize) -> Result<VideoTensor<T>> {
    check_stride(stride)?;
    if stride == 1 {
        return Ok(x.clone());
    }
    let s = x.shape();
    let out_shape = Shape { h: s.h.div_ceil(stride), w: s.w.div_ceil(stride), ..s };
    Ok(VideoTensor::from_fn(out_shape, |n, c, t, h, w| x.get(n, c, t, h * stride, w * stride)))
}

pub fn subsample_spatial_backward<T: Float>(input_shape: Shape, stride: usize, d_out: &VideoTensor<T>) -> Result<VideoTensor<T>> {
    check_stride(stride)?;
    if stride == 1 {
        return Ok(d_out.clone());
    }
    let s = d_out.shape();
    let mut d = VideoTensor::zeros(input_shape);
    for n in 0..s.n {
        for c in 0..s.c {
            for t in 0..s.t {
                for h in 0..s.h {
                    for w in 0..s.w {
                        d.set(n, c, t, h * stride, w * stride, d_out.get(n, c, t, h, w));
                    }
                }
            }
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_identity_is_noop() {
        let x = VideoTensor::from_fn(Shape::new(2, 3, 2, 2, 2), |n, c, t, h, w| (n + 2 * c + 3 * t + 5 * h + 7 * w) as f64);
        let y = conv_pointwise(&x, &PointwiseWeights::identity(3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_stencil_on_one_hot_frame() {
        let mut x = VideoTensor::<f64>::zeros(Shape::new(1, 1, 1, 5, 5));
        x.set(0, 0, 0, 2, 2, 1.0);
        let w = SpatialWeights::new(1, 1, vec![1.0; 9]).unwrap();
        let y = conv2d_spatial(&x, &w, 1).unwrap();
        for h in 0..5 {
            for ww in 0..5 {
                let expect = if (1..=3).contains(&h) && (1..=3).contains(&ww) { 1.0 } else { 0.0 };
                assert_eq!(y.get(0, 0, 0, h, ww), expect);
            }
        }
        // Hot pixel in the corner: the block is clipped to 2x2.
        let mut x = VideoTensor::<f64>::zeros(Shape::new(1, 1, 1, 5, 5));
        x.set(0, 0, 0, 0, 0, 1.0);
        assert_eq!(conv2d_spatial(&x, &w, 1).unwrap().sum(), 4.0);
    }

    #[test]
    fn stride_two_halves_extent() {
        let x = VideoTensor::<f32>::zeros(Shape::new(1, 2, 3, 8, 8));
        let y = conv2d_spatial(&x, &SpatialWeights::zeros(4, 2), 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 3, 4, 4));
        assert!(conv2d_spatial(&x, &SpatialWeights::zeros(4, 2), 3).is_err());
        assert!(conv2d_spatial(&x, &SpatialWeights::zeros(4, 3), 1).is_err());
    }

    #[test]
    fn frames_do_not_mix() {
        let mut x = VideoTensor::<f64>::zeros(Shape::new(1, 1, 3, 4, 4));
        x.set(0, 0, 1, 1, 1, 1.0);
        let y = conv2d_spatial(&x, &SpatialWeights::new(1, 1, vec![1.0; 9]).unwrap(), 1).unwrap();
        assert_eq!(y.channel(0, 0)[..16].iter().sum::<f64>(), 0.0);
        assert_eq!(y.channel(0, 0)[32..].iter().sum::<f64>(), 0.0);
    }
}
