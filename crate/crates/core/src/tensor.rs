//! Dense 5-D video tensors laid out row-major in `(n, c, t, h, w)` order.
//!
//! Everything else in the crate moves data around in [`VideoTensor`]. The element type is a
//! [`Float`] (`f32` or `f64`); a computation graph is monomorphic in it, so mixing precisions
//! is rejected at compile time rather than at run time.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Scalar element type of every tensor.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const DTYPE: DType;

    /// `c <- alpha * a * b + beta * c` on strided matrix views (see `matrixmultiply`).
    ///
    /// # Safety
    /// The pointers and strides must describe in-bounds `m x k`, `k x n` and `m x n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

impl Float for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Float for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Tensor extents. `c` may be zero (an empty channel split); every other axis is at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, t: usize, h: usize, w: usize) -> Self {
        Shape { n, c, t, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.t * self.h * self.w
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w
    }

    /// Elements of one `(n, c)` slab: `t * h * w`.
    pub fn channel_len(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.channel_len()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> usize {
        (((n * self.c + c) * self.t + t) * self.h + h) * self.w + w
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n, self.c, self.t, self.h, self.w]
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.h == 0 || self.w == 0 {
            return shape_err(format!("non-channel dimensions must be >= 1, got {self}"));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {}, {})", self.n, self.c, self.t, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Float> VideoTensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return shape_err(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            ));
        }
        Ok(VideoTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        shape.validate().expect("valid shape");
        VideoTensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize, usize) -> T) -> Self {
        shape.validate().expect("valid shape");
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for t in 0..shape.t {
                    for h in 0..shape.h {
                        for w in 0..shape.w {
                            data.push(f(n, c, t, h, w));
                        }
                    }
                }
            }
        }
        VideoTensor { shape, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, t, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, t: usize, h: usize, w: usize, v: T) {
        let i = self.shape.index(n, c, t, h, w);
        self.data[i] = v;
    }

    /// Contiguous `t * h * w` slab of sample `n`, channel `c`.
    pub fn channel(&self, n: usize, c: usize) -> &[T] {
        let len = self.shape.channel_len();
        let start = (n * self.shape.c + c) * len;
        &self.data[start..start + len]
    }

    pub fn channel_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let len = self.shape.channel_len();
        let start = (n * self.shape.c + c) * len;
        &mut self.data[start..start + len]
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        VideoTensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("shape mismatch: {} vs {}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(VideoTensor { shape: self.shape, data })
    }

    /// Copy of channels `[start, end)`.
    pub fn channels(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.shape.c {
            return shape_err(format!("channel range {start}..{end} out of 0..{}", self.shape.c));
        }
        let shape = self.shape.with_c(end - start);
        let len = self.shape.channel_len();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..self.shape.n {
            let base = n * self.shape.sample_len();
            data.extend_from_slice(&self.data[base + start * len..base + end * len]);
        }
        Ok(VideoTensor { shape, data })
    }

    /// Select samples `[start, end)` along the batch axis.
    pub fn samples(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape.n {
            return shape_err(format!("sample range {start}..{end} out of 0..{}", self.shape.n));
        }
        let len = self.shape.sample_len();
        let shape = Shape { n: end - start, ..self.shape };
        Ok(VideoTensor { shape, data: self.data[start * len..end * len].to_vec() })
    }

    /// Stack tensors along the batch axis.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let first = match parts.first() {
            Some(p) => p.shape,
            None => return shape_err("cannot stack an empty list"),
        };
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if (Shape { n: first.n, ..p.shape }) != first {
                return shape_err(format!("cannot stack {} with {}", p.shape, first));
            }
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Ok(VideoTensor { shape: Shape { n, ..first }, data })
    }

    /// Reorder frames: output frame `t` is input frame `perm[t]`.
    pub fn permute_frames(&self, perm: &[usize]) -> Result<Self> {
        let s = self.shape;
        let mut seen = vec![false; s.t];
        if perm.len() != s.t || perm.iter().any(|&p| p >= s.t || std::mem::replace(&mut seen[p], true)) {
            return domain_err(format!("{perm:?} is not a permutation of 0..{}", s.t));
        }
        let fl = s.frame_len();
        let mut out = Vec::with_capacity(s.numel());
        for slab in self.data.chunks(s.channel_len()) {
            for &src in perm {
                out.extend_from_slice(&slab[src * fl..(src + 1) * fl]);
            }
        }
        Ok(VideoTensor { shape: s, data: out })
    }

    pub fn reverse_frames(&self) -> Self {
        let perm: Vec<usize> = (0..self.shape.t).rev().collect();
        self.permute_frames(&perm).expect("reversal is a permutation")
    }

    /// Swap the `h` and `w` axes.
    pub fn transpose_hw(&self) -> Self {
        let s = self.shape;
        let out_shape = Shape { h: s.w, w: s.h, ..s };
        VideoTensor::from_fn(out_shape, |n, c, t, h, w| self.get(n, c, t, w, h))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return shape_err(format!("shape mismatch: {} vs {}", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Float>(&self) -> VideoTensor<U> {
        VideoTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap_or(0.0)).unwrap_or(U::zero())).collect(),
        }
    }
}

/// The two channel groups produced by [`split_channels`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSplit<T> {
    /// The first `round(alpha * c)` channels (the multi-view path).
    pub part1: VideoTensor<T>,
    /// The remaining channels (the pass-through path).
    pub part2: VideoTensor<T>,
}

/// Number of channels routed to the first split: `round(alpha * c)`, ties rounding up.
pub fn alpha_channels(alpha: f64, c: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&alpha) {
        return domain_err(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    // The small nudge keeps exact halves (e.g. 0.5 * 3) from rounding down after a
    // representation error in alpha.
    let k = (alpha * c as f64 + 0.5 + 1e-9).floor() as usize;
    Ok(k.min(c))
}

pub fn split_channels<T: Float>(x: &VideoTensor<T>, alpha: f64) -> Result<ChannelSplit<T>> {
    let k = alpha_channels(alpha, x.shape.c)?;
    Ok(ChannelSplit { part1: x.channels(0, k)?, part2: x.channels(k, x.shape.c)? })
}

/// Concatenate along channels; `a`'s channels come first.
pub fn concat_channels<T: Float>(a: &VideoTensor<T>, b: &VideoTensor<T>) -> Result<VideoTensor<T>> {
    let (sa, sb) = (a.shape, b.shape);
    if sa.with_c(0) != sb.with_c(0) {
        return shape_err(format!("cannot concatenate {sa} and {sb}: non-channel dims differ"));
    }
    let shape = sa.with_c(sa.c + sb.c);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..sa.n {
        data.extend_from_slice(a.sample(n));
        data.extend_from_slice(b.sample(n));
    }
    Ok(VideoTensor { shape, data })
}

pub fn add<T: Float>(a: &VideoTensor<T>, b: &VideoTensor<T>) -> Result<VideoTensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

pub fn scale<T: Float>(a: &VideoTensor<T>, s: T) -> VideoTensor<T> {
    a.map(|x| x * s)
}

pub fn relu<T: Float>(a: &VideoTensor<T>) -> VideoTensor<T> {
    a.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Sum with eight independent accumulators so the loop vectorizes. The order is fixed, so
/// results are deterministic.
pub(crate) fn lane_sum<T: Float>(xs: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    tail.iter().fold(acc.iter().copied().sum::<T>(), |s, &v| s + v)
}

pub(crate) fn lane_dot<T: Float>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Gradient of [`relu`]: passes `d_out` where the forward input was positive.
pub fn relu_backward<T: Float>(input: &VideoTensor<T>, d_out: &VideoTensor<T>) -> Result<VideoTensor<T>> {
    input.zip_map(d_out, |x, d| if x > T::zero() { d } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: Shape) -> VideoTensor<f64> {
        let data = (0..shape.numel()).map(|i| i as f64).collect();
        VideoTensor::new(shape, data).unwrap()
    }

    #[test]
    fn rejects_bad_lengths_and_zero_axes() {
        assert!(VideoTensor::<f32>::new(Shape::new(1, 1, 2, 2, 2), vec![0.0; 7]).is_err());
        assert!(VideoTensor::<f32>::new(Shape::new(1, 1, 0, 2, 2), vec![]).is_err());
        assert!(VideoTensor::<f32>::new(Shape::new(1, 0, 2, 2, 2), vec![]).is_ok());
    }

    #[test]
    fn split_counts() {
        let x = ramp(Shape::new(1, 8, 2, 2, 2));
        let s = split_channels(&x, 0.5).unwrap();
        assert_eq!((s.part1.shape().c, s.part2.shape().c), (4, 4));
        let s = split_channels(&x, 0.0).unwrap();
        assert_eq!(s.part1.shape().c, 0);
        assert_eq!(s.part2, x);
        assert_eq!(alpha_channels(1.0 / 8.0, 1024).unwrap(), 128);
        assert_eq!(alpha_channels(0.5, 3).unwrap(), 2);
        assert!(split_channels(&x, 1.5).is_err());
        assert!(split_channels(&x, -0.1).is_err());
    }

    #[test]
    fn concat_index_bookkeeping() {
        let a = ramp(Shape::new(2, 4, 2, 3, 3));
        let b = ramp(Shape::new(2, 2, 2, 3, 3)).map(|v| -v);
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape().c, 6);
        for n in 0..2 {
            assert_eq!(y.channel(n, 4), b.channel(n, 0));
            assert_eq!(y.channel(n, 1), a.channel(n, 1));
        }
        let bad = ramp(Shape::new(2, 2, 3, 3, 3));
        assert!(concat_channels(&a, &bad).is_err());
    }

    #[test]
    fn elementwise_basics() {
        let x = VideoTensor::new(Shape::new(1, 1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(add(&x, &x.zeros_like()).unwrap(), x);
        assert!(add(&x, &ramp(Shape::new(1, 1, 1, 1, 2))).is_err());
    }

    #[test]
    fn frame_permutations() {
        let x = ramp(Shape::new(1, 2, 3, 1, 2));
        let r = x.reverse_frames();
        assert_eq!(r.get(0, 1, 0, 0, 1), x.get(0, 1, 2, 0, 1));
        assert_eq!(r.reverse_frames(), x);
        assert!(x.permute_frames(&[0, 0, 1]).is_err());
        let tr = ramp(Shape::new(1, 1, 1, 2, 3)).transpose_hw();
        assert_eq!(tr.shape(), Shape::new(1, 1, 1, 3, 2));
        assert_eq!(tr.get(0, 0, 0, 2, 1), 5.0);
    }
}
