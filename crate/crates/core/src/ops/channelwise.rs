//! Channel-wise (depthwise) 3-tap convolutions along one axis of a video volume.
//!
//! Convention: cross-correlation with zero padding and stride 1,
//! `out[c, p] = k[c, -1] * x[c, p - 1] + k[c, 0] * x[c, p] + k[c, +1] * x[c, p + 1]`,
//! with out-of-range samples read as zero. Taps are stored as `[k(-1), k(0), k(+1)]`.

use serde::{Deserialize, Serialize};

use super::GradPair;
use crate::error::{shape_err, Result};
use crate::tensor::{lane_dot, Float, Shape, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Temporal,
    Height,
    Width,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Temporal, Axis::Height, Axis::Width];

    /// `(outer, len, inner)` factorisation of a `t * h * w` slab around this axis.
    pub fn layout(self, shape: Shape) -> (usize, usize, usize) {
        match self {
            Axis::Temporal => (1, shape.t, shape.h * shape.w),
            Axis::Height => (shape.t, shape.h, shape.w),
            Axis::Width => (shape.t * shape.h, shape.w, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Temporal => "t",
            Axis::Height => "h",
            Axis::Width => "w",
        }
    }
}

/// One 3-tap kernel per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelwiseKernel<T> {
    taps: Vec<[T; 3]>,
}

impl<T: Float> ChannelwiseKernel<T> {
    pub fn new(taps: Vec<[T; 3]>) -> Self {
        ChannelwiseKernel { taps }
    }

    pub fn uniform(channels: usize, taps: [T; 3]) -> Self {
        ChannelwiseKernel { taps: vec![taps; channels] }
    }

    pub fn identity(channels: usize) -> Self {
        Self::uniform(channels, [T::zero(), T::one(), T::zero()])
    }

    pub fn zeros(channels: usize) -> Self {
        Self::uniform(channels, [T::zero(); 3])
    }

    pub fn from_flat(flat: &[T]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return shape_err(format!("kernel buffer of {} values is not a multiple of 3", flat.len()));
        }
        Ok(ChannelwiseKernel { taps: flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect() })
    }

    pub fn channels(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[[T; 3]] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [[T; 3]] {
        &mut self.taps
    }

    pub fn flat(&self) -> &[T] {
        self.taps.as_flattened()
    }

    pub fn flat_mut(&mut self) -> &mut [T] {
        self.taps.as_flattened_mut()
    }

    pub fn scaled(&self, s: T) -> Self {
        ChannelwiseKernel { taps: self.taps.iter().map(|k| [k[0] * s, k[1] * s, k[2] * s]).collect() }
    }
}

fn check_channels<T: Float>(x: &VideoTensor<T>, k: &ChannelwiseKernel<T>) -> Result<()> {
    if k.channels() != x.shape().c {
        return shape_err(format!(
            "kernel has {} channels but tensor has {}",
            k.channels(),
            x.shape().c
        ));
    }
    Ok(())
}

pub fn conv1d_channelwise<T: Float>(
    x: &VideoTensor<T>,
    k: &ChannelwiseKernel<T>,
    axis: Axis,
) -> Result<VideoTensor<T>> {
    check_channels(x, k)?;
    let shape = x.shape();
    let (outer, len, inner) = axis.layout(shape);
    let mut out = VideoTensor::zeros(shape);
    for n in 0..shape.n {
        for c in 0..shape.c {
            let [km, k0, kp] = k.taps[c];
            let src = x.channel(n, c);
            let dst = out.channel_mut(n, c);
            if inner == 1 {
                for (s_line, d_line) in src.chunks_exact(len).zip(dst.chunks_exact_mut(len)) {
                    correlate_line(s_line, d_line, km, k0, kp);
                }
                continue;
            }
            for o in 0..outer {
                let base = o * len * inner;
                for p in 0..len {
                    let row = base + p * inner;
                    let out_row = &mut dst[row..row + inner];
                    // Accumulate in tap order (-1, 0, +1) so results match a naive loop bit for bit.
                    if p > 0 {
                        let prev = &src[row - inner..row];
                        for (y, &v) in out_row.iter_mut().zip(prev) {
                            *y = km * v;
                        }
                    }
                    let cur = &src[row..row + inner];
                    for (y, &v) in out_row.iter_mut().zip(cur) {
                        *y += k0 * v;
                    }
                    if p + 1 < len {
                        let next = &src[row + inner..row + 2 * inner];
                        for (y, &v) in out_row.iter_mut().zip(next) {
                            *y += kp * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

// Same accumulation order as the strided path: (-1, 0, +1), starting from zero.
fn correlate_line<T: Float>(src: &[T], dst: &mut [T], km: T, k0: T, kp: T) {
    let len = src.len();
    for p in 0..len {
        let mut y = if p > 0 { km * src[p - 1] } else { T::zero() };
        y += k0 * src[p];
        if p + 1 < len {
            y += kp * src[p + 1];
        }
        dst[p] = y;
    }
}

/// Reverse mode of [`conv1d_channelwise`].
///
/// `d_input[c, p] = sum_i k[c, i] * d_out[c, p - i]` and
/// `d_weights[c, i] = sum_p d_out[c, p] * x[c, p + i]`, both zero padded.
pub fn conv1d_channelwise_backward<T: Float>(
    x: &VideoTensor<T>,
    k: &ChannelwiseKernel<T>,
    axis: Axis,
    d_out: &VideoTensor<T>,
) -> Result<GradPair<VideoTensor<T>, ChannelwiseKernel<T>>> {
    check_channels(x, k)?;
    let shape = x.shape();
    if d_out.shape() != shape {
        return shape_err(format!("d_out shape {} does not match input {}", d_out.shape(), shape));
    }
    let (outer, len, inner) = axis.layout(shape);
    let mut d_input = VideoTensor::zeros(shape);
    let mut d_k = ChannelwiseKernel::zeros(shape.c);
    for c in 0..shape.c {
        let [km, k0, kp] = k.taps[c];
        let mut acc = [T::zero(); 3];
        for n in 0..shape.n {
            let src = x.channel(n, c);
            let g = d_out.channel(n, c);
            let dst = d_input.channel_mut(n, c);
            if inner == 1 {
                // Contiguous lines: the input gradient is a correlation with the reversed taps.
                for ((s_line, g_line), d_line) in src.chunks_exact(len).zip(g.chunks_exact(len)).zip(dst.chunks_exact_mut(len)) {
                    correlate_line(g_line, d_line, kp, k0, km);
                    acc[0] += lane_dot(&g_line[1..], &s_line[..len - 1]);
                    acc[1] += lane_dot(g_line, s_line);
                    acc[2] += lane_dot(&g_line[..len - 1], &s_line[1..]);
                }
                continue;
            }
            for o in 0..outer {
                let base = o * len * inner;
                for p in 0..len {
                    let row = base + p * inner;
                    let g_row = &g[row..row + inner];
                    let d_row = &mut dst[row..row + inner];
                    // x[p] feeds out[p + 1] through k(-1), out[p] through k(0), out[p - 1] through k(+1).
                    if p + 1 < len {
                        let g_next = &g[row + inner..row + 2 * inner];
                        for (d, &v) in d_row.iter_mut().zip(g_next) {
                            *d = km * v;
                        }
                    }
                    for (d, &v) in d_row.iter_mut().zip(g_row) {
                        *d += k0 * v;
                    }
                    if p > 0 {
                        let g_prev = &g[row - inner..row];
                        for (d, &v) in d_row.iter_mut().zip(g_prev) {
                            *d += kp * v;
                        }
                        let x_prev = &src[row - inner..row];
                        acc[0] += lane_dot(g_row, x_prev);
                    }
                    let x_cur = &src[row..row + inner];
                    acc[1] += lane_dot(g_row, x_cur);
                    if p + 1 < len {
                        let x_next = &src[row + inner..row + 2 * inner];
                        acc[2] += lane_dot(g_row, x_next);
                    }
                }
            }
        }
        d_k.taps[c] = acc;
    }
    Ok(GradPair { d_input, d_weights: d_k })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64], axis: Axis) -> VideoTensor<f64> {
        let l = values.len();
        let shape = match axis {
            Axis::Temporal => Shape::new(1, 1, l, 1, 1),
            Axis::Height => Shape::new(1, 1, 1, l, 1),
            Axis::Width => Shape::new(1, 1, 1, 1, l),
        };
        VideoTensor::new(shape, values.to_vec()).unwrap()
    }

    #[test]
    fn shift_and_identity_taps() {
        for axis in Axis::ALL {
            let x = series(&[1.0, 2.0, 3.0, 4.0], axis);
            let id = conv1d_channelwise(&x, &ChannelwiseKernel::identity(1), axis).unwrap();
            assert_eq!(id.data(), &[1.0, 2.0, 3.0, 4.0]);
            let back = conv1d_channelwise(&x, &ChannelwiseKernel::uniform(1, [1.0, 0.0, 0.0]), axis).unwrap();
            assert_eq!(back.data(), &[0.0, 1.0, 2.0, 3.0]);
            let fwd = conv1d_channelwise(&x, &ChannelwiseKernel::uniform(1, [0.0, 0.0, 1.0]), axis).unwrap();
            assert_eq!(fwd.data(), &[2.0, 3.0, 4.0, 0.0]);
        }
    }

    #[test]
    fn boundary_weight_gradient() {
        let x = series(&[1.0; 4], Axis::Temporal);
        let g = conv1d_channelwise_backward(&x, &ChannelwiseKernel::identity(1), Axis::Temporal, &x).unwrap();
        assert_eq!(g.d_weights.taps()[0], [3.0, 4.0, 3.0]);
        assert_eq!(g.d_input, x);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = VideoTensor::<f32>::zeros(Shape::new(1, 3, 2, 2, 2));
        let k = ChannelwiseKernel::identity(2);
        assert!(conv1d_channelwise(&x, &k, Axis::Height).is_err());
        assert!(conv1d_channelwise_backward(&x, &k, Axis::Height, &x).is_err());
    }
}
