//! Temporal shift as a reference operation, and the fixed kernels that reproduce it.
//!
//! Forward shift means `out[t] = in[t - 1]` (content moves later in time) and backward shift
//! `out[t] = in[t + 1]`, both zero-filled at the clip boundary. Under the cross-correlation
//! convention of [`crate::ops::channelwise`] these are the tap vectors `[1, 0, 0]` and
//! `[0, 0, 1]` respectively. Channel groups are ordered forward, backward, untouched.

use super::MvfWeights;
use crate::error::{domain_err, Result};
use crate::ops::ChannelwiseKernel;
use crate::tensor::{concat_channels, Float, VideoTensor};

/// Channels shifted in each direction: half of `round(fraction * channels)`, which must be even.
pub fn shift_fold(channels: usize, fraction: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return domain_err(format!("shift fraction must lie in [0, 1], got {fraction}"));
    }
    let shifted = (fraction * channels as f64).round() as usize;
    if !shifted.is_multiple_of(2) {
        return domain_err(format!(
            "fraction {fraction} of {channels} channels gives {shifted} shifted channels, which is odd"
        ));
    }
    Ok(shifted / 2)
}

pub fn tsm_shift<T: Float>(x: &VideoTensor<T>, fraction: f64) -> Result<VideoTensor<T>> {
    let s = x.shape();
    let fold = shift_fold(s.c, fraction)?;
    let mut out = x.clone();
    let fl = s.frame_len();
    for n in 0..s.n {
        for c in 0..2 * fold {
            let src = x.channel(n, c);
            let dst = out.channel_mut(n, c);
            dst.iter_mut().for_each(|v| *v = T::zero());
            for t in 0..s.t {
                let from = if c < fold { t.checked_sub(1) } else { Some(t + 1).filter(|&u| u < s.t) };
                if let Some(u) = from {
                    dst[t * fl..(t + 1) * fl].copy_from_slice(&src[u * fl..(u + 1) * fl]);
                }
            }
        }
    }
    Ok(out)
}

/// Kernels that make the module perform [`tsm_shift`] over its `channels` view channels.
///
/// Pair with `beta = (1, 0, 0)` and the identity activation; the spatial kernels are zero.
pub fn as_fixed_shift_weights<T: Float>(channels: usize, fraction: f64) -> Result<MvfWeights<T>> {
    let fold = shift_fold(channels, fraction)?;
    let (o, z) = (T::one(), T::zero());
    let taps = (0..channels)
        .map(|c| match c {
            c if c < fold => [o, z, z],
            c if c < 2 * fold => [z, z, o],
            _ => [z, o, z],
        })
        .collect();
    Ok(MvfWeights {
        k_t: ChannelwiseKernel::new(taps),
        k_h: ChannelwiseKernel::zeros(channels),
        k_w: ChannelwiseKernel::zeros(channels),
    })
}

/// Undo the output ordering of the module: move the trailing `view_channels` channels (the
/// fused path) back in front of the pass-through channels.
pub fn restore_channel_order<T: Float>(y: &VideoTensor<T>, view_channels: usize) -> Result<VideoTensor<T>> {
    let c = y.shape().c;
    if view_channels > c {
        return domain_err(format!("{view_channels} view channels exceed {c}"));
    }
    let pass = y.channels(0, c - view_channels)?;
    let fused = y.channels(c - view_channels, c)?;
    concat_channels(&fused, &pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn ramp_channels(c: usize) -> VideoTensor<f64> {
        VideoTensor::from_fn(Shape::new(1, c, 4, 1, 1), |_, _, t, _, _| (t + 1) as f64)
    }

    #[test]
    fn zero_fraction_is_identity() {
        let x = ramp_channels(4);
        assert_eq!(tsm_shift(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn half_fraction_on_four_channels() {
        let x = ramp_channels(4);
        let y = tsm_shift(&x, 0.5).unwrap();
        assert_eq!(y.channel(0, 0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(y.channel(0, 1), &[2.0, 3.0, 4.0, 0.0]);
        assert_eq!(y.channel(0, 2), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(y.channel(0, 3), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn odd_group_and_bad_fraction_rejected() {
        let x = ramp_channels(4);
        assert!(tsm_shift(&x, 0.25).is_err());
        assert!(tsm_shift(&x, 1.5).is_err());
    }
}
