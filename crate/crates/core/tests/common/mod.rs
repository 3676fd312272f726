//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use mvfnet::ops::{Axis, ChannelwiseKernel};
use mvfnet::{Shape, VideoTensor};
use rand::Rng;

/// Per-channel loop straight from the definition: zero padding, taps at offsets -1, 0, +1.
pub fn naive_channelwise(x: &VideoTensor<f64>, k: &ChannelwiseKernel<f64>, axis: Axis) -> VideoTensor<f64> {
    let s = x.shape();
    VideoTensor::from_fn(s, |n, c, t, h, w| {
        let mut acc = 0.0;
        for (i, off) in [-1isize, 0, 1].into_iter().enumerate() {
            let (tt, hh, ww) = match axis {
                Axis::Temporal => (t as isize + off, h as isize, w as isize),
                Axis::Height => (t as isize, h as isize + off, w as isize),
                Axis::Width => (t as isize, h as isize, w as isize + off),
            };
            if tt < 0 || hh < 0 || ww < 0 || tt >= s.t as isize || hh >= s.h as isize || ww >= s.w as isize {
                continue;
            }
            acc += k.taps()[c][i] * x.get(n, c, tt as usize, hh as usize, ww as usize);
        }
        acc
    })
}

pub fn random_case(rng: &mut impl Rng) -> (VideoTensor<f64>, ChannelwiseKernel<f64>) {
    let s = Shape::new(rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=7), rng.random_range(1..=7), rng.random_range(1..=7));
    let x = VideoTensor::from_fn(s, |_, _, _, _, _| rng.random_range(-2.0..2.0));
    let k = ChannelwiseKernel::new((0..s.c).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect());
    (x, k)
}

/// Run the command-line tool built for this test run.
pub fn mvfnet(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_mvfnet")).args(args).output().expect("mvfnet runs")
}

/// A path relative to the workspace root, as a string for command lines.
pub fn workspace_path(rel: &str) -> String {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel).to_string_lossy().into_owned()
}
