mod common;

use common::{naive_channelwise, random_case};
use mvfnet::ops::{conv1d_channelwise, conv1d_channelwise_backward, Axis, ChannelwiseKernel};
use mvfnet::VideoTensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_naive_loop_on_fifty_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let (x, k) = random_case(&mut rng);
        for axis in Axis::ALL {
            let fast = conv1d_channelwise(&x, &k, axis).unwrap();
            let slow = naive_channelwise(&x, &k, axis);
            assert!(fast.data().iter().zip(slow.data()).all(|(a, b)| a == b), "{} along {}", x.shape(), axis.name());
        }
    }
}

#[test]
fn axes_are_related_by_transposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, k) = random_case(&mut rng);
    let via_w = conv1d_channelwise(&x.transpose_hw(), &k, Axis::Width).unwrap().transpose_hw();
    assert_eq!(conv1d_channelwise(&x, &k, Axis::Height).unwrap(), via_w);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // <conv(x), g> == <x, conv^T(g)> and <conv_k(x), g> is linear in k.
    #[test]
    fn backward_is_the_adjoint(seed in any::<u64>(), axis in 0usize..3) {
        let axis = Axis::ALL[axis];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, k) = random_case(&mut rng);
        let g = VideoTensor::from_fn(x.shape(), |_, _, _, _, _| rng.random_range(-1.0..1.0));
        let y = conv1d_channelwise(&x, &k, axis).unwrap();
        let back = conv1d_channelwise_backward(&x, &k, axis, &g).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(y.data(), g.data());
        prop_assert!((lhs - dot(x.data(), back.d_input.data())).abs() <= 1e-9 * (1.0 + lhs.abs()));
        prop_assert!((lhs - dot(k.flat(), back.d_weights.flat())).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn identity_taps_are_a_no_op(seed in any::<u64>(), axis in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, _) = random_case(&mut rng);
        let y = conv1d_channelwise(&x, &ChannelwiseKernel::identity(x.shape().c), Axis::ALL[axis]).unwrap();
        prop_assert_eq!(y, x);
    }
}
