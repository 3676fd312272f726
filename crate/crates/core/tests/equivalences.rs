use mvfnet::mvf::{classify_specialization, MvfConfig, Specialization};
use mvfnet::net::{build_network, NetworkSpec};
use mvfnet::verify::{equivalence_suite, EquivKind, DEFAULT_EQUIV_SEED};
use mvfnet::VideoTensor;

#[test]
fn reductions_hold_exactly() {
    for kind in EquivKind::ALL {
        let r = equivalence_suite(kind, DEFAULT_EQUIV_SEED, kind.default_trials()).unwrap();
        assert!(r.passed, "{}: deviation {:e}, {} mismatches", r.which, r.max_abs_deviation, r.bitwise_mismatches);
        assert_eq!(r.max_abs_deviation, 0.0, "{}", r.which);
    }
}

#[test]
fn other_seeds_agree() {
    for seed in [1, 2] {
        for kind in EquivKind::ALL {
            assert!(equivalence_suite(kind, seed, 5).unwrap().passed, "{} seed {seed}", kind.name());
        }
    }
}

#[test]
fn c2d_ignores_frame_order_but_mvf_does_not() {
    let c2d = build_network::<f64>(&NetworkSpec::new("tiny", 4, &[], 0.0, 8).with_resolution(16), 0).unwrap();
    let x = VideoTensor::from_fn(c2d.input_shape(2), |_, c, t, h, w| ((c * 7 + t * 13 + h * 3 + w * 5) % 17) as f64 / 17.0);
    let reversed = x.reverse_frames();
    assert_eq!(c2d.logits(&x).unwrap().data, c2d.logits(&reversed).unwrap().data);

    let mut spec = NetworkSpec::new("tiny", 4, &["res2", "res3"], 0.5, 8).with_resolution(16);
    spec.zero_init_residual = false;
    spec.mvf_init_std = 0.5;
    let mvf = build_network::<f64>(&spec, 0).unwrap();
    assert_ne!(mvf.logits(&x).unwrap().data, mvf.logits(&reversed).unwrap().data);
}

#[test]
fn specializations_are_recognised() {
    assert_eq!(classify_specialization(&MvfConfig::with_alpha(0.0)), Specialization::C2D);
    assert_eq!(classify_specialization(&MvfConfig::with_alpha(1.0).with_betas(1.0, 0.0, 0.0)), Specialization::SlowOnlyDW);
    assert_eq!(classify_specialization(&MvfConfig::with_alpha(0.5)), Specialization::FullMVF);
}
