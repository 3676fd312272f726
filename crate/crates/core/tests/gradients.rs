use mvfnet::verify::{gradcheck_suite, GradTarget, DEFAULT_GRAD_SEED, GRAD_TOLERANCE};

#[test]
fn every_backward_pass_matches_central_differences() {
    for target in GradTarget::ALL {
        let cases = gradcheck_suite(target, DEFAULT_GRAD_SEED, target.default_epsilon(), false).unwrap();
        assert!(!cases.is_empty());
        for c in cases {
            assert!(c.passed && c.max_rel_err < GRAD_TOLERANCE, "{}: {:e}", c.case, c.max_rel_err);
        }
    }
}

#[test]
fn mvf_cases_cover_learnable_fusion_weights() {
    let cases = gradcheck_suite(GradTarget::Mvf, DEFAULT_GRAD_SEED, GradTarget::Mvf.default_epsilon(), false).unwrap();
    assert!(cases.iter().any(|c| c.case.contains("learnable_beta")));
    assert!(cases.iter().any(|c| c.case.contains("relu")));
}

#[test]
fn other_seeds_pass_for_the_smaller_targets() {
    for seed in [1, 2, 3] {
        for target in [GradTarget::Ops, GradTarget::Mvf, GradTarget::Block] {
            for c in gradcheck_suite(target, seed, target.default_epsilon(), false).unwrap() {
                assert!(c.passed, "seed {seed} {}: {:e}", c.case, c.max_rel_err);
            }
        }
    }
}

#[test]
fn a_corrupted_backward_is_caught() {
    for target in GradTarget::ALL {
        for c in gradcheck_suite(target, DEFAULT_GRAD_SEED, target.default_epsilon(), true).unwrap() {
            assert!(!c.passed, "{} passed with corrupted gradients", c.case);
        }
    }
}
