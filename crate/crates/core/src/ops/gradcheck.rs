//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{domain_err, shape_err, Result};

/// Coordinates checked when a tensor is too large to check exhaustively.
pub const MIN_SAMPLED_COORDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst_index: usize,
    /// Coordinates whose step had to be shrunk because `x +- h` fell on different pieces.
    pub refined: usize,
}

impl GradcheckReport {
    pub fn merge(self, other: GradcheckReport) -> GradcheckReport {
        let worst = if other.max_rel_err > self.max_rel_err { other } else { self };
        GradcheckReport { checked: self.checked + other.checked, refined: self.refined + other.refined, ..worst }
    }
}

/// Relative error with denominator `max(|a|, |f|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Smallest step the kink refinement of [`piecewise_gradcheck`] goes down to.
pub const MIN_EPSILON: f64 = 1e-8;

/// Compare `analytic` (the gradient of `loss` at `x`) with central differences.
///
/// With `max_coords = Some((k, seed))` and more than `k` coordinates, a seeded random subset of
/// `max(k, 200)` coordinates is checked; otherwise every coordinate is.
pub fn finite_diff_gradcheck(
    mut loss: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    epsilon: f64,
    max_coords: Option<(usize, u64)>,
) -> Result<GradcheckReport> {
    piecewise_gradcheck(|v| (loss(v), Vec::new()), x, analytic, epsilon, max_coords)
}

/// [`finite_diff_gradcheck`] for piecewise-smooth losses such as networks with ReLUs.
///
/// `loss` also returns which piece the point lies on (for example every ReLU mask). When
/// `x + h` and `x - h` lie on different pieces the difference straddles a kink, so `h` is divided
/// by 10 until both sides agree or `h` reaches [`MIN_EPSILON`]. The analytic gradient plays no
/// part in choosing the step.
pub fn piecewise_gradcheck(
    mut loss: impl FnMut(&[f64]) -> (f64, Vec<bool>),
    x: &[f64],
    analytic: &[f64],
    epsilon: f64,
    max_coords: Option<(usize, u64)>,
) -> Result<GradcheckReport> {
    if !(MIN_EPSILON..=1e-4).contains(&epsilon) {
        return domain_err(format!("epsilon must lie in [1e-8, 1e-4], got {epsilon}"));
    }
    if x.len() != analytic.len() {
        return shape_err(format!("{} inputs but {} gradient entries", x.len(), analytic.len()));
    }
    let coords: Vec<usize> = match max_coords {
        Some((k, seed)) if x.len() > k.max(MIN_SAMPLED_COORDS) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, x.len(), k.max(MIN_SAMPLED_COORDS)).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..x.len()).collect(),
    };
    let mut probe = x.to_vec();
    let mut report = GradcheckReport { max_rel_err: 0.0, checked: coords.len(), worst_index: 0, refined: 0 };
    for &i in &coords {
        let orig = probe[i];
        let mut h = epsilon;
        let numeric = loop {
            probe[i] = orig + h;
            let (plus, piece_plus) = loss(&probe);
            probe[i] = orig - h;
            let (minus, piece_minus) = loss(&probe);
            if piece_plus == piece_minus || h / 10.0 < MIN_EPSILON * 0.999 {
                break (plus - minus) / (2.0 * h);
            }
            h /= 10.0;
        };
        probe[i] = orig;
        if h < epsilon {
            report.refined += 1;
        }
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_err || err.is_nan() {
            report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
            report.worst_index = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let x = [0.3, -1.2, 2.5];
        let f = |v: &[f64]| v.iter().map(|a| a * a * a).sum::<f64>();
        let good: Vec<f64> = x.iter().map(|a| 3.0 * a * a).collect();
        let r = finite_diff_gradcheck(f, &x, &good, 1e-6, None).unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
        let bad: Vec<f64> = good.iter().map(|g| g * 1.01).collect();
        let r = finite_diff_gradcheck(f, &x, &bad, 1e-6, None).unwrap();
        assert!(r.max_rel_err > 1e-3);
        assert!(finite_diff_gradcheck(f, &x, &good, 1e-2, None).is_err());
    }

    #[test]
    fn subsampling_checks_at_least_200() {
        let x = vec![0.5; 1000];
        let g = vec![1.0; 1000];
        let r = finite_diff_gradcheck(|v| v.iter().sum(), &x, &g, 1e-6, Some((10, 3))).unwrap();
        assert_eq!(r.checked, 200);
    }

    #[test]
    fn kinks_shrink_the_step() {
        // |v| has a kink at 0, 5e-5 away from the checked point.
        let x = [5e-5];
        let plain = finite_diff_gradcheck(|v| v[0].abs(), &x, &[1.0], 1e-4, None).unwrap();
        assert!(plain.max_rel_err > 0.1);
        let r = piecewise_gradcheck(|v| (v[0].abs(), vec![v[0] > 0.0]), &x, &[1.0], 1e-4, None).unwrap();
        assert!(r.max_rel_err < 1e-9 && r.refined == 1, "{r:?}");
    }
}
