//! Importance weights, effective sample sizes and the tempering search.

use crate::error::{Error, Result};

/// Normalised weights and `log(sum(exp(log_w)))`.
pub fn normalize(log_w: &[f64]) -> Result<(Vec<f64>, f64)> {
    if let Some(i) = log_w.iter().position(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::Numerical(format!("log-weight {i} is {}", log_w[i])));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Numerical("all weights vanished".into()));
    }
    let mut w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    Ok((w, max + s.ln()))
}

/// `(sum w)^2 / sum w^2` of the normalised weights.
pub fn ess(log_w: &[f64]) -> Result<f64> {
    let (w, _) = normalize(log_w)?;
    Ok(1.0 / w.iter().map(|x| x * x).sum::<f64>())
}

/// Conditional effective sample size of the incremental log-weights `incr`
/// under normalised weights `w`.
pub fn cess(w: &[f64], incr: &[f64]) -> f64 {
    let max = incr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut s1, mut s2) = (0.0, 0.0);
    for (&wi, &li) in w.iter().zip(incr) {
        let v = (li - max).exp();
        s1 += wi * v;
        s2 += wi * v * v;
    }
    w.len() as f64 * s1 * s1 / s2
}

fn cess_at(w: &[f64], losses: &[f64], delta: f64, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(losses.iter().map(|l| -delta * l));
    cess(w, buf)
}

/// Temperature resolution of the bisection.
pub const TEMPERATURE_TOL: f64 = 1e-6;

/// Next temperature in `(alpha_prev, 1]`. `losses` are the per-particle
/// increments already multiplied by the loss scale, so the incremental
/// log-weight at `alpha` is `-(alpha - alpha_prev) * losses[i]`.
///
/// Returns 1 when the full step keeps the CESS at or above `threshold`;
/// otherwise bisects to [`TEMPERATURE_TOL`], preferring the lower end of the
/// final bracket unless that would not advance.
pub fn find_next_temperature(w: &[f64], losses: &[f64], alpha_prev: f64, threshold: f64) -> Result<f64> {
    if !(alpha_prev < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha_prev = {alpha_prev} is not below 1")));
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::Numerical(format!("loss increment of particle {i} is {}", losses[i])));
    }
    if w.len() != losses.len() {
        return Err(Error::Dimension {
            what: "loss increments",
            expected: w.len(),
            got: losses.len(),
        });
    }
    let mut buf = Vec::with_capacity(w.len());
    if cess_at(w, losses, 1.0 - alpha_prev, &mut buf) >= threshold {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (alpha_prev, 1.0);
    while hi - lo >= TEMPERATURE_TOL {
        let mid = 0.5 * (lo + hi);
        if cess_at(w, losses, mid - alpha_prev, &mut buf) >= threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if lo > alpha_prev { lo } else { hi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ess_examples() {
        assert!((ess(&[0.0; 150]).unwrap() - 150.0).abs() < 1e-9);
        let one = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!((ess(&one).unwrap() - 1.0).abs() < 1e-12);
        let lw = [0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()];
        assert!((ess(&lw).unwrap() - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ess_rejects_vanished_weights() {
        assert!(ess(&[f64::NEG_INFINITY; 3]).is_err());
        assert!(ess(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn cess_examples() {
        let w = [0.25; 4];
        assert!((cess(&w, &[0.3; 4]) - 4.0).abs() < 1e-12);
        let incr = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!((cess(&w, &incr) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_losses_jump_to_one() {
        let w = vec![1.0 / 150.0; 150];
        assert_eq!(find_next_temperature(&w, &vec![3.7; 150], 0.2, 75.0).unwrap(), 1.0);
    }

    #[test]
    fn full_threshold_still_advances() {
        let w = [0.25; 4];
        let a = find_next_temperature(&w, &[0.0, 1.0, 2.0, 3.0], 0.4, 4.0).unwrap();
        assert!(a > 0.4 && a - 0.4 < 2.0 * TEMPERATURE_TOL, "{a}");
    }

    #[test]
    fn bisection_matches_grid_search() {
        let w = [0.5, 0.5];
        let losses = [0.0, 2.0];
        let a = find_next_temperature(&w, &losses, 0.0, 1.6).unwrap();
        // Largest grid point whose CESS stays above the threshold.
        let mut best = 0.0;
        let mut buf = Vec::new();
        for i in 0..=1_000_000 {
            let alpha = i as f64 * 1e-6;
            if cess_at(&w, &losses, alpha, &mut buf) >= 1.6 {
                best = alpha;
            }
        }
        assert!((a - best).abs() < 1e-4, "{a} vs {best}");
        // Closed form: (1+v)^2 / (1+v^2) = 1.6 with v = exp(-2 alpha) gives v = 1/3.
        assert!((a - 3f64.ln() / 2.0).abs() < 1e-5);
    }

    #[test]
    fn non_finite_losses_rejected() {
        assert!(find_next_temperature(&[0.5, 0.5], &[0.0, f64::NAN], 0.0, 1.0).is_err());
        assert!(find_next_temperature(&[0.5, 0.5], &[0.0, 1.0], 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn cess_shift_invariant(incr in prop::collection::vec(-20.0f64..20.0, 2..40), c in -50.0f64..50.0) {
            let w = vec![1.0 / incr.len() as f64; incr.len()];
            let shifted: Vec<f64> = incr.iter().map(|x| x + c).collect();
            prop_assert!((cess(&w, &incr) - cess(&w, &shifted)).abs() < 1e-9 * incr.len() as f64);
        }

        #[test]
        fn next_temperature_respects_threshold(
            losses in prop::collection::vec(0.0f64..50.0, 2..60),
            alpha_prev in 0.0f64..0.99,
            frac in 0.1f64..0.95,
        ) {
            let n = losses.len();
            let w = vec![1.0 / n as f64; n];
            let thr = frac * n as f64;
            let a = find_next_temperature(&w, &losses, alpha_prev, thr).unwrap();
            prop_assert!(a > alpha_prev && a <= 1.0);
            let mut buf = Vec::new();
            if a < 1.0 && a - alpha_prev > TEMPERATURE_TOL {
                prop_assert!(cess_at(&w, &losses, a - alpha_prev, &mut buf) >= thr);
                prop_assert!(cess_at(&w, &losses, a + TEMPERATURE_TOL - alpha_prev, &mut buf) < thr * (1.0 + 1e-6));
            }
        }
    }
}
