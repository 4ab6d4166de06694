//! Missed-detection / false-alarm rates and the equal-error rate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::system::ActivityPattern;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    /// Fraction of active devices declared inactive; `None` when nothing is active.
    pub mdp: Option<f64>,
    /// Fraction of inactive devices declared active; `None` when everything is active.
    pub fap: Option<f64>,
    pub threshold_used: f64,
    /// Mean of MDP and FAP at the threshold where they cross.
    pub equal_error: Option<f64>,
}

fn check_lengths(truth: &ActivityPattern, scores: &[f64]) -> Result<()> {
    if truth.len() != scores.len() {
        return Err(invalid(format!(
            "truth has {} devices but {} scores were given",
            truth.len(),
            scores.len()
        )));
    }
    Ok(())
}

/// Rates for the decision "active iff score > θ".
pub fn mdp_fap(truth: &ActivityPattern, scores: &[f64], theta: f64) -> Result<ErrorRates> {
    check_lengths(truth, scores)?;
    let mut active = 0usize;
    let mut missed = 0usize;
    let mut false_alarms = 0usize;
    for (&is_active, &score) in truth.flags().iter().zip(scores) {
        if is_active {
            active += 1;
            if score <= theta {
                missed += 1;
            }
        } else if score > theta {
            false_alarms += 1;
        }
    }
    let inactive = scores.len() - active;
    Ok(ErrorRates {
        mdp: (active > 0).then(|| missed as f64 / active as f64),
        fap: (inactive > 0).then(|| false_alarms as f64 / inactive as f64),
        threshold_used: theta,
        equal_error: None,
    })
}

/// Sweeps θ over −∞ and every distinct score and picks the threshold with
/// the smallest |MDP − FAP|, breaking ties toward the smaller MDP + FAP and
/// then the smaller θ. `equal_error` is (MDP + FAP)/2 there.
pub fn equal_error_rate(truth: &ActivityPattern, scores: &[f64]) -> Result<ErrorRates> {
    check_lengths(truth, scores)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("scores must not be NaN"));
    }
    let n_active = truth.n_active();
    let n_inactive = scores.len() - n_active;
    if n_active == 0 || n_inactive == 0 {
        return Err(Error::UndefinedMetric(
            "equal-error rate needs at least one active and one inactive device".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // θ = −∞: everything declared active.
    let mut missed = 0usize;
    let mut false_alarms = n_inactive;
    let rates = |missed: usize, false_alarms: usize| {
        (missed as f64 / n_active as f64, false_alarms as f64 / n_inactive as f64)
    };
    let (mdp, fap) = rates(missed, false_alarms);
    let mut best = (f64::NEG_INFINITY, mdp, fap);

    let mut i = 0;
    while i < order.len() {
        let theta = scores[order[i]];
        // every device scoring exactly θ flips to inactive
        while i < order.len() && scores[order[i]] == theta {
            if truth.is_active(order[i]) {
                missed += 1;
            } else {
                false_alarms -= 1;
            }
            i += 1;
        }
        let (mdp, fap) = rates(missed, false_alarms);
        let gap = (mdp - fap).abs();
        let best_gap = (best.1 - best.2).abs();
        if gap < best_gap || (gap == best_gap && mdp + fap < best.1 + best.2) {
            best = (theta, mdp, fap);
        }
    }
    let (theta, mdp, fap) = best;
    Ok(ErrorRates { mdp: Some(mdp), fap: Some(fap), threshold_used: theta, equal_error: Some(0.5 * (mdp + fap)) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::system::sample_activity;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn truth(flags: &[u8]) -> ActivityPattern {
        ActivityPattern::from_flags(flags.iter().map(|&f| f == 1).collect())
    }

    #[test]
    fn mdp_fap_examples() {
        let r = mdp_fap(&truth(&[1, 0]), &[0.9, 0.1], 0.5).unwrap();
        assert_eq!((r.mdp, r.fap), (Some(0.0), Some(0.0)));
        let r = mdp_fap(&truth(&[1, 0]), &[0.1, 0.9], 0.5).unwrap();
        assert_eq!((r.mdp, r.fap), (Some(1.0), Some(1.0)));
        let r = mdp_fap(&truth(&[1, 1, 0, 0]), &[0.9, 0.2, 0.3, 0.1], 0.25).unwrap();
        assert_eq!((r.mdp, r.fap), (Some(0.5), Some(0.5)));
        assert_eq!(r.equal_error, None);
    }

    #[test]
    fn undefined_rates_are_absent() {
        let r = mdp_fap(&truth(&[0, 0]), &[0.9, 0.1], 0.5).unwrap();
        assert_eq!(r.mdp, None);
        assert_eq!(r.fap, Some(0.5));
        let r = mdp_fap(&truth(&[1, 1]), &[0.9, 0.1], 0.5).unwrap();
        assert_eq!(r.fap, None);
        assert!(equal_error_rate(&truth(&[1, 1]), &[0.9, 0.1]).is_err());
        assert!(equal_error_rate(&truth(&[0, 0]), &[0.9, 0.1]).is_err());
        assert!(mdp_fap(&truth(&[0, 1]), &[0.9], 0.5).is_err());
    }

    #[test]
    fn equal_error_examples() {
        let r = equal_error_rate(&truth(&[1, 1, 0, 0]), &[0.9, 0.8, 0.3, 0.1]).unwrap();
        assert_eq!(r.equal_error, Some(0.0));

        // by hand: θ=-inf (0,1) θ=0.1 (0,.5) θ=0.2 (.5,.5) θ=0.3 (.5,0) θ=0.9 (1,0)
        let r = equal_error_rate(&truth(&[1, 1, 0, 0]), &[0.9, 0.2, 0.3, 0.1]).unwrap();
        assert_eq!((r.mdp, r.fap, r.equal_error), (Some(0.5), Some(0.5), Some(0.5)));
        assert_eq!(r.threshold_used, 0.2);
    }

    #[test]
    fn chance_level_scores() {
        let mut rng = rng_from_seed(3);
        let trials = 100;
        let mut total = 0.0;
        for _ in 0..trials {
            let t = sample_activity(1000, 100, &mut rng).unwrap();
            let mut scores: Vec<f64> = (0..1000).map(|i| i as f64).collect();
            scores.shuffle(&mut rng);
            total += equal_error_rate(&t, &scores).unwrap().equal_error.unwrap();
        }
        let mean = total / trials as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
    }

    fn pattern_and_scores() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(any::<bool>(), n)
                    .prop_filter("need both classes", |v| v.iter().any(|&a| a) && v.iter().any(|&a| !a)),
                proptest::collection::vec(0.0f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn rates_are_monotone_in_threshold((flags, scores) in pattern_and_scores(), a in -0.1f64..1.1, b in -0.1f64..1.1) {
            let t = ActivityPattern::from_flags(flags);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r_lo = mdp_fap(&t, &scores, lo).unwrap();
            let r_hi = mdp_fap(&t, &scores, hi).unwrap();
            prop_assert!(r_lo.mdp.unwrap() <= r_hi.mdp.unwrap());
            prop_assert!(r_lo.fap.unwrap() >= r_hi.fap.unwrap());
        }

        #[test]
        fn equal_error_is_invariant_under_increasing_maps((flags, scores) in pattern_and_scores()) {
            let t = ActivityPattern::from_flags(flags);
            let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            let a = equal_error_rate(&t, &scores).unwrap();
            let b = equal_error_rate(&t, &mapped).unwrap();
            prop_assert_eq!(a.equal_error, b.equal_error);
            prop_assert_eq!(a.mdp, b.mdp);
        }

        #[test]
        fn equal_error_lies_between_rates((flags, scores) in pattern_and_scores()) {
            let t = ActivityPattern::from_flags(flags);
            let r = equal_error_rate(&t, &scores).unwrap();
            let (m, f, e) = (r.mdp.unwrap(), r.fap.unwrap(), r.equal_error.unwrap());
            prop_assert!(m.min(f) <= e && e <= m.max(f));
            prop_assert!((0.0..=1.0).contains(&e));
            // matches a direct evaluation at the reported threshold
            let direct = mdp_fap(&t, &scores, r.threshold_used).unwrap();
            prop_assert_eq!(direct.mdp, r.mdp);
            prop_assert_eq!(direct.fap, r.fap);
        }
    }
}
