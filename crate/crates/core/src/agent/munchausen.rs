use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MunchausenParams {
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    /// Lower bound of the scaled log-policy bonus; the upper bound is 0.
    pub log_policy_clip: f64,
    /// Targets are clamped to `[-q_clip, q_clip]`.
    pub q_clip: f64,
}

impl Default for MunchausenParams {
    fn default() -> Self {
        MunchausenParams {
            gamma: 0.99,
            tau: 0.03,
            alpha: 0.9,
            log_policy_clip: -1.0,
            q_clip: 10.0,
        }
    }
}

/// `ln softmax(q / tau)` over the given values.
pub fn log_softmax<T: Scalar>(q: &[T], tau: T) -> Vec<T> {
    let max = q.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = q.iter().map(|&v| ((v - max) / tau).exp()).sum::<T>().ln();
    q.iter().map(|&v| (v - max) / tau - lse).collect()
}

/// Scaled, clipped log-policy bonus `clip(tau * ln pi(a|s), lo, 0)`.
pub fn log_policy_bonus<T: Scalar>(q_s: &[T], action: usize, p: &MunchausenParams) -> T {
    let tau = T::of(p.tau);
    let lp = log_softmax(q_s, tau)[action];
    (tau * lp).max(T::of(p.log_policy_clip)).min(T::zero())
}

/// Soft value `sum_a' pi(a'|s') (q(a') - tau ln pi(a'|s'))` under the
/// Boltzmann policy of the target network.
pub fn soft_value<T: Scalar>(q_next: &[T], tau: T) -> T {
    let lp = log_softmax(q_next, tau);
    q_next
        .iter()
        .zip(&lp)
        .map(|(&q, &l)| l.exp() * (q - tau * l))
        .sum()
}

/// Regression target for one transition. `q_s` and `q_next` hold target-network
/// values for the unmasked actions only; `action` indexes into `q_s`.
/// Returns `None` if any intermediate is not finite.
pub fn munchausen_target<T: Scalar>(
    q_s: &[T],
    action: usize,
    reward: T,
    q_next: &[T],
    done: bool,
    p: &MunchausenParams,
) -> Option<T> {
    let mut target = reward;
    if p.alpha != 0.0 {
        target = target + T::of(p.alpha) * log_policy_bonus(q_s, action, p);
    }
    if !done {
        target = target + T::of(p.gamma) * soft_value(q_next, T::of(p.tau));
    }
    if !target.is_finite() {
        return None;
    }
    let clip = T::of(p.q_clip);
    Some(target.max(-clip).min(clip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn terminal_without_bonus_is_clamped_reward() {
        let p = MunchausenParams {
            alpha: 0.0,
            ..Default::default()
        };
        assert_eq!(munchausen_target(&[1.0, 2.0], 0, 3.0, &[], true, &p), Some(3.0));
        assert_eq!(munchausen_target(&[1.0, 2.0], 0, 30.0, &[], true, &p), Some(10.0));
    }

    #[test]
    fn small_tau_reduces_to_max_backup() {
        let p = MunchausenParams {
            alpha: 0.0,
            tau: 1e-6,
            ..Default::default()
        };
        let t = munchausen_target(&[1.0, 2.0], 1, 1.0, &[0.5, -0.5], false, &p).unwrap();
        assert_abs_diff_eq!(t, 1.0 + 0.99 * 0.5, epsilon = 1e-6);
    }

    #[test]
    fn non_finite_reported() {
        let p = MunchausenParams::default();
        assert_eq!(munchausen_target(&[1.0, 2.0], 0, f64::NAN, &[0.0], false, &p), None);
    }

    proptest! {
        #[test]
        fn bonus_within_clip(q in prop::collection::vec(-50.0f64..50.0, 1..6), tau in 1e-4f64..10.0, pick in 0usize..6) {
            let p = MunchausenParams { tau, ..Default::default() };
            let b = log_policy_bonus(&q, pick % q.len(), &p);
            prop_assert!((-1.0..=0.0).contains(&b));
        }

        #[test]
        fn constant_shift_moves_soft_value(q in prop::collection::vec(-5.0f64..5.0, 1..6), c in -5.0f64..5.0) {
            let shifted: Vec<f64> = q.iter().map(|v| v + c).collect();
            prop_assert!((soft_value(&shifted, 0.03) - soft_value(&q, 0.03) - c).abs() < 1e-9);
        }
    }
}
