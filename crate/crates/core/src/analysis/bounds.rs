//! Probability bounds for the key-recovery attack, in log2.
//!
//! Each write draws a temporary key that repeats an earlier one with
//! probability `p = 2^-128`. The attack needs 64 pairs under one key, so the
//! chance it ever applies is governed by the upper tail `P(X >= 64)` with
//! `X ~ Bin(r, p)` and by the Chernoff bound on that tail summed over `θ`
//! message groups. Every quantity here is far below `f64` range, so all
//! work is done on logarithms.

use std::f64::consts::{LN_2, LOG2_E};

use crate::error::{Error, Result};

/// Pairs needed under a single key.
pub const PAIRS_NEEDED: u32 = 64;
/// `log2 p`: chance that two writes share a temporary key.
pub const LOG2_KEY_COLLISION: f64 = -128.0;
/// Largest `r` for which the union bound is stated.
pub const MAX_UNION_R: f64 = (1u128 << 120) as f64;
/// Largest attacker budget `t`.
pub const MAX_BUDGET: f64 = (1u128 << 80) as f64;
/// Advantage threshold: `ε <= 2^-60`.
pub const EPSILON_LOG2_THRESHOLD: f64 = -60.0;

fn p() -> f64 {
    LOG2_KEY_COLLISION.exp2()
}

/// `ln C(r, l)` for integer `l`, as `sum ln(r - m) - ln l!`.
fn ln_binomial(r: f64, l: u32) -> f64 {
    let ln_r = r.ln();
    (0..l).map(|m| ln_r + (-(m as f64) / r).ln_1p() - ((m + 1) as f64).ln()).sum()
}

/// `log2 P(X >= 64)`, `X ~ Bin(r, 2^-128)`.
///
/// Terms from `l = 64` upward are generated by their ratio and combined by
/// log-sum-exp until they stop contributing. `r < 64` gives `-inf`.
pub fn event_probability(r: f64) -> f64 {
    let l0 = PAIRS_NEEDED;
    if r.is_nan() || r < l0 as f64 {
        return f64::NEG_INFINITY;
    }
    let ln_p = LOG2_KEY_COLLISION * LN_2;
    let ln_q = (-p()).ln_1p();
    let mut ln_term = ln_binomial(r, l0) + l0 as f64 * ln_p + (r - l0 as f64) * ln_q;
    let mut terms = vec![ln_term];
    let mut peak = ln_term;
    let mut l = l0 as f64;
    // past the mode each ratio is below r p / l, tiny for any r in range
    while l < r && terms.len() < 1_000_000 {
        ln_term += (r - l).ln() - (l + 1.0).ln() + ln_p - ln_q;
        l += 1.0;
        terms.push(ln_term);
        peak = peak.max(ln_term);
        if ln_term < peak - 80.0 && l > r * p() {
            break;
        }
    }
    let sum: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    ((peak + sum.ln()) * LOG2_E).min(0.0)
}

/// `T(x, y) = x ln(x/y) + (1-x) ln((1-x)/(1-y))`, the Chernoff exponent.
pub fn chernoff_exponent(x: f64, y: f64) -> Result<f64> {
    let open = |v: f64| v > 0.0 && v < 1.0;
    if !open(x) || !open(y) {
        return Err(Error::DomainError(format!("T({x}, {y}) needs both arguments in (0, 1)")));
    }
    Ok(x * (x.ln() - y.ln()) + (1.0 - x) * ((-x).ln_1p() - (-y).ln_1p()))
}

/// `log2(θ e^{-r T(64/r, 2^-128)})`.
pub fn union_bound(theta: f64, r: f64) -> Result<f64> {
    if !(theta >= 1.0 && theta.is_finite()) {
        return Err(Error::ParamOutOfRange(format!("θ = {theta} must be at least 1")));
    }
    if r > MAX_UNION_R {
        return Err(Error::ParamOutOfRange(format!("r = {r:e} exceeds 2^120")));
    }
    let t = chernoff_exponent(PAIRS_NEEDED as f64 / r, p())?;
    Ok(theta.log2() - r * t * LOG2_E)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Verdict {
    pub t: f64,
    pub theta: f64,
    pub epsilon_log2: f64,
    /// `ε < 2^-60`.
    pub meets_threshold: bool,
}

/// Bounds the advantage of an attacker with budget `t` against `θ`
/// message groups.
///
/// For `t > 64` the union bound is used. With at most 64 pairs the tail
/// degenerates, so the exact probability is used instead.
pub fn theorem_check(t: f64, theta: f64) -> Result<Verdict> {
    if !(1.0..=MAX_BUDGET).contains(&t) {
        return Err(Error::ParamOutOfRange(format!("t = {t:e} must lie in [1, 2^80]")));
    }
    if !(theta >= 1.0 && theta <= t) {
        return Err(Error::ParamOutOfRange(format!("θ = {theta:e} must lie in [1, t]")));
    }
    let epsilon_log2 = if t > PAIRS_NEEDED as f64 {
        union_bound(theta, t)?
    } else {
        theta.log2() + event_probability(t)
    };
    Ok(Verdict { t, theta, epsilon_log2, meets_threshold: epsilon_log2 < EPSILON_LOG2_THRESHOLD })
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use num_traits::{One, ToPrimitive};

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn constants() {
        assert_eq!(MAX_UNION_R, 120f64.exp2());
        assert_eq!(MAX_BUDGET, 80f64.exp2());
    }

    #[test]
    fn forced_single_term() {
        assert_eq!(event_probability(64.0), -8192.0);
        assert_eq!(event_probability(63.0), f64::NEG_INFINITY);
    }

    fn log2_big(x: &BigUint) -> f64 {
        let bits = x.bits();
        let shift = bits.saturating_sub(64);
        (x >> shift).to_f64().unwrap().log2() + shift as f64
    }

    /// First five tail terms summed exactly:
    /// `P_5 = 2^-8704 (1-p)^(r-68) sum_{l=64}^{68} C(r,l) (2^128-1)^(68-l)`.
    fn exact_five_terms(r: u64) -> f64 {
        let q = (BigUint::one() << 128u32) - BigUint::one();
        let mut binom = BigUint::one();
        for m in 0..64u64 {
            binom = binom * BigUint::from(r - m) / BigUint::from(m + 1);
        }
        let mut sum = BigUint::default();
        for l in 64u64..=68.min(r) {
            sum += &binom * q.pow((68 - l) as u32);
            binom = binom * BigUint::from(r.saturating_sub(l)) / BigUint::from(l + 1);
        }
        let log2_q = (-(-128f64).exp2()).ln_1p() * LOG2_E;
        log2_big(&sum) - 8704.0 + (r as f64 - 68.0) * log2_q
    }

    #[test]
    fn matches_exact_summation() {
        for r in [64u64, 65, 100, 1 << 10, 1 << 20, 1 << 30] {
            let exact = exact_five_terms(r);
            let got = event_probability(r as f64);
            assert!(rel(got, exact) < 1e-9, "r = {r}: {got} vs {exact}");
        }
    }

    #[test]
    fn frozen_tail_values() {
        // high-precision direct summation
        for (r, want) in [
            (65.0, -8_185.977_632_186_971),
            (100.0, -8_101.324_479_283_021),
            (1024.0, -7_850.896_051_467_72),
            (1_048_576.0, -7_207.997_917_733_91),
            (40f64.exp2(), -5_927.995_143_944_369),
            (80f64.exp2(), -3_367.995_143_941_724),
        ] {
            let got = event_probability(r);
            assert!(rel(got, want) < 1e-9, "r = {r}: {got} vs {want}");
        }
    }

    #[test]
    fn tail_is_increasing() {
        let v: Vec<f64> = [10, 20, 40, 60, 80].map(|e: i32| event_probability((e as f64).exp2())).to_vec();
        assert!(v.windows(2).all(|w| w[0] < w[1]), "{v:?}");
    }

    #[test]
    fn chernoff_basics() {
        for y in [1e-30, 0.1, 0.5, 0.9] {
            assert_eq!(chernoff_exponent(y, y).unwrap(), 0.0);
        }
        assert!(rel(chernoff_exponent(0.25, 0.5).unwrap(), 0.130_812_035_941_136_97) < 1e-14);
        for (x, y) in [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0), (f64::NAN, 0.5)] {
            assert!(matches!(chernoff_exponent(x, y), Err(Error::DomainError(_))));
        }
    }

    #[test]
    fn union_bound_values() {
        // high-precision evaluation of the same closed form
        for (theta, r, want) in [
            (80f64.exp2(), 80f64.exp2(), -3_283.667_517_383_106_3),
            (1_048_576.0, 1_048_576.0, -7_183.670_335_204_188),
            (1024.0, 1024.0, -7_836.614_971_784_178),
            (1.0, 40f64.exp2(), -5_923.667_517_385_794),
        ] {
            let got = union_bound(theta, r).unwrap();
            assert!(rel(got, want) < 1e-9, "θ = {theta}, r = {r}: {got} vs {want}");
        }
        assert!(matches!(union_bound(1.0, 121f64.exp2()), Err(Error::ParamOutOfRange(_))));
        assert!(matches!(union_bound(1.0, 64.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn union_bound_dominates_exact_tail() {
        let (theta, r) = (20f64.exp2(), 20f64.exp2());
        assert!(theta.log2() + event_probability(r) <= union_bound(theta, r).unwrap());
    }

    #[test]
    fn verdicts() {
        let v = theorem_check(80f64.exp2(), 80f64.exp2()).unwrap();
        assert!(v.meets_threshold && v.epsilon_log2 < -80.0, "{v:?}");
        assert!(theorem_check(1024.0, 1024.0).unwrap().meets_threshold);
        assert!(theorem_check(64.0, 64.0).unwrap().meets_threshold);
        assert_eq!(theorem_check(10.0, 10.0).unwrap().epsilon_log2, f64::NEG_INFINITY);
        assert!(matches!(theorem_check(81f64.exp2(), 1.0), Err(Error::ParamOutOfRange(_))));
        assert!(matches!(theorem_check(100.0, 101.0), Err(Error::ParamOutOfRange(_))));
    }

    #[test]
    fn verdict_monotone_on_grid() {
        let grid: Vec<f64> = (7..=80).step_by(7).map(|e| (e as f64).exp2()).collect();
        for &t in &grid {
            let mut last = f64::NEG_INFINITY;
            for &theta in grid.iter().filter(|&&th| th <= t) {
                let eps = theorem_check(t, theta).unwrap().epsilon_log2;
                assert!(eps >= last, "θ not monotone at t = {t}");
                last = eps;
            }
        }
        for &theta in &grid {
            let mut last = f64::NEG_INFINITY;
            for &t in grid.iter().filter(|&&t| t >= theta) {
                let v = theorem_check(t, theta).unwrap();
                assert!(v.epsilon_log2 >= last, "t not monotone at θ = {theta}");
                assert!(v.meets_threshold);
                last = v.epsilon_log2;
            }
        }
    }
}
