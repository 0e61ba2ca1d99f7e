//! Posted unit-price functions and mechanism constants.
//!
//! The operator posts a per-slot unit price `p_t` that depends only on the
//! resources `z` already allocated at the slot (not on the current bids), so
//! payments cannot be steered by misreports. Three price shapes are provided:
//!
//! - linear:      `p(z) = (b_max/C) z + b_min`
//! - quadratic:   `p(z) = z^2/C^2 + (b_max/C) z + b_min`
//! - exponential: `p(z) = b_max/(alpha-1) (alpha^{z/C} - 1) + b_min`
//!
//! Linear and exponential prices stay inside `[b_min, b_min + b_max]` over a
//! full slot; the quadratic shape intentionally overshoots the band by exactly
//! 1 at `z = C` and is kept literal.
//!
//! The exponential base `alpha` also drives the online dual-threshold updates.
//! Per slot it derives from the bid-to-capacity ratio `R`:
//! `alpha_t = (1 + R_t)^{1/R_t}`, which tends to Euler's number as `R_t → 0`.

use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::EPS;

/// Shape of the posted unit-price function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriceKind {
    Linear,
    Quadratic,
    Exponential,
}

impl FromStr for PriceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "quadratic" => Ok(Self::Quadratic),
            "exponential" => Ok(Self::Exponential),
            other => Err(Error::Domain(format!(
                "unknown price kind '{other}' (expected linear, quadratic, or exponential)"
            ))),
        }
    }
}

/// Parameters of the posted unit price at one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceParams {
    pub kind: PriceKind,
    /// Slot capacity `C`.
    pub capacity: f64,
    /// Price floor (unit price at an empty slot).
    pub b_min: f64,
    /// Price rise over a full slot (band width).
    pub b_max: f64,
    /// Exponential base; required by [`PriceKind::Exponential`], ignored
    /// otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl PriceParams {
    pub fn new(kind: PriceKind, capacity: f64, b_min: f64, b_max: f64) -> Result<Self> {
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::Domain(format!(
                "price capacity must be positive and finite, got {capacity}"
            )));
        }
        if !(b_min.is_finite() && b_min >= 0.0) {
            return Err(Error::Domain(format!(
                "price floor must be non-negative and finite, got {b_min}"
            )));
        }
        if !(b_max.is_finite() && b_max > 0.0) {
            return Err(Error::Domain(format!(
                "price band width must be positive and finite, got {b_max}"
            )));
        }
        Ok(Self {
            kind,
            capacity,
            b_min,
            b_max,
            alpha: None,
        })
    }

    /// Supplies the exponential base.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    /// Posted unit price at allocation level `z` (resources already sold at
    /// the slot). `z` must lie in `[0, C]` up to tolerance.
    pub fn unit_price(&self, z: f64) -> Result<f64> {
        if !z.is_finite() || z < -EPS || z > self.capacity + EPS {
            return Err(Error::Domain(format!(
                "allocation level {z} outside [0, {}]",
                self.capacity
            )));
        }
        let z = z.clamp(0.0, self.capacity);
        let s = z / self.capacity;
        match self.kind {
            PriceKind::Linear => Ok(self.b_max * s + self.b_min),
            PriceKind::Quadratic => Ok(s * s + self.b_max * s + self.b_min),
            PriceKind::Exponential => {
                let alpha = self.alpha.ok_or_else(|| {
                    Error::Domain("exponential price needs a base alpha".into())
                })?;
                if !(alpha.is_finite() && alpha > 1.0) {
                    return Err(Error::Domain(format!(
                        "exponential base must exceed 1, got {alpha}"
                    )));
                }
                Ok(self.b_max / (alpha - 1.0) * (alpha.powf(s) - 1.0) + self.b_min)
            }
        }
    }
}

/// Lowest and highest unit bid `b/Q` over a collection of `(Q, b)` pairs.
pub fn bid_price_bounds<I>(bids: I) -> Result<(f64, f64)>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut seen = false;
    for (q, b) in bids {
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::Domain(format!(
                "bid resources must be positive and finite, got {q}"
            )));
        }
        if !(b.is_finite() && b >= 0.0) {
            return Err(Error::Domain(format!(
                "bid price must be non-negative and finite, got {b}"
            )));
        }
        let unit = b / q;
        lo = lo.min(unit);
        hi = hi.max(unit);
        seen = true;
    }
    if !seen {
        return Err(Error::Domain("no bids to bound prices from".into()));
    }
    Ok((lo, hi))
}

/// A slot's bid-to-capacity ratio and the exponential base derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaInfo {
    /// Bid-to-capacity ratio `R_t`.
    pub ratio: f64,
    /// Base `alpha_t = (1 + R_t)^{1/R_t}`.
    pub alpha: f64,
}

fn alpha_from_ratio(ratio: f64) -> f64 {
    // exp(ln(1+R)/R) stays accurate as R approaches 0, where the value tends
    // to Euler's number.
    (ratio.ln_1p() / ratio).exp()
}

fn check_availability(availability: f64) -> Result<()> {
    if !(availability.is_finite() && availability > 0.0) {
        return Err(Error::Domain(format!(
            "availability must be positive and finite, got {availability}"
        )));
    }
    Ok(())
}

/// Pay-as-you-go slot constants: the ratio takes each user's *largest* bid
/// resources and the *maximum* across users, `R_t = max_i max_j Q_ij / A_t`.
pub fn alpha_payg(max_resources_per_user: &[f64], availability: f64) -> Result<AlphaInfo> {
    check_availability(availability)?;
    let mut worst = f64::NEG_INFINITY;
    for &q in max_resources_per_user {
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::Domain(format!(
                "per-user resources must be positive and finite, got {q}"
            )));
        }
        worst = worst.max(q);
    }
    if max_resources_per_user.is_empty() {
        return Err(Error::Domain("no users to derive a ratio from".into()));
    }
    let ratio = worst / availability;
    Ok(AlphaInfo {
        ratio,
        alpha: alpha_from_ratio(ratio),
    })
}

/// Pay-as-a-package slot constants: the ratio takes each user's *smallest* bid
/// resources and the *minimum* across users, `R_t = min_i min_j Q_ij / A_t`.
pub fn alpha_paap(min_resources_per_user: &[f64], availability: f64) -> Result<AlphaInfo> {
    check_availability(availability)?;
    let mut best = f64::INFINITY;
    for &q in min_resources_per_user {
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::Domain(format!(
                "per-user resources must be positive and finite, got {q}"
            )));
        }
        best = best.min(q);
    }
    if min_resources_per_user.is_empty() {
        return Err(Error::Domain("no users to derive a ratio from".into()));
    }
    let ratio = best / availability;
    Ok(AlphaInfo {
        ratio,
        alpha: alpha_from_ratio(ratio),
    })
}

/// Payment for serving `resources` units at the given unit price.
pub fn payment(resources: f64, unit_price: f64) -> f64 {
    resources * unit_price
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(kind: PriceKind) -> PriceParams {
        PriceParams::new(kind, 500.0, 2.0, 12.0).unwrap()
    }

    #[test]
    fn bounds_over_two_bids() {
        let (lo, hi) = bid_price_bounds([(2.0, 5.0), (4.0, 6.0)]).unwrap();
        assert_eq!(lo, 1.5);
        assert_eq!(hi, 2.5);
    }

    #[test]
    fn bounds_reject_empty_and_bad_bids() {
        assert!(bid_price_bounds(std::iter::empty()).is_err());
        assert!(bid_price_bounds([(0.0, 5.0)]).is_err());
        assert!(bid_price_bounds([(2.0, -1.0)]).is_err());
    }

    #[test]
    fn linear_price_spans_the_band() {
        let p = params(PriceKind::Linear);
        assert_eq!(p.unit_price(0.0).unwrap(), 2.0);
        assert_eq!(p.unit_price(250.0).unwrap(), 8.0);
        assert_eq!(p.unit_price(500.0).unwrap(), 14.0);
    }

    #[test]
    fn quadratic_price_overshoots_band_by_one_at_capacity() {
        let p = params(PriceKind::Quadratic);
        assert_eq!(p.unit_price(0.0).unwrap(), 2.0);
        let at_cap = p.unit_price(500.0).unwrap();
        assert!((at_cap - 15.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_price_hits_band_ends_for_any_base() {
        for alpha in [1.5, 2.0, 2.718281828, 5.0] {
            let p = params(PriceKind::Exponential).with_alpha(alpha);
            assert!((p.unit_price(0.0).unwrap() - 2.0).abs() < 1e-12);
            assert!((p.unit_price(500.0).unwrap() - 14.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exponential_never_exceeds_linear_inside_the_band() {
        // alpha^s - 1 is convex in s and matches (alpha-1)s at both ends, so
        // the exponential price sits below the linear one on (0, C).
        let lin = params(PriceKind::Linear);
        let exp = params(PriceKind::Exponential).with_alpha(2.3);
        let quad = params(PriceKind::Quadratic);
        for i in 0..=100 {
            let z = 5.0 * i as f64;
            let pl = lin.unit_price(z).unwrap();
            let pe = exp.unit_price(z).unwrap();
            let pq = quad.unit_price(z).unwrap();
            assert!(pe <= pl + 1e-12);
            assert!(pq >= pl - 1e-12);
        }
    }

    #[test]
    fn price_rejects_out_of_range_allocation() {
        let p = params(PriceKind::Linear);
        assert!(p.unit_price(-1.0).is_err());
        assert!(p.unit_price(501.0).is_err());
        assert!(p.unit_price(f64::NAN).is_err());
    }

    #[test]
    fn exponential_requires_valid_base() {
        let p = params(PriceKind::Exponential);
        assert!(p.unit_price(10.0).is_err());
        assert!(p.with_alpha(1.0).unit_price(10.0).is_err());
        assert!(p.with_alpha(0.5).unit_price(10.0).is_err());
    }

    #[test]
    fn payg_base_for_ratio_two_fifths() {
        let info = alpha_payg(&[4.0, 4.0], 10.0).unwrap();
        assert_eq!(info.ratio, 0.4);
        assert!((info.alpha - 1.4f64.powf(2.5)).abs() < 1e-12);
    }

    #[test]
    fn payg_base_at_ratio_one_is_two() {
        let info = alpha_payg(&[10.0], 10.0).unwrap();
        assert_eq!(info.ratio, 1.0);
        assert!((info.alpha - 2.0).abs() < 1e-12);
    }

    #[test]
    fn base_tends_to_euler_for_vanishing_ratio() {
        let info = alpha_payg(&[1e-9], 1.0).unwrap();
        assert!((info.alpha - std::f64::consts::E).abs() < 1e-6);
    }

    #[test]
    fn paap_base_takes_min_over_users_and_bids() {
        // Users with min-bid resources 5 and 8: the package ratio uses 5.
        let info = alpha_paap(&[5.0, 8.0], 10.0).unwrap();
        assert_eq!(info.ratio, 0.5);
        assert!((info.alpha - 2.25).abs() < 1e-12);
    }

    #[test]
    fn alpha_rejects_bad_inputs() {
        assert!(alpha_payg(&[], 10.0).is_err());
        assert!(alpha_payg(&[1.0], 0.0).is_err());
        assert!(alpha_payg(&[0.0], 10.0).is_err());
        assert!(alpha_paap(&[], 10.0).is_err());
    }

    #[test]
    fn payment_is_resources_times_unit_price() {
        assert_eq!(payment(100.0 / 34.0, 2.0), 200.0 / 34.0);
    }

    proptest! {
        /// Linear and exponential prices are nondecreasing in z and stay inside
        /// [b_min, b_min + b_max] across the whole slot.
        #[test]
        fn band_and_monotonicity(
            kind_pick in 0u8..2,
            alpha in 1.01f64..6.0,
            b_min in 0.1f64..10.0,
            b_max in 0.1f64..20.0,
            steps in 1usize..50,
        ) {
            let kind = if kind_pick == 0 { PriceKind::Linear } else { PriceKind::Exponential };
            let p = PriceParams::new(kind, 100.0, b_min, b_max).unwrap().with_alpha(alpha);
            let mut last = f64::NEG_INFINITY;
            for i in 0..=steps {
                let z = 100.0 * i as f64 / steps as f64;
                let v = p.unit_price(z).unwrap();
                prop_assert!(v >= b_min - 1e-9);
                prop_assert!(v <= b_min + b_max + 1e-9);
                prop_assert!(v >= last - 1e-9);
                last = v;
            }
        }

        /// The derived base always exceeds 1 and decreases as the ratio grows.
        #[test]
        fn alpha_monotone_in_ratio(q1 in 0.01f64..100.0, q2 in 0.01f64..100.0) {
            let a_small = alpha_payg(&[q1.min(q2)], 100.0).unwrap();
            let a_big = alpha_payg(&[q1.max(q2)], 100.0).unwrap();
            prop_assert!(a_small.alpha >= a_big.alpha - 1e-12);
            prop_assert!(a_big.alpha > 1.0);
        }
    }
}
