//! Travel-bundle feasibility: can a bid be realized as minutes spread over
//! travel modes?
//!
//! A bundle for a bid with requested time `T` must cover the trip distance
//! exactly, take between `T` and `T + delay_budget` minutes in total, and stay
//! within the user's inconvenience tolerance. When a posted unit price is in
//! play, the bid must also clear it: `b >= Q * p`. Bundle construction solves
//! a small linear program over the mode minutes; verification re-checks a
//! given bundle constraint by constraint with residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{BidItem, Bundle, ModeCatalog, UserRequest};
use crate::simplex::{Constraint, ConstraintOp, LpOutcome, StandardLp, solve_lp};
use crate::EPS;

/// Objective used to pick among feasible bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BundleObjective {
    /// Least accumulated inconvenience (default).
    MinInconvenience,
    /// Least total travel time.
    MinTotalTime,
    /// Any feasible bundle.
    FeasibleOnly,
}

impl Default for BundleObjective {
    fn default() -> Self {
        Self::MinInconvenience
    }
}

/// Verdict of bundle construction for one bid.
#[derive(Debug, Clone, PartialEq)]
pub enum BundleOutcome {
    /// A bundle realizing the bid.
    Feasible(Bundle),
    /// The bid price is below the posted price for its resources; no bundle
    /// was attempted.
    PricedOut,
    /// The geometry admits no bundle (distance/time/inconvenience conflict).
    Infeasible,
}

fn validate_query(request: &UserRequest, bid: &BidItem) -> Result<()> {
    if !(request.delay_budget.is_finite() && request.delay_budget >= 0.0) {
        return Err(Error::Domain(format!(
            "delay budget must be non-negative and finite, got {}",
            request.delay_budget
        )));
    }
    if !(request.inconvenience_tolerance.is_finite() && request.inconvenience_tolerance >= 0.0) {
        return Err(Error::Domain(format!(
            "inconvenience tolerance must be non-negative and finite, got {}",
            request.inconvenience_tolerance
        )));
    }
    if !(bid.price.is_finite() && bid.price >= 0.0) {
        return Err(Error::Domain(format!(
            "bid price must be non-negative and finite, got {}",
            bid.price
        )));
    }
    // Positivity of distance and requested time is enforced here as well.
    request.resources(bid).map(|_| ())
}

/// Builds a bundle realizing `bid`, or reports why none exists.
///
/// With `unit_price = Some(p)`, the bid must clear the posted price first:
/// `b >= Q * p` (up to tolerance), else [`BundleOutcome::PricedOut`].
pub fn feasible_bundle(
    request: &UserRequest,
    bid: &BidItem,
    catalog: &ModeCatalog,
    objective: BundleObjective,
    unit_price: Option<f64>,
) -> Result<BundleOutcome> {
    validate_query(request, bid)?;
    if let Some(p) = unit_price {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Domain(format!(
                "posted unit price must be non-negative and finite, got {p}"
            )));
        }
        let q = request.resources(bid)?;
        if bid.price + EPS < q * p {
            return Ok(BundleOutcome::PricedOut);
        }
    }

    let n = catalog.len();
    let speeds: Vec<f64> = catalog.modes().iter().map(|m| m.speed).collect();
    let rates: Vec<f64> = catalog.modes().iter().map(|m| m.inconvenience_rate).collect();
    let objective_row = match objective {
        BundleObjective::MinInconvenience => rates.iter().map(|r| -r).collect(),
        BundleObjective::MinTotalTime => vec![-1.0; n],
        BundleObjective::FeasibleOnly => vec![0.0; n],
    };
    let lp = StandardLp {
        objective: objective_row,
        constraints: vec![
            Constraint {
                coeffs: speeds,
                op: ConstraintOp::Eq,
                rhs: request.distance,
            },
            Constraint {
                coeffs: vec![1.0; n],
                op: ConstraintOp::Ge,
                rhs: bid.requested_time,
            },
            Constraint {
                coeffs: vec![1.0; n],
                op: ConstraintOp::Le,
                rhs: bid.requested_time + request.delay_budget,
            },
            Constraint {
                coeffs: rates,
                op: ConstraintOp::Le,
                rhs: request.inconvenience_tolerance,
            },
        ],
    };
    match solve_lp(&lp)? {
        LpOutcome::Optimal(s) => Ok(BundleOutcome::Feasible(Bundle { times: s.x })),
        LpOutcome::Infeasible => Ok(BundleOutcome::Infeasible),
        LpOutcome::Unbounded => Err(Error::Internal(
            "bundle program is bounded by construction yet reported unbounded".into(),
        )),
    }
}

/// One violated bundle constraint with the magnitude of the violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BundleViolation {
    /// |covered distance - trip distance| beyond tolerance.
    Distance { residual: f64 },
    /// Total time short of the requested time.
    TimeBelow { residual: f64 },
    /// Total time beyond requested time + delay budget.
    TimeAbove { residual: f64 },
    /// Accumulated inconvenience beyond the tolerance.
    Inconvenience { residual: f64 },
    /// A mode was assigned negative minutes.
    NegativeTime { mode: usize, value: f64 },
}

/// Result of re-checking a bundle against a bid's constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleCheck {
    pub ok: bool,
    pub violations: Vec<BundleViolation>,
}

/// Re-checks `bundle` against the geometric constraints of (`request`, `bid`)
/// with tolerance [`EPS`]. The posted-price gate is not part of this check.
pub fn is_bundle_feasible(
    bundle: &Bundle,
    request: &UserRequest,
    bid: &BidItem,
    catalog: &ModeCatalog,
) -> Result<BundleCheck> {
    validate_query(request, bid)?;
    if bundle.times.len() != catalog.len() {
        return Err(Error::Domain(format!(
            "bundle has {} mode entries, catalog has {}",
            bundle.times.len(),
            catalog.len()
        )));
    }
    let mut violations = Vec::new();
    for (m, &l) in bundle.times.iter().enumerate() {
        if !l.is_finite() || l < -EPS {
            violations.push(BundleViolation::NegativeTime { mode: m, value: l });
        }
    }
    let covered = bundle.distance_covered(catalog);
    if (covered - request.distance).abs() > EPS {
        violations.push(BundleViolation::Distance {
            residual: (covered - request.distance).abs(),
        });
    }
    let total = bundle.total_time();
    if total < bid.requested_time - EPS {
        violations.push(BundleViolation::TimeBelow {
            residual: bid.requested_time - total,
        });
    }
    let limit = bid.requested_time + request.delay_budget;
    if total > limit + EPS {
        violations.push(BundleViolation::TimeAbove {
            residual: total - limit,
        });
    }
    let inconvenience = bundle.inconvenience(catalog);
    if inconvenience > request.inconvenience_tolerance + EPS {
        violations.push(BundleViolation::Inconvenience {
            residual: inconvenience - request.inconvenience_tolerance,
        });
    }
    Ok(BundleCheck {
        ok: violations.is_empty(),
        violations,
    })
}
