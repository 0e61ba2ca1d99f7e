//! Competitive-ratio computation, primal/dual sanity checks, and
//! incentive-compatibility audits.
//!
//! The guarantee side: [`theta_payg`] and [`theta_paap`] evaluate the
//! mechanisms' worst-case competitive ratios from a trace's realized
//! bid-to-capacity ratios, and [`welfare_ratio`] measures the achieved ratio
//! against an offline optimum. The audit side replays mechanisms under
//! controlled misreports: [`ic_audit_payg`] re-simulates a posted-price slot
//! across a grid of bid factors and classifies every outcome into the six
//! orderings of (value, price, report); [`ic_audit_paap`] re-solves the
//! package LP per misreport and scores utility against true valuations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{CapacityLedger, UserRequest};
use crate::offline::{
    build_columns, solve_offline_lp, PriceMode, ServiceWindowPolicy,
};
use crate::online::{auction_step, Mechanism, SlotOutcome, StepConfig};
use crate::pricing::AlphaInfo;
use crate::EPS;

/// Worst-case ratio summary extracted from a run's per-slot exponent bases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSummary {
    /// The competitive-ratio guarantee.
    pub theta: f64,
    /// Smallest per-slot base `alpha` across the run.
    pub alpha_floor: f64,
    /// Largest per-slot bid-to-capacity ratio across the run.
    pub ratio_peak: f64,
    /// Number of priced slots contributing.
    pub slots: usize,
}

fn summarize_alphas(alphas: &[AlphaInfo]) -> Result<(f64, f64, usize)> {
    if alphas.is_empty() {
        return Err(Error::Domain(
            "competitive ratio needs at least one priced slot".into(),
        ));
    }
    let mut alpha_floor = f64::INFINITY;
    let mut ratio_peak = f64::NEG_INFINITY;
    for a in alphas {
        alpha_floor = alpha_floor.min(a.alpha);
        ratio_peak = ratio_peak.max(a.ratio);
    }
    Ok((alpha_floor, ratio_peak, alphas.len()))
}

/// Pay-as-you-go guarantee: `theta = (1 - ratio_peak) * (1 - 1/alpha_floor)`.
pub fn theta_payg(alphas: &[AlphaInfo]) -> Result<ThetaSummary> {
    let (alpha_floor, ratio_peak, slots) = summarize_alphas(alphas)?;
    Ok(ThetaSummary {
        theta: (1.0 - ratio_peak) * (1.0 - 1.0 / alpha_floor),
        alpha_floor,
        ratio_peak,
        slots,
    })
}

/// Pay-as-a-package guarantee: `theta = 1 - 1/alpha_floor`.
pub fn theta_paap(alphas: &[AlphaInfo]) -> Result<ThetaSummary> {
    let (alpha_floor, ratio_peak, slots) = summarize_alphas(alphas)?;
    Ok(ThetaSummary {
        theta: 1.0 - 1.0 / alpha_floor,
        alpha_floor,
        ratio_peak,
        slots,
    })
}

/// The per-slot bases of the priced slots of a run, in slot order.
pub fn collect_alphas(outcomes: &[SlotOutcome]) -> Vec<AlphaInfo> {
    outcomes.iter().filter_map(|o| o.alpha).collect()
}

/// Achieved-vs-optimal welfare quotient. Both empty counts as 1; an online
/// welfare strictly above a zero offline optimum is impossible and reported
/// as an internal error.
pub fn welfare_ratio(online: f64, offline: f64) -> Result<f64> {
    let tol = 1e-9 * offline.abs().max(1.0);
    if offline.abs() <= tol {
        if online > tol {
            return Err(Error::Internal(format!(
                "online welfare {online} exceeds a zero offline optimum"
            )));
        }
        return Ok(1.0);
    }
    Ok(online / offline)
}

/// Guarantee, measurement, and their gap for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub mechanism: Mechanism,
    /// Worst-case guarantee from the realized ratio series.
    pub theta: f64,
    /// Measured online/offline welfare quotient.
    pub welfare_ratio: f64,
    /// `welfare_ratio - theta`; non-negative when the guarantee holds.
    pub gap: f64,
    /// Per-priced-slot bid-to-capacity ratios, in slot order.
    pub ratio_series: Vec<f64>,
    /// Per-priced-slot exponent bases, in slot order.
    pub alpha_series: Vec<f64>,
    pub alpha_floor: f64,
    pub ratio_peak: f64,
}

/// Builds the full report for a run: guarantee from the trace's alphas,
/// measured ratio from the welfare pair.
pub fn ratio_report(
    mechanism: Mechanism,
    outcomes: &[SlotOutcome],
    online_welfare: f64,
    offline_optimum: f64,
) -> Result<RatioReport> {
    let alphas = collect_alphas(outcomes);
    let summary = match mechanism {
        Mechanism::Payg => theta_payg(&alphas)?,
        Mechanism::Paap => theta_paap(&alphas)?,
    };
    let measured = welfare_ratio(online_welfare, offline_optimum)?;
    Ok(RatioReport {
        mechanism,
        theta: summary.theta,
        welfare_ratio: measured,
        gap: measured - summary.theta,
        ratio_series: alphas.iter().map(|a| a.ratio).collect(),
        alpha_series: alphas.iter().map(|a| a.alpha).collect(),
        alpha_floor: summary.alpha_floor,
        ratio_peak: summary.ratio_peak,
    })
}

/// Per-iteration residuals of the increment identity
/// `dP = (1 - 1/alpha) * dD` over a slot's accepted iterations, where
/// `dP = b * x` and `dD = A * dq + (b - Q_ref * q_before)`.
pub fn identity_residuals(outcome: &SlotOutcome) -> Vec<f64> {
    let Some(alpha) = outcome.alpha else {
        return Vec::new();
    };
    let factor = 1.0 - 1.0 / alpha.alpha;
    let a = outcome.availability_start;
    outcome
        .iterations
        .iter()
        .map(|it| {
            let dp = it.bid_price * it.fraction;
            let dd = a * (it.q_after - it.q_before)
                + (it.bid_price - it.reference_resources * it.q_before);
            (dp - factor * dd).abs()
        })
        .collect()
}

/// Largest identity residual across many slots; 0 for an empty trace.
pub fn primal_dual_identity_check(outcomes: &[SlotOutcome]) -> f64 {
    outcomes
        .iter()
        .flat_map(identity_residuals)
        .fold(0.0, f64::max)
}

/// End-of-slot dual audit: supported utilities and the worst slack of
/// `Q * q + u >= b` over every bid the slot saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualFeasibilityReport {
    pub bids_checked: usize,
    /// `max over bids of (b - Q*q - u)`; at most 0 up to rounding.
    pub worst_violation: f64,
    /// Supported utility per user id, sorted by user id.
    pub utilities: Vec<(usize, f64)>,
    /// Whether the end-of-slot threshold was non-negative.
    pub threshold_nonnegative: bool,
}

/// Checks the end-of-slot dual constraints of one slot using the mechanism's
/// own threshold and the minimal supporting utilities
/// `u_i = max(0, max_j (b_ij - Q_ij * q))`.
pub fn dual_feasibility_check(outcome: &SlotOutcome) -> DualFeasibilityReport {
    let q = outcome.threshold_final.unwrap_or(0.0);
    let mut utilities: Vec<(usize, f64)> = Vec::new();
    for bid in &outcome.considered {
        let margin = (bid.price - bid.resources * q).max(0.0);
        match utilities.binary_search_by_key(&bid.user_id, |&(id, _)| id) {
            Ok(pos) => {
                if margin > utilities[pos].1 {
                    utilities[pos].1 = margin;
                }
            }
            Err(pos) => utilities.insert(pos, (bid.user_id, margin)),
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for bid in &outcome.considered {
        let pos = utilities
            .binary_search_by_key(&bid.user_id, |&(id, _)| id)
            .expect("utility recorded for every considered user");
        let slack = bid.price - bid.resources * q - utilities[pos].1;
        worst = worst.max(slack);
    }
    DualFeasibilityReport {
        bids_checked: outcome.considered.len(),
        worst_violation: if outcome.considered.is_empty() {
            0.0
        } else {
            worst
        },
        utilities,
        threshold_nonnegative: q >= -EPS,
    }
}

/// Largest amount by which any slot's total reservations exceed capacity;
/// at most 0 up to rounding on a healthy ledger. An empty ledger reports 0.
pub fn capacity_violation(ledger: &CapacityLedger) -> f64 {
    if ledger.horizon() == 0 {
        return 0.0;
    }
    (0..ledger.horizon())
        .map(|t| ledger.allocated(t) - ledger.capacity())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The six strict orderings of (true value v, posted payment P, report b),
/// plus the identity report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableCase {
    /// b = v: the truthful grid point.
    Truthful,
    /// v < P <= b: the inflated bid wins a trip worth less than its price.
    OverbidIntoLoss,
    /// v <= b < P: inflated, but still below the posted price.
    OverbidStillRejected,
    /// P <= v <= b: served either way at the same posted payment.
    OverbidStillServed,
    /// P <= b <= v: served either way at the same posted payment.
    UnderbidStillServed,
    /// b < P <= v: the deflated bid forfeits a positive surplus.
    UnderbidForfeitsSurplus,
    /// b <= v < P: deflated and rejected either way.
    UnderbidStillRejected,
}

impl TableCase {
    /// The predicted relation between misreport utility and truthful
    /// utility: `true` means strictly worse is possible, `false` means they
    /// must be equal.
    pub fn expects_equal_utility(self) -> bool {
        !matches!(
            self,
            TableCase::OverbidIntoLoss | TableCase::UnderbidForfeitsSurplus
        )
    }
}

fn classify(value: f64, payment_level: f64, report: f64) -> TableCase {
    if (report - value).abs() <= 1e-12 * value.abs().max(1.0) {
        return TableCase::Truthful;
    }
    let served = report >= payment_level - EPS;
    if report > value {
        if !served {
            TableCase::OverbidStillRejected
        } else if value < payment_level - EPS {
            TableCase::OverbidIntoLoss
        } else {
            TableCase::OverbidStillServed
        }
    } else if served {
        TableCase::UnderbidStillServed
    } else if value >= payment_level - EPS {
        TableCase::UnderbidForfeitsSurplus
    } else {
        TableCase::UnderbidStillRejected
    }
}

/// One grid point of a misreport audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisreportOutcome {
    pub factor: f64,
    /// The subject's reported price for their first bid after scaling.
    pub reported: f64,
    pub served: bool,
    /// Realized surplus against true valuations.
    pub utility: f64,
    pub case: TableCase,
}

/// Full audit report for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcAuditReport {
    pub subject: usize,
    pub truthful_utility: f64,
    pub evaluations: Vec<MisreportOutcome>,
    /// Grid points whose utility beat truthful by more than the tolerance.
    pub violations: Vec<(f64, f64)>,
    /// Largest misreport utility minus truthful utility.
    pub worst_gain: f64,
    /// Grid points whose utility departed from the six-case prediction.
    pub case_mismatches: Vec<f64>,
}

/// The 21-point multiplicative misreport grid over [0.5, 1.5].
pub fn default_misreport_grid() -> Vec<f64> {
    (0..21).map(|k| 0.5 + k as f64 / 20.0).collect()
}

fn scale_subject_bids(users: &[UserRequest], subject: usize, factor: f64) -> Vec<UserRequest> {
    let mut scaled = users.to_vec();
    for u in &mut scaled {
        if u.user_id == subject {
            for b in &mut u.bids {
                b.price *= factor;
            }
        }
    }
    scaled
}

fn subject_surplus(
    outcome: &SlotOutcome,
    truthful: &UserRequest,
) -> (bool, f64) {
    let mut served = false;
    let mut utility = 0.0;
    for a in &outcome.allocations {
        if a.user_id == truthful.user_id {
            served = true;
            let value = truthful
                .bids
                .iter()
                .find(|b| b.bid_id == a.bid_id)
                .map(|b| b.price)
                .expect("allocated bid exists in the truthful request");
            utility += a.fraction * value - a.payment;
        }
    }
    (served, utility)
}

/// Re-simulates one posted-price slot across the misreport grid for one
/// subject. Every run starts from a fresh copy of the given ledger; the
/// truthful run is the factor-1.0 baseline. Utilities are realized surplus
/// `fraction * value - payment` with value taken from the truthful request.
pub fn ic_audit_payg(
    ledger: &CapacityLedger,
    slot: usize,
    users: &[UserRequest],
    subject: usize,
    cfg: &StepConfig,
    grid: &[f64],
    tol: f64,
) -> Result<IcAuditReport> {
    let truthful_user = users
        .iter()
        .find(|u| u.user_id == subject)
        .ok_or_else(|| Error::Domain(format!("subject {subject} not among the users")))?
        .clone();
    let truthful_refs: Vec<&UserRequest> = users.iter().collect();
    let mut base_ledger = ledger.clone();
    let truthful_outcome = auction_step(&mut base_ledger, slot, &truthful_refs, cfg)?;
    let posted = truthful_outcome.posted_price.ok_or_else(|| {
        Error::Domain("the audit needs a posted unit price at the slot".into())
    })?;
    let (_, truthful_utility) = subject_surplus(&truthful_outcome, &truthful_user);

    let first_bid = &truthful_user.bids[0];
    let value = first_bid.price;
    let payment_level = truthful_user.resources(first_bid)? * posted;

    let mut evaluations = Vec::with_capacity(grid.len());
    let mut violations = Vec::new();
    let mut case_mismatches = Vec::new();
    let mut worst_gain = f64::NEG_INFINITY;
    for &factor in grid {
        let scaled = scale_subject_bids(users, subject, factor);
        let refs: Vec<&UserRequest> = scaled.iter().collect();
        let mut run_ledger = ledger.clone();
        let outcome = auction_step(&mut run_ledger, slot, &refs, cfg)?;
        let (served, utility) = subject_surplus(&outcome, &truthful_user);
        let case = classify(value, payment_level, factor * value);
        let gain = utility - truthful_utility;
        worst_gain = worst_gain.max(gain);
        if gain > tol {
            violations.push((factor, gain));
        }
        let case_ok = if case.expects_equal_utility() {
            gain.abs() <= tol
        } else {
            gain <= tol
        };
        if !case_ok {
            case_mismatches.push(factor);
        }
        evaluations.push(MisreportOutcome {
            factor,
            reported: factor * value,
            served,
            utility,
            case,
        });
    }
    Ok(IcAuditReport {
        subject,
        truthful_utility,
        evaluations,
        violations,
        worst_gain,
        case_mismatches,
    })
}

/// One grid point of the package-LP audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaapMisreportOutcome {
    pub factor: f64,
    /// Total allocated fraction of the subject across their columns.
    pub allocated: f64,
    /// Realized surplus against true valuations at the run's duals.
    pub utility: f64,
}

/// Package-audit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaapAuditReport {
    pub subject: usize,
    pub truthful_utility: f64,
    pub evaluations: Vec<PaapMisreportOutcome>,
    pub violations: Vec<(f64, f64)>,
    pub worst_gain: f64,
}

/// Re-solves the package LP across the misreport grid for one subject.
/// Columns are rebuilt per run (so a posted-price gate can drop underbids);
/// utility is `sum over the subject's columns of x * (value - Q * q_slot)`
/// with value and duals taken from each run but values from the truthful
/// request.
#[allow(clippy::too_many_arguments)]
pub fn ic_audit_paap(
    users: &[UserRequest],
    subject: usize,
    availability: &[f64],
    catalog: &crate::market::ModeCatalog,
    objective: crate::bundle::BundleObjective,
    policy: ServiceWindowPolicy,
    gate: PriceMode,
    grid: &[f64],
    tol: f64,
) -> Result<PaapAuditReport> {
    let truthful_user = users
        .iter()
        .find(|u| u.user_id == subject)
        .ok_or_else(|| Error::Domain(format!("subject {subject} not among the users")))?
        .clone();
    let horizon = availability.len();

    let evaluate = |factor: f64| -> Result<(f64, f64)> {
        let scaled = scale_subject_bids(users, subject, factor);
        let refs: Vec<&UserRequest> = scaled.iter().collect();
        let columns = build_columns(&refs, catalog, objective, policy, gate, horizon)?;
        let solution = solve_offline_lp(&columns, availability, scaled.len())?;
        let mut allocated = 0.0;
        let mut utility = 0.0;
        for (k, c) in columns.iter().enumerate() {
            if c.user_id != subject {
                continue;
            }
            let value = truthful_user
                .bids
                .iter()
                .find(|b| b.bid_id == c.bid_id)
                .map(|b| b.price)
                .expect("column bid exists in the truthful request");
            allocated += solution.x[k];
            utility += solution.x[k] * (value - c.resources * solution.slot_duals[c.slot]);
        }
        Ok((allocated, utility))
    };

    let (_, truthful_utility) = evaluate(1.0)?;
    let mut evaluations = Vec::with_capacity(grid.len());
    let mut violations = Vec::new();
    let mut worst_gain = f64::NEG_INFINITY;
    for &factor in grid {
        let (allocated, utility) = evaluate(factor)?;
        let gain = utility - truthful_utility;
        worst_gain = worst_gain.max(gain);
        if gain > tol {
            violations.push((factor, gain));
        }
        evaluations.push(PaapMisreportOutcome {
            factor,
            allocated,
            utility,
        });
    }
    Ok(PaapAuditReport {
        subject,
        truthful_utility,
        evaluations,
        violations,
        worst_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::BundleObjective;
    use crate::market::{BidItem, ModeCatalog};
    use crate::online::{run_paap_slot, run_payg_slot, PaymentRule, SlotContext};
    use crate::pricing::{alpha_payg, PriceKind, PriceParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn user(
        user_id: usize,
        distance: f64,
        delay: f64,
        tolerance: f64,
        bids: Vec<(f64, f64)>,
    ) -> UserRequest {
        UserRequest {
            user_id,
            distance,
            departure_slot: 0,
            placement_slot: None,
            delay_budget: delay,
            inconvenience_tolerance: tolerance,
            package_length: 1,
            bids: bids
                .into_iter()
                .enumerate()
                .map(|(bid_id, (requested_time, price))| BidItem {
                    bid_id,
                    requested_time,
                    price,
                })
                .collect(),
        }
    }

    #[test]
    fn theta_payg_constant_half_ratio() {
        let a = alpha_payg(&[5.0], 10.0).unwrap();
        let s = theta_payg(&[a, a, a]).unwrap();
        assert!((s.alpha_floor - 2.25).abs() < 1e-12);
        assert!((s.theta - 0.5 * (1.0 - 1.0 / 2.25)).abs() < 1e-12);
        assert!((s.theta - 0.2778).abs() < 1e-4);
    }

    #[test]
    fn theta_approaches_one_minus_inverse_e_for_small_ratios() {
        let a = alpha_payg(&[1e-4], 10.0).unwrap();
        let payg = theta_payg(&[a]).unwrap();
        let limit = 1.0 - 1.0 / std::f64::consts::E;
        assert!((payg.theta - limit).abs() < 1e-4);

        let paap = theta_paap(&[a]).unwrap();
        assert!((paap.theta - limit).abs() < 1e-5);
        assert!(paap.theta < limit);
    }

    #[test]
    fn theta_paap_unit_ratio() {
        let a = alpha_payg(&[10.0], 10.0).unwrap();
        assert!((a.alpha - 2.0).abs() < 1e-12);
        let s = theta_paap(&[a]).unwrap();
        assert!((s.theta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn theta_uses_extremes_across_mixed_slots() {
        let small = alpha_payg(&[1.0], 100.0).unwrap();
        let large = alpha_payg(&[50.0], 100.0).unwrap();
        let s = theta_paap(&[small, large]).unwrap();
        assert_eq!(s.alpha_floor, small.alpha.min(large.alpha));
        assert_eq!(s.ratio_peak, 0.5);
        let p = theta_payg(&[small, large]).unwrap();
        assert!((p.theta - 0.5 * (1.0 - 1.0 / s.alpha_floor)).abs() < 1e-12);
    }

    #[test]
    fn theta_errors_without_priced_slots() {
        assert!(theta_payg(&[]).is_err());
    }

    #[test]
    fn welfare_ratio_conventions() {
        assert!((welfare_ratio(8.0, 10.0).unwrap() - 0.8).abs() < 1e-12);
        assert!((welfare_ratio(10.0, 10.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((welfare_ratio(0.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(welfare_ratio(1.0, 0.0).is_err());
    }

    fn slot_ctx<'a>(cat: &'a ModeCatalog) -> SlotContext<'a> {
        SlotContext {
            slot: 0,
            catalog: cat,
            objective: BundleObjective::MinInconvenience,
            payment_rule: PaymentRule::DualThreshold,
            posted_price: None,
        }
    }

    #[test]
    fn identity_holds_on_the_two_user_fixture() {
        let cat = ModeCatalog::standard();
        let u1 = user(1, 10.0, 5.0, 100.0, vec![(25.0, 8.0)]);
        let u2 = user(2, 10.0, 5.0, 100.0, vec![(25.0, 4.0)]);
        let mut ledger = CapacityLedger::new(10.0, 30).unwrap();
        let out = run_payg_slot(&mut ledger, &[&u1, &u2], &slot_ctx(&cat)).unwrap();
        let residuals = identity_residuals(&out);
        assert_eq!(residuals.len(), 2);
        assert!(residuals.iter().all(|&r| r <= 1e-9));
        assert_eq!(primal_dual_identity_check(&[]), 0.0);
    }

    #[test]
    fn identity_holds_on_randomized_slots_for_both_mechanisms() {
        let cat = ModeCatalog::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for round in 0..8 {
            let n = 40;
            let users: Vec<UserRequest> = (0..n)
                .map(|i| {
                    let d = rng.gen_range(2.0..12.0);
                    let t1 = rng.gen_range(2.2 * d..9.0 * d);
                    let t2 = rng.gen_range(2.2 * d..9.0 * d);
                    let q1 = d * d / t1;
                    user(
                        i,
                        d,
                        rng.gen_range(5.0..60.0),
                        rng.gen_range(200.0..900.0),
                        vec![
                            (t1, rng.gen_range(0.5..4.0) * q1),
                            (t2, rng.gen_range(0.5..4.0) * (d * d / t2)),
                        ],
                    )
                })
                .collect();
            let refs: Vec<&UserRequest> = users.iter().collect();
            let mut ledger = CapacityLedger::new(400.0, 200).unwrap();
            let out = if round % 2 == 0 {
                run_payg_slot(&mut ledger, &refs, &slot_ctx(&cat)).unwrap()
            } else {
                run_paap_slot(&mut ledger, &refs, &slot_ctx(&cat)).unwrap()
            };
            assert!(!out.iterations.is_empty());
            let worst = primal_dual_identity_check(std::slice::from_ref(&out));
            assert!(worst <= 1e-9, "round {round}: residual {worst}");
        }
    }

    #[test]
    fn dual_feasibility_on_fixture_slots() {
        let cat = ModeCatalog::standard();
        let u1 = user(1, 10.0, 5.0, 100.0, vec![(25.0, 8.0)]);
        let u2 = user(2, 10.0, 5.0, 100.0, vec![(25.0, 4.0)]);
        let u3 = user(3, 10.0, 5.0, 100.0, vec![(25.0, 2.0)]);
        let mut ledger = CapacityLedger::new(10.0, 30).unwrap();
        let out = run_payg_slot(&mut ledger, &[&u1, &u2, &u3], &slot_ctx(&cat)).unwrap();
        let report = dual_feasibility_check(&out);
        assert_eq!(report.bids_checked, 3);
        assert!(report.worst_violation <= 1e-9);
        assert!(report.threshold_nonnegative);
        // The supported utility of the top user is its full margin over the
        // final threshold.
        let q = out.threshold_final.unwrap();
        let u1_utility = report
            .utilities
            .iter()
            .find(|&&(id, _)| id == 1)
            .unwrap()
            .1;
        assert!((u1_utility - (8.0 - 4.0 * q).max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn capacity_violation_is_nonpositive_on_healthy_ledgers() {
        let mut ledger = CapacityLedger::new(10.0, 4).unwrap();
        ledger.reserve((0, 2), 4.0).unwrap();
        ledger.reserve((1, 1), 6.0).unwrap();
        assert!(capacity_violation(&ledger) <= 1e-12);
    }

    #[test]
    fn theta_is_invariant_under_uniform_bid_scaling() {
        let cat = ModeCatalog::standard();
        let users: Vec<UserRequest> = (0..5)
            .map(|i| user(i, 8.0, 20.0, 400.0, vec![(30.0, 5.0 + i as f64)]))
            .collect();
        let refs: Vec<&UserRequest> = users.iter().collect();
        let mut ledger = CapacityLedger::new(50.0, 80).unwrap();
        let out = run_payg_slot(&mut ledger, &refs, &slot_ctx(&cat)).unwrap();
        let theta = theta_payg(&collect_alphas(std::slice::from_ref(&out)))
            .unwrap()
            .theta;

        let scaled: Vec<UserRequest> = users
            .iter()
            .map(|u| {
                let mut s = u.clone();
                for b in &mut s.bids {
                    b.price *= 7.5;
                }
                s
            })
            .collect();
        let scaled_refs: Vec<&UserRequest> = scaled.iter().collect();
        let mut ledger2 = CapacityLedger::new(50.0, 80).unwrap();
        let out2 = run_payg_slot(&mut ledger2, &scaled_refs, &slot_ctx(&cat)).unwrap();
        let theta2 = theta_payg(&collect_alphas(std::slice::from_ref(&out2)))
            .unwrap()
            .theta;
        assert!((theta - theta2).abs() < 1e-12);
        assert_eq!(out.allocations.len(), out2.allocations.len());
    }

    /// Posted-price audit in the displacement-free regime: capacity 2e6 with
    /// 1e6 sold pins the linear price at 8, so a 10km/25min bid (Q = 4) pays
    /// 32. A subject valued at 40 and one valued at 24 cover all six cases
    /// across the grid with zero violations.
    #[test]
    fn payg_audit_covers_six_cases_without_violations() {
        let cat = ModeCatalog::standard();
        let mut ledger = CapacityLedger::new(2e6, 40).unwrap();
        ledger.reserve((0, 30), 1e6).unwrap();
        let cfg = StepConfig {
            mechanism: Mechanism::Payg,
            catalog: &cat,
            price: PriceParams::new(PriceKind::Linear, 2e6, 2.0, 12.0).unwrap(),
            objective: BundleObjective::MinInconvenience,
            payment_rule: PaymentRule::Posted,
        };
        let bystander = user(9, 10.0, 5.0, 100.0, vec![(25.0, 200.0)]);
        let grid = default_misreport_grid();

        let rich = user(1, 10.0, 5.0, 100.0, vec![(25.0, 40.0)]);
        let users = vec![rich, bystander.clone()];
        let report = ic_audit_payg(&ledger, 0, &users, 1, &cfg, &grid, 1e-9).unwrap();
        assert!((report.truthful_utility - 8.0).abs() < 1e-9);
        assert!(report.violations.is_empty());
        assert!(report.case_mismatches.is_empty());
        assert!(report.worst_gain <= 1e-9);
        let cases: Vec<TableCase> = report.evaluations.iter().map(|e| e.case).collect();
        assert!(cases.contains(&TableCase::UnderbidForfeitsSurplus));
        assert!(cases.contains(&TableCase::UnderbidStillServed));
        assert!(cases.contains(&TableCase::Truthful));
        assert!(cases.contains(&TableCase::OverbidStillServed));
        // A forfeited point loses the full surplus of 8.
        let forfeited = report
            .evaluations
            .iter()
            .find(|e| e.case == TableCase::UnderbidForfeitsSurplus)
            .unwrap();
        assert!(!forfeited.served);
        assert!(forfeited.utility.abs() < 1e-12);

        let poor = user(2, 10.0, 5.0, 100.0, vec![(25.0, 24.0)]);
        let users = vec![poor, bystander];
        let report = ic_audit_payg(&ledger, 0, &users, 2, &cfg, &grid, 1e-9).unwrap();
        assert!(report.truthful_utility.abs() < 1e-12);
        assert!(report.violations.is_empty());
        assert!(report.case_mismatches.is_empty());
        let cases: Vec<TableCase> = report.evaluations.iter().map(|e| e.case).collect();
        assert!(cases.contains(&TableCase::UnderbidStillRejected));
        assert!(cases.contains(&TableCase::OverbidStillRejected));
        assert!(cases.contains(&TableCase::OverbidIntoLoss));
        // The lossy overbid is served and pays more than its value.
        let lossy = report
            .evaluations
            .iter()
            .find(|e| e.case == TableCase::OverbidIntoLoss)
            .unwrap();
        assert!(lossy.served);
        assert!((lossy.utility - (24.0 - 32.0)).abs() < 1e-9);
    }

    /// Package audit on the two-user knapsack: truthful duals give q = 5/3
    /// and the subject (Q = 5, b = 9) a surplus of 2/3. With the posted gate
    /// at 5/3, underbids below Q * 5/3 = 25/3 lose the column (utility 0);
    /// all other grid points keep the basis and the utility unchanged.
    #[test]
    fn paap_audit_gate_closes_the_underbid_window() {
        let cat = ModeCatalog::standard();
        let u1 = user(1, 10.0, 10.0, 100.0, vec![(100.0 / 6.0, 10.0)]);
        let u2 = user(2, 10.0, 10.0, 100.0, vec![(20.0, 9.0)]);
        let users = vec![u1, u2];
        let report = ic_audit_paap(
            &users,
            2,
            &[10.0],
            &cat,
            BundleObjective::MinInconvenience,
            ServiceWindowPolicy::default(),
            PriceMode::Fixed(5.0 / 3.0),
            &default_misreport_grid(),
            1e-9,
        )
        .unwrap();
        assert!((report.truthful_utility - 2.0 / 3.0).abs() < 1e-9);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(report.worst_gain <= 1e-9);
        for e in &report.evaluations {
            if e.factor * 9.0 < 25.0 / 3.0 {
                assert!(e.allocated.abs() < 1e-9, "factor {}", e.factor);
                assert!(e.utility.abs() < 1e-9);
            } else {
                assert!((e.utility - 2.0 / 3.0).abs() < 1e-9, "factor {}", e.factor);
            }
        }
    }

    /// Slack capacity: duals are zero, everyone is fully served, and no
    /// misreport changes anything except a gated exit.
    #[test]
    fn paap_audit_slack_capacity_is_truthful() {
        let cat = ModeCatalog::standard();
        let u1 = user(1, 10.0, 10.0, 100.0, vec![(20.0, 9.0)]);
        let u2 = user(2, 10.0, 10.0, 100.0, vec![(25.0, 7.0)]);
        let users = vec![u1, u2];
        let report = ic_audit_paap(
            &users,
            1,
            &[100.0],
            &cat,
            BundleObjective::MinInconvenience,
            ServiceWindowPolicy::default(),
            PriceMode::Ungated,
            &default_misreport_grid(),
            1e-9,
        )
        .unwrap();
        assert!((report.truthful_utility - 9.0).abs() < 1e-9);
        assert!(report.violations.is_empty());
        for e in &report.evaluations {
            assert!((e.allocated - 1.0).abs() < 1e-9);
            assert!((e.utility - 9.0).abs() < 1e-9);
        }
    }
}
