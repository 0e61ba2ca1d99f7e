//! Self-check suites behind `maas verify`.
//!
//! Each suite re-derives a guarantee of the engine on deterministic,
//! seed-driven inputs and reports one pass/fail line:
//!
//! - `identity`: the per-slot primal/dual increment identity;
//! - `feasibility`: no overbooking, and end-of-slot dual feasibility;
//! - `ic`: misreport audits under both mechanisms find no profitable
//!   deviation;
//! - `oracle`: branch-and-bound matches exhaustive enumeration and the LP
//!   satisfies strong duality;
//! - `pricing`: the posted-price curves stay inside their bands and are
//!   monotone.

use serde::Serialize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maas_core::analysis::{
    default_misreport_grid, dual_feasibility_check, ic_audit_paap, ic_audit_payg,
    primal_dual_identity_check,
};
use maas_core::bundle::BundleObjective;
use maas_core::demand::{DemandConfig, PackageLengthMode};
use maas_core::market::{BidItem, Bundle, CapacityLedger, ModeCatalog, UserRequest};
use maas_core::offline::{
    check_dual_utilities, enumerate_offline_ip, solve_offline_ip, solve_offline_lp,
    CompactColumn, PriceMode, ServiceWindowPolicy, DEFAULT_NODE_LIMIT,
};
use maas_core::online::{Mechanism, PaymentRule, StepConfig};
use maas_core::pricing::{PriceKind, PriceParams};
use maas_core::rolling::{HorizonConfig, SolverKind};
use maas_core::scenario::Scenario;

use crate::commands::{collect_outcomes, emit, write_json};
use crate::{CliSuite, VerifyArgs};

#[derive(Serialize)]
pub(crate) struct SuiteReport {
    pub suite: String,
    pub trials: usize,
    pub checks: usize,
    pub passed: bool,
    pub detail: String,
}

pub(crate) fn verify(args: VerifyArgs) -> anyhow::Result<u8> {
    let suites = match args.suite {
        CliSuite::All => vec![
            CliSuite::Identity,
            CliSuite::Feasibility,
            CliSuite::Ic,
            CliSuite::Oracle,
            CliSuite::Pricing,
        ],
        one => vec![one],
    };
    let trials = args.trials.max(1);
    let mut reports = Vec::new();
    for suite in suites {
        let report = match suite {
            CliSuite::Identity => identity_suite(trials, args.seed)?,
            CliSuite::Feasibility => feasibility_suite(trials, args.seed)?,
            CliSuite::Ic => ic_suite(trials)?,
            CliSuite::Oracle => oracle_suite(trials, args.seed)?,
            CliSuite::Pricing => pricing_suite()?,
            CliSuite::All => unreachable!("expanded above"),
        };
        reports.push(report);
    }
    let all_passed = reports.iter().all(|r| r.passed);
    if let Some(path) = &args.out {
        write_json(&reports, path)?;
    }
    for report in &reports {
        emit(&format!(
            "{} {:<12} {:>6} checks  {}",
            if report.passed { "PASS" } else { "FAIL" },
            report.suite,
            report.checks,
            report.detail
        ));
    }
    Ok(if all_passed { 0 } else { 1 })
}

/// A small randomized scenario for the run-level suites: 30 slots, default
/// demand shape, capacity tightened so prices move.
fn small_scenario(mechanism: Mechanism, seed: u64) -> anyhow::Result<Scenario> {
    let config = match mechanism {
        Mechanism::Payg => {
            let mut c = DemandConfig::payg_default(30, seed);
            c.capacity = 25.0;
            c
        }
        Mechanism::Paap => {
            let mut c = DemandConfig::paap_default(30, seed);
            c.capacity = 600.0;
            c.distance_range = (1.0, 80.0);
            c.package_length = PackageLengthMode::Uniform { lo: 2, hi: 6 };
            c
        }
    };
    let price = PriceParams::new(
        PriceKind::Exponential,
        config.capacity,
        config.b_min,
        config.b_max,
    )?;
    Ok(Scenario::from_demand(&config, price)?)
}

fn alternating_mechanism(index: usize) -> Mechanism {
    if index % 2 == 0 {
        Mechanism::Payg
    } else {
        Mechanism::Paap
    }
}

fn identity_suite(trials: usize, seed: u64) -> anyhow::Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;
    for i in 0..trials {
        let mechanism = alternating_mechanism(i);
        let scenario = small_scenario(mechanism, seed.wrapping_add(i as u64))?;
        let config = HorizonConfig::online(mechanism, SolverKind::OnlineAlgorithm);
        let (trace, _) = scenario.run(&config)?;
        let outcomes = collect_outcomes(&trace);
        checks += outcomes.len();
        worst = worst.max(primal_dual_identity_check(&outcomes));
    }
    let passed = worst <= 1e-9;
    Ok(SuiteReport {
        suite: "identity".into(),
        trials,
        checks,
        passed,
        detail: format!("max |dP - (1 - 1/alpha) dD| = {worst:.3e}"),
    })
}

fn feasibility_suite(trials: usize, seed: u64) -> anyhow::Result<SuiteReport> {
    let mut worst_capacity: f64 = f64::NEG_INFINITY;
    let mut worst_dual: f64 = f64::NEG_INFINITY;
    let mut thresholds_ok = true;
    let mut checks = 0usize;
    for i in 0..trials {
        let mechanism = alternating_mechanism(i);
        let scenario = small_scenario(mechanism, seed.wrapping_add(i as u64))?;
        let config = HorizonConfig::online(mechanism, SolverKind::OnlineAlgorithm);
        let (trace, _) = scenario.run(&config)?;
        for avail in &trace.final_availability {
            worst_capacity = worst_capacity.max(-avail);
            checks += 1;
        }
        for outcome in collect_outcomes(&trace) {
            let report = dual_feasibility_check(&outcome);
            worst_dual = worst_dual.max(report.worst_violation);
            thresholds_ok &= report.threshold_nonnegative;
            checks += report.bids_checked + 1;
        }
    }
    let passed = worst_capacity <= 1e-9 && worst_dual <= 1e-9 && thresholds_ok;
    Ok(SuiteReport {
        suite: "feasibility".into(),
        trials,
        checks,
        passed,
        detail: format!(
            "max overbooking = {worst_capacity:.3e}, max dual violation = {worst_dual:.3e}, thresholds nonnegative: {thresholds_ok}"
        ),
    })
}

fn audit_user(user_id: usize, distance: f64, bids: Vec<(f64, f64)>) -> UserRequest {
    UserRequest {
        user_id,
        distance,
        departure_slot: 0,
        placement_slot: None,
        delay_budget: 5.0,
        inconvenience_tolerance: 100.0,
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

/// Misreport audits with no profitable deviation expected.
///
/// Pay-as-you-go runs in the displacement-free posted-price regime: a half
/// loaded 2e6-capacity slot pins the linear unit price at 8, a 10 km / 25 min
/// bid consumes Q = 4, so serving costs 32 regardless of the report. Subject
/// values sweep [8, 64], crossing the price from below to above.
///
/// Pay-as-a-package audits two families: slack capacity (duals vanish, every
/// report is fully served) and a tight single slot with a posted gate (the
/// only effect a misreport can have is losing the gated column).
fn ic_suite(trials: usize) -> anyhow::Result<SuiteReport> {
    let catalog = ModeCatalog::standard();
    let grid = default_misreport_grid();
    let mut violations = 0usize;
    let mut mismatches = 0usize;
    let mut worst_gain: f64 = f64::NEG_INFINITY;
    let mut checks = 0usize;

    let mut ledger = CapacityLedger::new(2e6, 40)?;
    ledger.reserve((0, 30), 1e6)?;
    let cfg = StepConfig {
        mechanism: Mechanism::Payg,
        catalog: &catalog,
        price: PriceParams::new(PriceKind::Linear, 2e6, 2.0, 12.0)?,
        objective: BundleObjective::MinInconvenience,
        payment_rule: PaymentRule::Posted,
    };
    let bystander = audit_user(9, 10.0, vec![(25.0, 200.0)]);
    for k in 0..trials {
        let value = 8.0 + 56.0 * k as f64 / trials.max(2).saturating_sub(1) as f64;
        let subject = audit_user(1, 10.0, vec![(25.0, value)]);
        let users = vec![subject, bystander.clone()];
        let report = ic_audit_payg(&ledger, 0, &users, 1, &cfg, &grid, 1e-9)?;
        violations += report.violations.len();
        mismatches += report.case_mismatches.len();
        worst_gain = worst_gain.max(report.worst_gain);
        checks += report.evaluations.len();
    }

    for k in 0..trials {
        let u1 = audit_user(1, 10.0, vec![(20.0, 9.0 + 0.25 * k as f64)]);
        let u2 = audit_user(2, 10.0, vec![(25.0, 7.0 + 0.1 * k as f64)]);
        let users = vec![u1, u2];
        for subject in [1, 2] {
            let report = ic_audit_paap(
                &users,
                subject,
                &[100.0],
                &catalog,
                BundleObjective::MinInconvenience,
                ServiceWindowPolicy::default(),
                PriceMode::Ungated,
                &grid,
                1e-9,
            )?;
            violations += report.violations.len();
            worst_gain = worst_gain.max(report.worst_gain);
            checks += report.evaluations.len();
        }
    }

    let gated_users = vec![
        audit_user(1, 10.0, vec![(100.0 / 6.0, 10.0)]),
        audit_user(2, 10.0, vec![(20.0, 9.0)]),
    ];
    let report = ic_audit_paap(
        &gated_users,
        2,
        &[10.0],
        &catalog,
        BundleObjective::MinInconvenience,
        ServiceWindowPolicy::default(),
        PriceMode::Fixed(5.0 / 3.0),
        &grid,
        1e-9,
    )?;
    violations += report.violations.len();
    worst_gain = worst_gain.max(report.worst_gain);
    checks += report.evaluations.len();

    let passed = violations == 0 && mismatches == 0;
    Ok(SuiteReport {
        suite: "ic".into(),
        trials,
        checks,
        passed,
        detail: format!(
            "profitable deviations: {violations}, case mismatches: {mismatches}, worst gain = {worst_gain:.3e}"
        ),
    })
}

fn random_column(rng: &mut ChaCha8Rng, n_users: usize, n_slots: usize, bid_id: usize) -> CompactColumn {
    let user_idx = rng.gen_range(0..n_users);
    let resources = rng.gen_range(0.5..6.0);
    CompactColumn {
        user_idx,
        user_id: user_idx + 1,
        bid_id,
        slot: rng.gen_range(0..n_slots),
        resources,
        price: rng.gen_range(0.5..10.0),
        bundle: Bundle {
            times: vec![resources],
        },
    }
}

/// Cross-checks the exact solvers on random, enumerable instances: the
/// branch-and-bound optimum equals exhaustive subset enumeration, the LP
/// relaxation bounds it from above with complementary utilities, and the LP
/// satisfies strong duality.
fn oracle_suite(trials: usize, seed: u64) -> anyhow::Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_ip_gap: f64 = 0.0;
    let mut worst_duality_gap: f64 = 0.0;
    let mut all_proven = true;
    let mut checks = 0usize;
    for _ in 0..trials {
        let n_users = rng.gen_range(1..=4usize);
        let n_slots = rng.gen_range(1..=3usize);
        let n_columns = rng.gen_range(1..=10usize);
        let columns: Vec<CompactColumn> = (0..n_columns)
            .map(|k| random_column(&mut rng, n_users, n_slots, k))
            .collect();
        let availability: Vec<f64> = (0..n_slots).map(|_| rng.gen_range(2.0..9.0)).collect();

        let brute = enumerate_offline_ip(&columns, &availability, n_users)?;
        let ip = solve_offline_ip(&columns, &availability, n_users, DEFAULT_NODE_LIMIT)?;
        all_proven &= ip.proven;
        worst_ip_gap = worst_ip_gap.max((ip.objective - brute).abs() / brute.max(1.0));

        let lp = solve_offline_lp(&columns, &availability, n_users)?;
        if lp.objective < ip.objective - 1e-7 * ip.objective.max(1.0) {
            worst_ip_gap = worst_ip_gap.max(ip.objective - lp.objective);
        }
        check_dual_utilities(&columns, &lp, n_users, 1e-7)?;
        let dual_objective: f64 = availability
            .iter()
            .zip(&lp.slot_duals)
            .map(|(a, q)| a * q)
            .sum::<f64>()
            + lp.user_duals.iter().sum::<f64>();
        worst_duality_gap = worst_duality_gap
            .max((lp.objective - dual_objective).abs() / lp.objective.abs().max(1.0));
        checks += 4;
    }
    let passed = worst_ip_gap <= 1e-9 && worst_duality_gap <= 1e-7 && all_proven;
    Ok(SuiteReport {
        suite: "oracle".into(),
        trials,
        checks,
        passed,
        detail: format!(
            "max enumeration gap = {worst_ip_gap:.3e}, max duality gap = {worst_duality_gap:.3e}, all proven: {all_proven}"
        ),
    })
}

/// Grid checks on the posted-price curves: start at the floor, never
/// decrease, and stay inside the band (`b_min + b_max` for the linear and
/// exponential curves; the quadratic tops out one unit higher by
/// construction).
fn pricing_suite() -> anyhow::Result<SuiteReport> {
    const GRID: usize = 1000;
    let capacity = 100.0;
    let b_min = 2.0;
    let b_max = 12.0;
    let mut checks = 0usize;
    let mut failures: Vec<String> = Vec::new();

    let mut curves: Vec<(String, PriceParams, f64)> = vec![
        (
            "linear".into(),
            PriceParams::new(PriceKind::Linear, capacity, b_min, b_max)?,
            b_min + b_max,
        ),
        (
            "quadratic".into(),
            PriceParams::new(PriceKind::Quadratic, capacity, b_min, b_max)?,
            b_min + b_max + 1.0,
        ),
    ];
    for ratio in [0.05, 0.5, 1.0, 3.0] {
        let alpha = (1.0_f64 + ratio).powf(1.0 / ratio);
        curves.push((
            format!("exponential(R={ratio})"),
            PriceParams::new(PriceKind::Exponential, capacity, b_min, b_max)?.with_alpha(alpha),
            b_min + b_max,
        ));
    }

    for (name, params, cap) in &curves {
        let mut previous = f64::NEG_INFINITY;
        for i in 0..GRID {
            let z = capacity * i as f64 / (GRID - 1) as f64;
            let price = params.unit_price(z)?;
            if i == 0 && (price - b_min).abs() > 1e-9 {
                failures.push(format!("{name}: p(0) = {price}, floor is {b_min}"));
            }
            if price < previous - 1e-12 {
                failures.push(format!("{name}: decreases at z = {z}"));
            }
            if price < b_min - 1e-9 || price > cap + 1e-9 {
                failures.push(format!("{name}: p({z}) = {price} outside [{b_min}, {cap}]"));
            }
            previous = price;
            checks += 1;
        }
    }

    let passed = failures.is_empty();
    let detail = if passed {
        format!("{} curves monotone and inside their bands", curves.len())
    } else {
        failures.join("; ")
    };
    Ok(SuiteReport {
        suite: "pricing".into(),
        trials: curves.len(),
        checks,
        passed,
        detail,
    })
}
