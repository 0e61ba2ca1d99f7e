//! Offline optimal benchmarks over compact allocation columns.
//!
//! A [`CompactColumn`] stands for "serve user i's bid j at slot t": it
//! consumes `Q_ij` from that single slot and earns `b_ij`. A bundle witness
//! proves the bid is realizable; bundle geometry otherwise drops out of the
//! optimization (resources and price are bundle-independent). The offline
//! problem is then a multidimensional knapsack:
//!
//! ```text
//! max  sum b * x
//! s.t. sum_{columns at slot t} Q * x <= A_t   for each slot
//!      sum_{columns of user i}     x <= 1     for each user
//! ```
//!
//! [`solve_offline_lp`] solves the fractional relaxation and returns slot and
//! user duals; [`solve_offline_ip`] solves the binary program by depth-first
//! branch-and-bound on the LP relaxation. [`endogenous_price_repair`] restores
//! posted-price consistency (drop allocations whose bid price falls below the
//! posted price induced by the final load) as a monotone fixed point.

use serde::{Deserialize, Serialize};

use crate::bundle::{feasible_bundle, BundleObjective, BundleOutcome};
use crate::error::{Error, Result};
use crate::market::{Bundle, ModeCatalog, UserRequest};
use crate::pricing::PriceParams;
use crate::simplex::{solve_lp, Constraint, ConstraintOp, LpOutcome, StandardLp};

/// One candidate allocation: user `user_idx`'s bid served at `slot`,
/// consuming `resources` there and earning `price`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactColumn {
    /// Index of the user within the slice the columns were built from.
    pub user_idx: usize,
    pub user_id: usize,
    pub bid_id: usize,
    /// Service slot whose capacity the column consumes.
    pub slot: usize,
    /// Resource consumption `Q`.
    pub resources: f64,
    /// Bid price `b`.
    pub price: f64,
    /// A feasible bundle realizing the bid, attached for output.
    pub bundle: Bundle,
}

/// Which service slots a user's bids may occupy, relative to the requested
/// departure slot `O_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServiceWindowPolicy {
    /// Serve in `[O_i, O_i + booking_horizon]`; 0 means exactly at the
    /// departure slot.
    Booked { booking_horizon: usize },
    /// Serve at any slot `t <= O_i`, as the offline formulation literally
    /// indexes it. Kept for comparison runs.
    Literal,
}

impl Default for ServiceWindowPolicy {
    fn default() -> Self {
        Self::Booked { booking_horizon: 0 }
    }
}

/// Posted-price gate applied while generating columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriceMode {
    /// No gate: pure welfare maximization.
    Ungated,
    /// Drop bids priced below `Q * p` for the given unit price.
    Fixed(f64),
}

/// Result of an offline solve. `x` is aligned with the column list handed to
/// the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSolution {
    pub objective: f64,
    pub x: Vec<f64>,
    /// Capacity duals per slot (length = number of slots); zero for slots no
    /// column touches. Empty for the integer solver.
    pub slot_duals: Vec<f64>,
    /// User-row duals (length = number of users). Empty for the integer
    /// solver.
    pub user_duals: Vec<f64>,
    /// Whether optimality was proven (always true for the LP; false only if
    /// branch-and-bound hit its node limit).
    pub proven: bool,
    /// Nodes explored by branch-and-bound (0 for the LP).
    pub nodes: usize,
}

/// Builds the compact columns for a set of users: one column per (user, bid,
/// admissible service slot) whose bid survives the price gate and admits a
/// feasible bundle.
pub fn build_columns(
    users: &[&UserRequest],
    catalog: &ModeCatalog,
    objective: BundleObjective,
    policy: ServiceWindowPolicy,
    price_mode: PriceMode,
    horizon: usize,
) -> Result<Vec<CompactColumn>> {
    let gate = match price_mode {
        PriceMode::Ungated => None,
        PriceMode::Fixed(p) => Some(p),
    };
    let mut columns = Vec::new();
    for (user_idx, user) in users.iter().enumerate() {
        if horizon == 0 {
            break;
        }
        let slots: Vec<usize> = match policy {
            ServiceWindowPolicy::Booked { booking_horizon } => {
                if user.departure_slot >= horizon {
                    continue;
                }
                let last = (user.departure_slot + booking_horizon).min(horizon - 1);
                (user.departure_slot..=last).collect()
            }
            ServiceWindowPolicy::Literal => {
                let last = user.departure_slot.min(horizon - 1);
                (0..=last).collect()
            }
        };
        for bid in &user.bids {
            let resources = user.resources(bid)?;
            match feasible_bundle(user, bid, catalog, objective, gate)? {
                BundleOutcome::Feasible(bundle) => {
                    for &slot in &slots {
                        columns.push(CompactColumn {
                            user_idx,
                            user_id: user.user_id,
                            bid_id: bid.bid_id,
                            slot,
                            resources,
                            price: bid.price,
                            bundle: bundle.clone(),
                        });
                    }
                }
                BundleOutcome::PricedOut | BundleOutcome::Infeasible => {}
            }
        }
    }
    Ok(columns)
}

fn check_inputs(columns: &[CompactColumn], availability: &[f64], n_users: usize) -> Result<()> {
    for c in columns {
        if c.slot >= availability.len() {
            return Err(Error::Domain(format!(
                "column at slot {} outside availability of length {}",
                c.slot,
                availability.len()
            )));
        }
        if c.user_idx >= n_users {
            return Err(Error::Domain(format!(
                "column user index {} outside {n_users} users",
                c.user_idx
            )));
        }
        if !(c.resources.is_finite() && c.resources > 0.0) || !c.price.is_finite() {
            return Err(Error::Domain(format!(
                "column for user {} bid {} has resources {} and price {}",
                c.user_id, c.bid_id, c.resources, c.price
            )));
        }
    }
    for (t, &a) in availability.iter().enumerate() {
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::Domain(format!("availability {a} at slot {t}")));
        }
    }
    Ok(())
}

/// Row layout of the column LP: covered slots first, then users that own
/// columns.
struct RowMap {
    covered_slots: Vec<usize>,
    active_users: Vec<usize>,
}

fn build_lp(
    columns: &[CompactColumn],
    availability: &[f64],
    slot_load_offset: Option<&[f64]>,
    user_budget: Option<&[f64]>,
) -> (StandardLp, RowMap) {
    let mut covered_slots: Vec<usize> = columns.iter().map(|c| c.slot).collect();
    covered_slots.sort_unstable();
    covered_slots.dedup();
    let mut active_users: Vec<usize> = columns.iter().map(|c| c.user_idx).collect();
    active_users.sort_unstable();
    active_users.dedup();

    let n = columns.len();
    let mut constraints = Vec::with_capacity(covered_slots.len() + active_users.len());
    for &t in &covered_slots {
        let mut coeffs = vec![0.0; n];
        for (k, c) in columns.iter().enumerate() {
            if c.slot == t {
                coeffs[k] = c.resources;
            }
        }
        let offset = slot_load_offset.map_or(0.0, |o| o[t]);
        constraints.push(Constraint {
            coeffs,
            op: ConstraintOp::Le,
            rhs: (availability[t] - offset).max(0.0),
        });
    }
    for &u in &active_users {
        let mut coeffs = vec![0.0; n];
        for (k, c) in columns.iter().enumerate() {
            if c.user_idx == u {
                coeffs[k] = 1.0;
            }
        }
        constraints.push(Constraint {
            coeffs,
            op: ConstraintOp::Le,
            rhs: user_budget.map_or(1.0, |b| b[u]).max(0.0),
        });
    }
    let lp = StandardLp {
        objective: columns.iter().map(|c| c.price).collect(),
        constraints,
    };
    (
        lp,
        RowMap {
            covered_slots,
            active_users,
        },
    )
}

/// Solves the fractional offline problem and maps duals back to slots and
/// users.
pub fn solve_offline_lp(
    columns: &[CompactColumn],
    availability: &[f64],
    n_users: usize,
) -> Result<OfflineSolution> {
    check_inputs(columns, availability, n_users)?;
    if columns.is_empty() {
        return Ok(OfflineSolution {
            objective: 0.0,
            x: Vec::new(),
            slot_duals: vec![0.0; availability.len()],
            user_duals: vec![0.0; n_users],
            proven: true,
            nodes: 0,
        });
    }
    let (lp, rows) = build_lp(columns, availability, None, None);
    let solution = match solve_lp(&lp)? {
        LpOutcome::Optimal(s) => s,
        LpOutcome::Infeasible => {
            return Err(Error::Internal(
                "offline LP reported infeasible despite the zero solution".into(),
            ))
        }
        LpOutcome::Unbounded => {
            return Err(Error::Internal(
                "offline LP reported unbounded despite unit budgets".into(),
            ))
        }
    };
    let mut slot_duals = vec![0.0; availability.len()];
    for (r, &t) in rows.covered_slots.iter().enumerate() {
        slot_duals[t] = solution.duals[r];
    }
    let mut user_duals = vec![0.0; n_users];
    for (r, &u) in rows.active_users.iter().enumerate() {
        user_duals[u] = solution.duals[rows.covered_slots.len() + r];
    }
    Ok(OfflineSolution {
        objective: solution.objective,
        x: solution.x,
        slot_duals,
        user_duals,
        proven: true,
        nodes: 0,
    })
}

/// Minimal per-user utilities supporting the slot duals:
/// `u_i = max(0, max over the user's columns of b - Q * q_slot)`.
pub fn dual_utilities(
    columns: &[CompactColumn],
    slot_duals: &[f64],
    n_users: usize,
) -> Vec<f64> {
    let mut utilities = vec![0.0; n_users];
    for c in columns {
        let margin = c.price - c.resources * slot_duals[c.slot];
        if margin > utilities[c.user_idx] {
            utilities[c.user_idx] = margin;
        }
    }
    utilities
}

/// Asserts that the LP's user duals equal the minimal supported utilities
/// within `tol` (relative to the bid scale). A mismatch signals a solver bug.
pub fn check_dual_utilities(
    columns: &[CompactColumn],
    solution: &OfflineSolution,
    n_users: usize,
    tol: f64,
) -> Result<()> {
    let derived = dual_utilities(columns, &solution.slot_duals, n_users);
    let scale = columns
        .iter()
        .map(|c| c.price.abs())
        .fold(1.0f64, f64::max);
    for (i, (&a, &b)) in solution.user_duals.iter().zip(derived.iter()).enumerate() {
        if (a - b).abs() > tol * scale {
            return Err(Error::Internal(format!(
                "user {i} dual {a} disagrees with supported utility {b}"
            )));
        }
    }
    Ok(())
}

/// Default branch-and-bound node budget.
pub const DEFAULT_NODE_LIMIT: usize = 1_000_000;

/// Largest column count [`enumerate_offline_ip`] accepts.
pub const ENUMERATION_COLUMN_CAP: usize = 25;

/// Exhaustive reference solver for the binary offline problem: tries every
/// subset of columns (per-user at most one, per-slot load within
/// availability at `1e-9` slack) and returns the best total value. Exact by
/// construction and exponential in the column count — verification use only,
/// capped at [`ENUMERATION_COLUMN_CAP`] columns.
pub fn enumerate_offline_ip(
    columns: &[CompactColumn],
    availability: &[f64],
    n_users: usize,
) -> Result<f64> {
    check_inputs(columns, availability, n_users)?;
    if columns.len() > ENUMERATION_COLUMN_CAP {
        return Err(Error::Domain(format!(
            "enumeration over {} columns refused (cap {ENUMERATION_COLUMN_CAP})",
            columns.len()
        )));
    }
    let n = columns.len();
    let mut best = 0.0f64;
    for mask in 0u32..(1u32 << n) {
        let mut load = vec![0.0; availability.len()];
        let mut used = vec![0usize; n_users];
        let mut value = 0.0;
        let mut ok = true;
        for (k, c) in columns.iter().enumerate() {
            if mask & (1 << k) != 0 {
                load[c.slot] += c.resources;
                used[c.user_idx] += 1;
                value += c.price;
            }
        }
        for (t, &l) in load.iter().enumerate() {
            if l > availability[t] + 1e-9 {
                ok = false;
                break;
            }
        }
        if used.iter().any(|&u| u > 1) {
            ok = false;
        }
        if ok && value > best {
            best = value;
        }
    }
    Ok(best)
}

/// Solves the binary offline problem by depth-first branch-and-bound: LP
/// relaxation bound, branch on the most fractional column (ties toward larger
/// price, then lower index), one-branch first. Fixing a column to one fixes
/// the user's other columns to zero.
pub fn solve_offline_ip(
    columns: &[CompactColumn],
    availability: &[f64],
    n_users: usize,
    node_limit: usize,
) -> Result<OfflineSolution> {
    check_inputs(columns, availability, n_users)?;
    let n = columns.len();
    if n == 0 {
        return Ok(OfflineSolution {
            objective: 0.0,
            x: Vec::new(),
            slot_duals: Vec::new(),
            user_duals: Vec::new(),
            proven: true,
            nodes: 0,
        });
    }

    // -1 free, 0 fixed out, 1 fixed in.
    type Fixing = Vec<i8>;
    let mut best_value = 0.0f64;
    let mut best_x = vec![0.0f64; n];
    let mut nodes = 0usize;
    let mut proven = true;
    let mut stack: Vec<Fixing> = vec![vec![-1; n]];

    while let Some(fixing) = stack.pop() {
        if nodes >= node_limit {
            proven = false;
            break;
        }
        nodes += 1;

        // Load from fixed-in columns; prune infeasible fixings.
        let mut slot_load = vec![0.0; availability.len()];
        let mut user_used = vec![0usize; n_users];
        let mut fixed_value = 0.0;
        let mut infeasible = false;
        for (k, c) in columns.iter().enumerate() {
            if fixing[k] == 1 {
                slot_load[c.slot] += c.resources;
                user_used[c.user_idx] += 1;
                fixed_value += c.price;
            }
        }
        for (t, &load) in slot_load.iter().enumerate() {
            if load > availability[t] + 1e-9 {
                infeasible = true;
                break;
            }
        }
        if user_used.iter().any(|&u| u > 1) {
            infeasible = true;
        }
        if infeasible {
            continue;
        }

        let free: Vec<usize> = (0..n).filter(|&k| fixing[k] == -1).collect();
        let (bound, free_x) = if free.is_empty() {
            (fixed_value, Vec::new())
        } else {
            let free_cols: Vec<CompactColumn> =
                free.iter().map(|&k| columns[k].clone()).collect();
            let budgets: Vec<f64> = user_used.iter().map(|&u| 1.0 - u as f64).collect();
            let (lp, _) = build_lp(&free_cols, availability, Some(&slot_load), Some(&budgets));
            match solve_lp(&lp)? {
                LpOutcome::Optimal(s) => (fixed_value + s.objective, s.x),
                LpOutcome::Infeasible => continue,
                LpOutcome::Unbounded => {
                    return Err(Error::Internal(
                        "branch-and-bound node LP unbounded despite unit budgets".into(),
                    ))
                }
            }
        };

        if bound <= best_value + 1e-9 && nodes > 1 {
            continue;
        }

        // Integral within detection tolerance? Validate the rounding exactly
        // before accepting; a borderline vertex falls through to branching.
        let round_ok = free_x.iter().all(|&v| v.min(1.0 - v).abs() < 1e-6);
        if round_ok {
            let mut x = vec![0.0; n];
            let mut value = 0.0;
            let mut load = vec![0.0; availability.len()];
            let mut used = vec![0usize; n_users];
            for (k, c) in columns.iter().enumerate() {
                let chosen = match fixing[k] {
                    1 => true,
                    0 => false,
                    _ => {
                        let pos = free.iter().position(|&f| f == k).unwrap();
                        free_x[pos] >= 0.5
                    }
                };
                if chosen {
                    x[k] = 1.0;
                    value += c.price;
                    load[c.slot] += c.resources;
                    used[c.user_idx] += 1;
                }
            }
            let feasible = load
                .iter()
                .zip(availability.iter())
                .all(|(&l, &a)| l <= a + 1e-9)
                && used.iter().all(|&u| u <= 1);
            if feasible {
                if value > best_value {
                    best_value = value;
                    best_x = x;
                }
                continue;
            }
        }

        // Branch: most fractional free column, ties toward larger price then
        // lower index. If the LP came back integral but its rounding was
        // rejected, branch on a column the LP set to one.
        let mut pick: Option<(usize, f64)> = None;
        for (pos, &k) in free.iter().enumerate() {
            let v = free_x[pos];
            let frac_dist = (v - 0.5).abs();
            let candidate_better = match pick {
                None => true,
                Some((cur, cur_dist)) => {
                    frac_dist < cur_dist - 1e-12
                        || ((frac_dist - cur_dist).abs() <= 1e-12
                            && (columns[k].price > columns[cur].price + 1e-12
                                || ((columns[k].price - columns[cur].price).abs() <= 1e-12
                                    && k < cur)))
                }
            };
            if v > 1e-9 && candidate_better {
                pick = Some((k, frac_dist));
            }
        }
        let Some((branch_k, _)) = pick else {
            // Every free column is at zero: the LP bound equals the fixed
            // value, already handled by the incumbent update above.
            continue;
        };

        let mut zero_child = fixing.clone();
        zero_child[branch_k] = 0;
        let mut one_child = fixing;
        one_child[branch_k] = 1;
        for (k, c) in columns.iter().enumerate() {
            if k != branch_k && c.user_idx == columns[branch_k].user_idx && one_child[k] == -1 {
                one_child[k] = 0;
            }
        }
        stack.push(zero_child);
        stack.push(one_child);
    }

    Ok(OfflineSolution {
        objective: best_value,
        x: best_x,
        slot_duals: Vec::new(),
        user_duals: Vec::new(),
        proven,
        nodes,
    })
}

/// Outcome of the posted-price fixed-point repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    /// Repaired solution vector, aligned with the columns.
    pub x: Vec<f64>,
    /// Column indices removed, in removal order.
    pub removed: Vec<usize>,
    pub iterations: usize,
    /// False only if the iteration cap was hit with violations left.
    pub converged: bool,
}

/// Iteration cap for [`endogenous_price_repair`].
pub const REPAIR_ITERATION_CAP: usize = 100;

/// Restores posted-price consistency: repeatedly drops allocated columns
/// whose bid price is below `Q * p` at the unit price induced by the current
/// load (own contribution included), until no violation remains. Dropping
/// only lowers loads, so prices fall monotonically and the loop terminates.
pub fn endogenous_price_repair(
    columns: &[CompactColumn],
    x: &[f64],
    params: &PriceParams,
    baseline_sold: &[f64],
) -> Result<RepairOutcome> {
    if x.len() != columns.len() {
        return Err(Error::Domain(format!(
            "solution length {} does not match {} columns",
            x.len(),
            columns.len()
        )));
    }
    let mut x = x.to_vec();
    let mut removed = Vec::new();
    for iteration in 1..=REPAIR_ITERATION_CAP {
        let mut load = baseline_sold.to_vec();
        for (k, c) in columns.iter().enumerate() {
            load[c.slot] += c.resources * x[k];
        }
        let mut violators = Vec::new();
        for (k, c) in columns.iter().enumerate() {
            if x[k] <= 0.0 {
                continue;
            }
            let p = params.unit_price(load[c.slot].min(params.capacity))?;
            if c.price + 1e-9 < c.resources * p {
                violators.push(k);
            }
        }
        if violators.is_empty() {
            return Ok(RepairOutcome {
                x,
                removed,
                iterations: iteration,
                converged: true,
            });
        }
        for k in violators {
            x[k] = 0.0;
            removed.push(k);
        }
    }
    Ok(RepairOutcome {
        x,
        removed,
        iterations: REPAIR_ITERATION_CAP,
        converged: false,
    })
}
