//! Dense two-phase simplex solver with Bland's rule and dual extraction.
//!
//! Problems are stated as `maximize c·x` over `x >= 0` subject to rows
//! `a·x (<=|>=|=) rhs`. The solver is exact-arithmetic-free but pivots with
//! Bland's anti-cycling rule, so it terminates on degenerate inputs. Problem
//! sizes here are small (a handful of travel modes, or a few hundred columns
//! for the offline oracles), so each iteration recomputes the reduced-cost row
//! from the cost vector instead of dragging rounding error along.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction of one linear constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintOp {
    Le,
    Ge,
    Eq,
}

/// One constraint row `coeffs · x (op) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub op: ConstraintOp,
    pub rhs: f64,
}

/// A linear program `maximize objective · x, x >= 0`, subject to rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardLp {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

/// Optimal point of a solved linear program.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
    /// One dual value per constraint row, oriented against the row as given:
    /// `<=` rows price at `>= 0`, `>=` rows at `<= 0`, `=` rows are free. At
    /// the optimum `duals · rhs` equals the objective.
    pub duals: Vec<f64>,
}

/// Result of solving a linear program.
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;

#[derive(Clone, Copy, PartialEq)]
enum ColKind {
    Structural,
    Slack(usize),
    Surplus(usize),
    Artificial(usize),
}

struct Tableau {
    /// m rows of n_total coefficients plus a trailing rhs entry.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    kinds: Vec<ColKind>,
}

impl Tableau {
    fn n_total(&self) -> usize {
        self.kinds.len()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let factor = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= factor;
        }
        let pivot_row = self.rows[row].clone();
        for (i, r) in self.rows.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let mult = r[col];
            if mult != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= mult * pv;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Reduced costs `z_j - c_j` for the given cost vector, plus the current
    /// objective value. Recomputed from scratch for numerical stability.
    fn reduced_costs(&self, cost: &[f64]) -> (Vec<f64>, f64) {
        let n = self.n_total();
        let mut z = vec![0.0; n];
        let mut value = 0.0;
        for (i, r) in self.rows.iter().enumerate() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..n {
                    z[j] += cb * r[j];
                }
                value += cb * r[n];
            }
        }
        for j in 0..n {
            z[j] -= cost[j];
        }
        (z, value)
    }

    /// Runs simplex iterations for `cost`, entering only columns allowed by
    /// `enterable`. Returns false if the problem is unbounded in this phase.
    fn optimize(&mut self, cost: &[f64], enterable: &[bool]) -> Result<bool> {
        let m = self.rows.len();
        let n = self.n_total();
        // Bland's rule terminates; the cap is a defensive guard only.
        let max_iters = 50_000usize.max(200 * (m + 1) * (n + 1));
        for _ in 0..max_iters {
            let (z, _) = self.reduced_costs(cost);
            let entering = (0..n).find(|&j| enterable[j] && z[j] < -PIVOT_TOL);
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.rows[i][col];
                if a > PIVOT_TOL {
                    let ratio = self.rows[i][n] / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - PIVOT_TOL
                                || (ratio < lr + PIVOT_TOL && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, col),
                None => return Ok(false),
            }
        }
        Err(Error::Internal(
            "simplex iteration cap exceeded despite Bland's rule".into(),
        ))
    }
}

/// Solves the linear program, returning the optimum with duals, or the
/// infeasible / unbounded verdict.
pub fn solve_lp(lp: &StandardLp) -> Result<LpOutcome> {
    let n = lp.objective.len();
    if n == 0 {
        return Err(Error::Lp("objective has no variables".into()));
    }
    if !lp.objective.iter().all(|v| v.is_finite()) {
        return Err(Error::Lp("objective has non-finite coefficients".into()));
    }
    for (i, c) in lp.constraints.iter().enumerate() {
        if c.coeffs.len() != n {
            return Err(Error::Lp(format!(
                "constraint {i} has {} coefficients, expected {n}",
                c.coeffs.len()
            )));
        }
        if !(c.coeffs.iter().all(|v| v.is_finite()) && c.rhs.is_finite()) {
            return Err(Error::Lp(format!("constraint {i} has non-finite data")));
        }
    }

    let m = lp.constraints.len();
    // Normalize rows to non-negative rhs, remembering flips for dual signs.
    let mut flipped = vec![false; m];
    let mut rows_in: Vec<(Vec<f64>, ConstraintOp, f64)> = Vec::with_capacity(m);
    for (i, c) in lp.constraints.iter().enumerate() {
        if c.rhs < 0.0 {
            flipped[i] = true;
            let op = match c.op {
                ConstraintOp::Le => ConstraintOp::Ge,
                ConstraintOp::Ge => ConstraintOp::Le,
                ConstraintOp::Eq => ConstraintOp::Eq,
            };
            rows_in.push((c.coeffs.iter().map(|v| -v).collect(), op, -c.rhs));
        } else {
            rows_in.push((c.coeffs.clone(), c.op, c.rhs));
        }
    }

    // Column layout: structural, then per-row auxiliaries.
    let mut kinds: Vec<ColKind> = vec![ColKind::Structural; n];
    let mut aux_col_of_row: Vec<usize> = vec![usize::MAX; m];
    for (i, (_, op, _)) in rows_in.iter().enumerate() {
        match op {
            ConstraintOp::Le => {
                aux_col_of_row[i] = kinds.len();
                kinds.push(ColKind::Slack(i));
            }
            ConstraintOp::Ge => {
                aux_col_of_row[i] = kinds.len();
                kinds.push(ColKind::Surplus(i));
            }
            ConstraintOp::Eq => {}
        }
    }
    let mut art_col_of_row: Vec<Option<usize>> = vec![None; m];
    for (i, (_, op, _)) in rows_in.iter().enumerate() {
        if matches!(op, ConstraintOp::Ge | ConstraintOp::Eq) {
            art_col_of_row[i] = Some(kinds.len());
            kinds.push(ColKind::Artificial(i));
        }
    }
    let n_total = kinds.len();

    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    for (i, (coeffs, op, rhs)) in rows_in.iter().enumerate() {
        let mut row = vec![0.0; n_total + 1];
        row[..n].copy_from_slice(coeffs);
        match op {
            ConstraintOp::Le => {
                row[aux_col_of_row[i]] = 1.0;
                basis.push(aux_col_of_row[i]);
            }
            ConstraintOp::Ge => {
                row[aux_col_of_row[i]] = -1.0;
                let a = art_col_of_row[i].unwrap();
                row[a] = 1.0;
                basis.push(a);
            }
            ConstraintOp::Eq => {
                let a = art_col_of_row[i].unwrap();
                row[a] = 1.0;
                basis.push(a);
            }
        }
        row[n_total] = *rhs;
        rows.push(row);
    }

    let mut t = Tableau {
        rows,
        basis,
        kinds: kinds.clone(),
    };

    let has_artificials = art_col_of_row.iter().any(Option::is_some);
    if has_artificials {
        let cost1: Vec<f64> = kinds
            .iter()
            .map(|k| match k {
                ColKind::Artificial(_) => -1.0,
                _ => 0.0,
            })
            .collect();
        let enterable = vec![true; n_total];
        if !t.optimize(&cost1, &enterable)? {
            return Err(Error::Internal(
                "phase-1 objective is bounded but reported unbounded".into(),
            ));
        }
        let (_, value) = t.reduced_costs(&cost1);
        if value < -FEAS_TOL {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive leftover artificials out of the basis where possible.
        for i in 0..m {
            if matches!(t.kinds[t.basis[i]], ColKind::Artificial(_)) {
                let col = (0..n_total).find(|&j| {
                    !matches!(t.kinds[j], ColKind::Artificial(_)) && t.rows[i][j].abs() > PIVOT_TOL
                });
                if let Some(j) = col {
                    t.pivot(i, j);
                }
                // A fully zero row is redundant; its artificial stays basic at
                // zero and is barred from entering in phase 2.
            }
        }
    }

    let mut cost2 = vec![0.0; n_total];
    cost2[..n].copy_from_slice(&lp.objective);
    let enterable: Vec<bool> = kinds
        .iter()
        .map(|k| !matches!(k, ColKind::Artificial(_)))
        .collect();
    if !t.optimize(&cost2, &enterable)? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut x = vec![0.0; n];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rows[i][n_total];
        }
    }
    for v in x.iter_mut() {
        if v.abs() < PIVOT_TOL {
            *v = 0.0;
        }
    }
    let objective: f64 = lp
        .objective
        .iter()
        .zip(&x)
        .map(|(c, xi)| c * xi)
        .sum();

    // Duals read off the reduced-cost row over each row's auxiliary column
    // (for equality rows, the artificial fills that role).
    let (z, _) = t.reduced_costs(&cost2);
    let mut duals = vec![0.0; m];
    for i in 0..m {
        let y = match rows_in[i].1 {
            ConstraintOp::Le => z[aux_col_of_row[i]],
            ConstraintOp::Ge => -z[aux_col_of_row[i]],
            ConstraintOp::Eq => z[art_col_of_row[i].unwrap()],
        };
        duals[i] = if flipped[i] { -y } else { y };
        if duals[i].abs() < PIVOT_TOL {
            duals[i] = 0.0;
        }
    }

    Ok(LpOutcome::Optimal(LpSolution {
        objective,
        x,
        duals,
    }))
}
