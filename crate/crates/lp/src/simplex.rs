//! Two-phase bounded-variable primal simplex on a dense tableau.
//!
//! Each row `a.x <rel> b` becomes `a.x + s = b` where the slack `s` lives in
//! `[0, inf)` for `<=` rows and `(-inf, 0]` for `>=` rows; equality rows get
//! no slack. Rows whose slack cannot start basic at a feasible value receive
//! an artificial variable, and phase one drives those to zero.

use crate::model::{LinearProgram, LpError, LpSolution, Relation, Status};
use crate::{FEASIBILITY_TOL, OPTIMALITY_TOL};

const PIVOT_TOL: f64 = 1e-11;
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Original constraint matrix including slack and artificial columns.
    orig: Vec<f64>,
    rhs: Vec<f64>,
    /// `B^-1 A`, row-major.
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    state: Vec<VarState>,
    reduced: Vec<f64>,
    first_artificial: usize,
}

enum Step {
    Optimal,
    Moved,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars;
        let m = lp.constraints.len();
        let num_slack = lp
            .constraints
            .iter()
            .filter(|c| c.relation != Relation::Eq)
            .count();

        // structural columns start at their lower bound
        let x_n: Vec<f64> = lp.var_bounds.iter().map(|&(lo, _)| lo).collect();

        let mut slack_of_row = vec![None; m];
        let mut next = n;
        for (i, row) in lp.constraints.iter().enumerate() {
            if row.relation != Relation::Eq {
                slack_of_row[i] = Some(next);
                next += 1;
            }
        }
        debug_assert_eq!(next, n + num_slack);

        let residual: Vec<f64> = lp
            .constraints
            .iter()
            .map(|row| row.rhs - row.activity(&x_n))
            .collect();

        // which rows need an artificial
        let needs_art: Vec<bool> = lp
            .constraints
            .iter()
            .zip(&residual)
            .map(|(row, &r)| match row.relation {
                Relation::Eq => true,
                Relation::Le => r < 0.0,
                Relation::Ge => r > 0.0,
            })
            .collect();
        let num_art = needs_art.iter().filter(|&&b| b).count();
        let cols = n + num_slack + num_art;

        let mut orig = vec![0.0; m * cols];
        let mut lower = Vec::with_capacity(cols);
        let mut upper = Vec::with_capacity(cols);
        let mut state = Vec::with_capacity(cols);
        for &(lo, hi) in &lp.var_bounds {
            lower.push(lo);
            upper.push(hi);
            state.push(VarState::AtLower);
        }
        for row in &lp.constraints {
            match row.relation {
                Relation::Le => {
                    lower.push(0.0);
                    upper.push(f64::INFINITY);
                    state.push(VarState::AtLower);
                }
                Relation::Ge => {
                    lower.push(f64::NEG_INFINITY);
                    upper.push(0.0);
                    state.push(VarState::AtUpper);
                }
                Relation::Eq => {}
            }
        }

        let mut basis = vec![0; m];
        let mut beta = vec![0.0; m];
        let mut art = n + num_slack;
        for (i, row) in lp.constraints.iter().enumerate() {
            let base = i * cols;
            for &(j, a) in &row.coeffs {
                orig[base + j] += a;
            }
            if let Some(s) = slack_of_row[i] {
                orig[base + s] = 1.0;
            }
            if needs_art[i] {
                let sign = if residual[i] >= 0.0 { 1.0 } else { -1.0 };
                orig[base + art] = sign;
                lower.push(0.0);
                upper.push(f64::INFINITY);
                state.push(VarState::Basic(i));
                basis[i] = art;
                beta[i] = residual[i].abs();
                art += 1;
            } else {
                let s = slack_of_row[i].expect("inequality row has a slack");
                state[s] = VarState::Basic(i);
                basis[i] = s;
                beta[i] = residual[i];
            }
        }

        // B is diagonal with entries +-1, so B^-1 A is a row sign flip.
        let mut t = orig.clone();
        for i in 0..m {
            let pivot = orig[i * cols + basis[i]];
            if pivot < 0.0 {
                for v in &mut t[i * cols..(i + 1) * cols] {
                    *v = -*v;
                }
            }
        }

        Tableau {
            rows: m,
            cols,
            orig,
            rhs: lp.constraints.iter().map(|c| c.rhs).collect(),
            t,
            beta,
            basis,
            lower,
            upper,
            state,
            reduced: vec![0.0; cols],
            first_artificial: n + num_slack,
        }
    }

    fn set_costs(&mut self, costs: &[f64]) {
        for j in 0..self.cols {
            let mut d = costs[j];
            for i in 0..self.rows {
                let a = self.t[i * self.cols + j];
                if a != 0.0 {
                    d -= costs[self.basis[i]] * a;
                }
            }
            self.reduced[j] = d;
        }
        for i in 0..self.rows {
            self.reduced[self.basis[i]] = 0.0;
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::AtLower => self.lower[j],
            VarState::AtUpper => self.upper[j],
            VarState::Basic(r) => self.beta[r],
        }
    }

    /// One Bland iteration: lowest-index improving column enters, ties in the
    /// ratio test go to the lowest variable index.
    fn iterate(&mut self) -> Result<Step, LpError> {
        let mut entering = None;
        for j in 0..self.cols {
            let d = self.reduced[j];
            match self.state[j] {
                VarState::AtLower if d < -OPTIMALITY_TOL && self.upper[j] > self.lower[j] => {
                    entering = Some((j, 1.0));
                    break;
                }
                VarState::AtUpper if d > OPTIMALITY_TOL && self.upper[j] > self.lower[j] => {
                    entering = Some((j, -1.0));
                    break;
                }
                _ => {}
            }
        }
        let Some((q, dir)) = entering else {
            return Ok(Step::Optimal);
        };

        // `None` row means a bound flip of the entering variable.
        let mut best_theta = self.upper[q] - self.lower[q];
        let mut best_row: Option<usize> = None;
        let mut best_index = q;
        for i in 0..self.rows {
            let alpha = dir * self.t[i * self.cols + q];
            if alpha.abs() <= PIVOT_TOL {
                continue;
            }
            let b = self.basis[i];
            let ratio = if alpha > 0.0 {
                if self.lower[b].is_finite() {
                    (self.beta[i] - self.lower[b]) / alpha
                } else {
                    continue;
                }
            } else if self.upper[b].is_finite() {
                (self.upper[b] - self.beta[i]) / -alpha
            } else {
                continue;
            };
            let ratio = ratio.max(0.0);
            let better =
                ratio < best_theta - TIE_TOL || (ratio <= best_theta + TIE_TOL && b < best_index);
            if better {
                best_theta = ratio;
                best_row = Some(i);
                best_index = b;
            }
        }
        if !best_theta.is_finite() {
            return Err(LpError::Unbounded);
        }

        let theta = best_theta;
        let entering_value = self.nonbasic_value(q) + dir * theta;
        if theta != 0.0 {
            for i in 0..self.rows {
                let a = self.t[i * self.cols + q];
                if a != 0.0 {
                    self.beta[i] -= dir * theta * a;
                }
            }
        }

        let Some(r) = best_row else {
            self.state[q] = match self.state[q] {
                VarState::AtLower => VarState::AtUpper,
                _ => VarState::AtLower,
            };
            return Ok(Step::Moved);
        };

        let leaving = self.basis[r];
        let alpha = dir * self.t[r * self.cols + q];
        self.state[leaving] = if alpha > 0.0 {
            VarState::AtLower
        } else {
            VarState::AtUpper
        };
        self.pivot(r, q);
        self.beta[r] = entering_value;
        self.basis[r] = q;
        self.state[q] = VarState::Basic(r);
        Ok(Step::Moved)
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let cols = self.cols;
        let p = self.t[r * cols + q];
        for v in &mut self.t[r * cols..(r + 1) * cols] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * cols);
        let (pivot_row, after) = rest.split_at_mut(cols);
        for row in before
            .chunks_exact_mut(cols)
            .chain(after.chunks_exact_mut(cols))
        {
            let f = row[q];
            if f != 0.0 {
                for (v, &pr) in row.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * pr;
                }
                row[q] = 0.0;
            }
        }
        let f = self.reduced[q];
        if f != 0.0 {
            for (d, &pr) in self.reduced.iter_mut().zip(pivot_row.iter()) {
                *d -= f * pr;
            }
            self.reduced[q] = 0.0;
        }
    }

    fn run(&mut self, limit: usize) -> Result<(), LpError> {
        for _ in 0..limit {
            if let Step::Optimal = self.iterate()? {
                return Ok(());
            }
        }
        Err(LpError::IterationLimit(limit))
    }

    /// Recomputes basic values from the original matrix to shed the
    /// round-off accumulated by repeated pivoting.
    fn refine(&mut self) {
        let m = self.rows;
        if m == 0 {
            return;
        }
        let mut rhs = self.rhs.clone();
        for j in 0..self.cols {
            if matches!(self.state[j], VarState::Basic(_)) {
                continue;
            }
            let v = self.nonbasic_value(j);
            if v != 0.0 {
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r -= self.orig[i * self.cols + j] * v;
                }
            }
        }
        let mut b = vec![0.0; m * m];
        for i in 0..m {
            for (k, &col) in self.basis.iter().enumerate() {
                b[i * m + k] = self.orig[i * self.cols + col];
            }
        }
        if let Some(x) = solve_dense(&mut b, &mut rhs, m) {
            self.beta = x;
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let (piv, max) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if max < 1e-12 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s -= a[r * n + k] * x[k];
        }
        x[r] = s / a[r * n + r];
    }
    Some(x)
}

/// Solves `lp` to optimality or proves it infeasible.
///
/// The result is a deterministic function of the input. Unboundedness cannot
/// arise for valid programs since every structural variable has finite
/// bounds, but is still reported as [`LpError::Unbounded`].
pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let mut tab = Tableau::build(lp);
    let limit = 20_000 + 50 * (tab.rows + tab.cols);

    let scale = 1.0
        + lp.constraints
            .iter()
            .map(|c| c.rhs.abs())
            .fold(0.0, f64::max);
    if tab.first_artificial < tab.cols {
        let phase_one: Vec<f64> = (0..tab.cols)
            .map(|j| if j >= tab.first_artificial { 1.0 } else { 0.0 })
            .collect();
        tab.set_costs(&phase_one);
        tab.run(limit)?;
        let infeasibility: f64 = (tab.first_artificial..tab.cols)
            .map(|j| tab.nonbasic_value(j))
            .sum();
        if infeasibility > FEASIBILITY_TOL * scale {
            return Ok(LpSolution::infeasible());
        }
        // pin artificials at zero for phase two
        for j in tab.first_artificial..tab.cols {
            tab.upper[j] = 0.0;
            if let VarState::AtUpper = tab.state[j] {
                tab.state[j] = VarState::AtLower;
            }
        }
    }

    let mut costs = vec![0.0; tab.cols];
    costs[..lp.num_vars].copy_from_slice(&lp.objective);
    tab.set_costs(&costs);
    tab.run(limit)?;
    tab.refine();

    let values: Vec<f64> = (0..lp.num_vars)
        .map(|j| {
            let v = tab.nonbasic_value(j);
            let (lo, hi) = lp.var_bounds[j];
            // snap round-off back onto the box
            if v < lo && v > lo - FEASIBILITY_TOL {
                lo
            } else if v > hi && v < hi + FEASIBILITY_TOL {
                hi
            } else {
                v
            }
        })
        .collect();
    let objective_value = lp.evaluate(&values);
    Ok(LpSolution {
        status: Status::Optimal,
        values,
        objective_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_attained_minimum() {
        let mut lp = LinearProgram::new();
        lp.add_var(2.0, 5.0, 1.0);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert_eq!(sol.values, vec![2.0]);
        assert_eq!(sol.objective_value, 2.0);
    }

    #[test]
    fn negative_cost_goes_to_upper_bound() {
        let mut lp = LinearProgram::new();
        lp.add_var(-1.0, 4.0, -3.0);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.values, vec![4.0]);
        assert_eq!(sol.objective_value, -12.0);
    }

    #[test]
    fn contradictory_row_is_infeasible() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, 1.0, 0.0);
        lp.add_constraint(vec![(x, 1.0)], Relation::Ge, 2.0);
        assert_eq!(solve(&lp).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn empty_equality_row() {
        let mut lp = LinearProgram::new();
        lp.add_var(0.0, 1.0, 1.0);
        lp.add_constraint(vec![], Relation::Eq, 1.0);
        assert_eq!(solve(&lp).unwrap().status, Status::Infeasible);

        let mut lp = LinearProgram::new();
        lp.add_var(0.0, 1.0, 1.0);
        lp.add_constraint(vec![], Relation::Eq, 0.0);
        assert_eq!(solve(&lp).unwrap().status, Status::Optimal);
    }

    #[test]
    fn equality_chain() {
        // x0 + x1 = 4, x1 - x2 = 1, minimise x0 + x2
        let mut lp = LinearProgram::new();
        let x0 = lp.add_var(0.0, 10.0, 1.0);
        let x1 = lp.add_var(0.0, 3.0, 0.0);
        let x2 = lp.add_var(0.0, 10.0, 1.0);
        lp.add_constraint(vec![(x0, 1.0), (x1, 1.0)], Relation::Eq, 4.0);
        lp.add_constraint(vec![(x1, 1.0), (x2, -1.0)], Relation::Eq, 1.0);
        let sol = solve(&lp).unwrap();
        // x1 = 3 -> x0 = 1, x2 = 2
        assert!((sol.objective_value - 3.0).abs() < 1e-12);
        assert!(lp.max_violation(&sol.values) < 1e-12);
    }

    #[test]
    fn degenerate_transportation() {
        // classic degenerate instance; Bland must not cycle
        let mut lp = LinearProgram::new();
        let c = [[4.0, 6.0, 9.0], [5.0, 3.0, 8.0]];
        let supply = [5.0, 5.0];
        let demand = [3.0, 3.0, 4.0];
        let mut idx = [[0usize; 3]; 2];
        for i in 0..2 {
            for j in 0..3 {
                idx[i][j] = lp.add_var(0.0, 10.0, c[i][j]);
            }
        }
        for i in 0..2 {
            lp.add_constraint(
                (0..3).map(|j| (idx[i][j], 1.0)).collect(),
                Relation::Le,
                supply[i],
            );
        }
        for j in 0..3 {
            lp.add_constraint(
                (0..2).map(|i| (idx[i][j], 1.0)).collect(),
                Relation::Eq,
                demand[j],
            );
        }
        let sol = solve(&lp).unwrap();
        // 3 units r0->c0 (12), 3 units r1->c1 (9), c2 split 2/2 (18 + 16)
        assert!(
            (sol.objective_value - 55.0).abs() < 1e-9,
            "{}",
            sol.objective_value
        );
    }

    #[test]
    fn deterministic() {
        let mut lp = LinearProgram::new();
        let a = lp.add_var(0.0, 5.0, -1.0);
        let b = lp.add_var(0.0, 5.0, -1.0);
        lp.add_constraint(vec![(a, 1.0), (b, 1.0)], Relation::Le, 5.0);
        let s1 = solve(&lp).unwrap();
        let s2 = solve(&lp).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn dense_solver_handles_permutation() {
        let mut a = vec![0.0, 1.0, 1.0, 0.0];
        let mut b = vec![2.0, 3.0];
        assert_eq!(solve_dense(&mut a, &mut b, 2), Some(vec![3.0, 2.0]));
    }
}
