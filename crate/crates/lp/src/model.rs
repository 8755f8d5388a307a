use std::fmt;

use thiserror::Error;

/// Relation between a constraint's left-hand side and its right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

/// A sparse linear constraint `sum(coeff * x[idx]) <relation> rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this constraint (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// Minimisation problem over box-bounded variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub var_bounds: Vec<(f64, f64)>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a variable with bounds `[lower, upper]` and objective
    /// coefficient `cost`, returning its index.
    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.var_bounds.push((lower, upper));
        self.num_vars += 1;
        self.num_vars - 1
    }

    /// Appends a constraint. Duplicate indices are summed and zero
    /// coefficients dropped.
    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
        let mut sorted = coeffs;
        sorted.sort_by_key(|&(j, _)| j);
        for (j, a) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        self.constraints.push(Constraint {
            coeffs: merged,
            relation,
            rhs,
        });
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest bound or constraint violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = self
            .var_bounds
            .iter()
            .zip(x)
            .map(|(&(lo, hi), &v)| (lo - v).max(v - hi).max(0.0));
        let rows = self.constraints.iter().map(|c| c.violation(x));
        bounds.chain(rows).fold(0.0, f64::max)
    }

    /// Checks the structural invariants every solver entry point relies on.
    pub fn validate(&self) -> Result<(), LpError> {
        if self.objective.len() != self.num_vars || self.var_bounds.len() != self.num_vars {
            return Err(LpError::InvalidModel(format!(
                "expected {} objective coefficients and bounds, got {} and {}",
                self.num_vars,
                self.objective.len(),
                self.var_bounds.len()
            )));
        }
        for (j, (&c, &(lo, hi))) in self.objective.iter().zip(&self.var_bounds).enumerate() {
            if !c.is_finite() {
                return Err(LpError::InvalidModel(format!(
                    "objective[{j}] is not finite"
                )));
            }
            if !lo.is_finite() || !hi.is_finite() {
                return Err(LpError::InvalidModel(format!(
                    "variable {j} has an infinite bound"
                )));
            }
            if lo > hi {
                return Err(LpError::InvalidModel(format!(
                    "variable {j} has lower bound {lo} above upper bound {hi}"
                )));
            }
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::InvalidModel(format!(
                    "constraint {i} has non-finite rhs"
                )));
            }
            for &(j, a) in &row.coeffs {
                if j >= self.num_vars {
                    return Err(LpError::InvalidModel(format!(
                        "constraint {i} references variable {j} of {}",
                        self.num_vars
                    )));
                }
                if !a.is_finite() {
                    return Err(LpError::InvalidModel(format!(
                        "constraint {i} has a non-finite coefficient"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
}

/// Result of [`crate::solve`] or [`crate::brute_force_oracle`].
///
/// For infeasible programs `values` is empty and `objective_value` is
/// `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: Status,
    pub values: Vec<f64>,
    pub objective_value: f64,
}

impl LpSolution {
    pub(crate) fn infeasible() -> Self {
        Self {
            status: Status::Infeasible,
            values: Vec::new(),
            objective_value: f64::INFINITY,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("invalid linear program: {0}")]
    InvalidModel(String),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex did not converge within {0} iterations")]
    IterationLimit(usize),
    #[error(
        "instance too large for the grid oracle: {num_vars} variables, {grid_points} grid points"
    )]
    InstanceTooLarge { num_vars: usize, grid_points: usize },
}
