use crate::model::{LinearProgram, LpError, LpSolution, Status};
use crate::FEASIBILITY_TOL;

pub const MAX_ORACLE_VARS: usize = 8;
pub const MAX_ORACLE_GRID_POINTS: usize = 21;

/// Exhaustive search over an evenly spaced grid inside each variable's box.
///
/// With `grid_points = k` every variable takes the `k` values
/// `lower + i * (upper - lower) / (k - 1)`; a fixed variable takes its single
/// value. The best feasible grid point is returned, so the result is only an
/// upper bound on the true optimum unless the grid happens to contain an
/// optimal vertex. Intended for certifying [`crate::solve`] on tiny inputs.
pub fn brute_force_oracle(lp: &LinearProgram, grid_points: usize) -> Result<LpSolution, LpError> {
    lp.validate()?;
    if lp.num_vars > MAX_ORACLE_VARS || !(2..=MAX_ORACLE_GRID_POINTS).contains(&grid_points) {
        return Err(LpError::InstanceTooLarge {
            num_vars: lp.num_vars,
            grid_points,
        });
    }

    let axes: Vec<Vec<f64>> = lp
        .var_bounds
        .iter()
        .map(|&(lo, hi)| {
            if lo == hi {
                vec![lo]
            } else {
                let step = (hi - lo) / (grid_points - 1) as f64;
                (0..grid_points)
                    .map(|k| {
                        if k + 1 == grid_points {
                            hi
                        } else {
                            lo + step * k as f64
                        }
                    })
                    .collect()
            }
        })
        .collect();

    let mut odometer = vec![0usize; lp.num_vars];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        let feasible = lp
            .constraints
            .iter()
            .all(|c| c.violation(&point) <= FEASIBILITY_TOL);
        if feasible {
            let obj = lp.evaluate(&point);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, point.clone()));
            }
        }

        let mut k = 0;
        loop {
            if k == lp.num_vars {
                return Ok(match best {
                    Some((objective_value, values)) => LpSolution {
                        status: Status::Optimal,
                        values,
                        objective_value,
                    },
                    None => LpSolution::infeasible(),
                });
            }
            odometer[k] += 1;
            if odometer[k] < axes[k].len() {
                point[k] = axes[k][odometer[k]];
                break;
            }
            odometer[k] = 0;
            point[k] = axes[k][0];
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Relation;

    #[test]
    fn vertex_on_grid() {
        let mut lp = LinearProgram::new();
        lp.add_var(2.0, 5.0, 1.0);
        let sol = brute_force_oracle(&lp, 4).unwrap();
        assert_eq!(sol.values, vec![2.0]);
        assert_eq!(sol.objective_value, 2.0);
    }

    #[test]
    fn infeasible_program() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, 1.0, 0.0);
        lp.add_constraint(vec![(x, 1.0)], Relation::Ge, 2.0);
        assert_eq!(
            brute_force_oracle(&lp, 5).unwrap().status,
            Status::Infeasible
        );
    }

    #[test]
    fn rejects_large_instances() {
        let mut lp = LinearProgram::new();
        for _ in 0..9 {
            lp.add_var(0.0, 1.0, 0.0);
        }
        assert!(matches!(
            brute_force_oracle(&lp, 3),
            Err(LpError::InstanceTooLarge { num_vars: 9, .. })
        ));
        let mut lp = LinearProgram::new();
        lp.add_var(0.0, 1.0, 0.0);
        assert!(brute_force_oracle(&lp, 22).is_err());
    }

    #[test]
    fn no_variables() {
        let lp = LinearProgram::new();
        let sol = brute_force_oracle(&lp, 3).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert_eq!(sol.objective_value, 0.0);
    }
}
