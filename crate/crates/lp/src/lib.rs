//! Small dense linear programming toolkit.
//!
//! Every program is a minimisation over box-bounded variables with a list of
//! sparse linear constraints. [`solve`] runs a two-phase bounded-variable
//! primal simplex using Bland's lowest-index rule, which is slow on large
//! instances but deterministic and immune to cycling. [`brute_force_oracle`]
//! enumerates a Cartesian grid and exists to cross-check the solver on tiny
//! instances.
//!
//! ```
//! use emob_lp::{solve, LinearProgram, Relation, Status};
//!
//! // minimise x + 2y  subject to  x + y >= 3,  x, y in [0, 10]
//! let mut lp = LinearProgram::new();
//! let x = lp.add_var(0.0, 10.0, 1.0);
//! let y = lp.add_var(0.0, 10.0, 2.0);
//! lp.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Ge, 3.0);
//!
//! let sol = solve(&lp).unwrap();
//! assert_eq!(sol.status, Status::Optimal);
//! assert!((sol.objective_value - 3.0).abs() < 1e-9);
//! ```

mod model;
mod oracle;
mod simplex;

pub use model::{Constraint, LinearProgram, LpError, LpSolution, Relation, Status};
pub use oracle::{brute_force_oracle, MAX_ORACLE_GRID_POINTS, MAX_ORACLE_VARS};
pub use simplex::solve;

/// Absolute tolerance used for bound and constraint feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Tolerance on reduced costs when deciding optimality.
pub const OPTIMALITY_TOL: f64 = 1e-9;
