//! Smart charging of electric vehicles under two aggregation concepts.
//!
//! * [`evba`]: the EV-based aggregator follows each vehicle through the whole
//!   day and optimises its battery across every station it visits.
//! * [`evca`]: the charging-station-based aggregator lets each station
//!   schedule only the vehicles currently plugged in, from forecasts of
//!   their arrival and departure.
//!
//! Both produce energy schedules that [`settlement`] replays against the
//! true itineraries and prices, and [`experiments`] compares them on the
//! forecast, flexibility-transfer, charger-limit and fee issues of the
//! station-based approach.
//!
//! ```
//! use emob_core::{evba, scenario, settlement::CostOptions};
//!
//! let s = scenario::builtin_illustrative();
//! let fleet = evba::optimize_fleet(&s, &CostOptions::default()).unwrap();
//! assert_eq!(fleet.schedules.len(), 3);
//! ```

pub mod chart;
pub mod evba;
pub mod evca;
pub mod experiments;
pub mod report;
pub mod scenario;
pub mod settlement;

pub use emob_lp as lp;

use thiserror::Error;

pub use evba::{
    optimize_ev, optimize_fleet, AggregateProfile, EvSchedule, EvbaError, FleetSchedule,
};
pub use evca::{
    apply_forecast_noise, derive_true_sessions, optimize_central, optimize_cs, run_evca,
    BoundaryPolicy, CsSchedule, EvcaConfig, EvcaError, ForecastErrorModel, SessionForecast,
};
pub use experiments::{
    issue_report, issue_suite, run_experiment, simulate, ComparisonReport, ExperimentConfig,
    ExperimentError, FeeToggles, ModelKind, RunMetrics, Simulation,
};
pub use scenario::{
    builtin_illustrative, effective_power_limit, load_scenario, Scenario, ScenarioError,
};
pub use settlement::{settle, simulate_delivery, CostBreakdown, CostOptions, DeliveryResult};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] experiments::ModelError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Issue(#[from] experiments::IssueError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
}

impl Error {
    /// The inputs are valid but admit no feasible schedule.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Model(e) => e.is_infeasible(),
            Error::Experiment(e) => e.is_infeasible(),
            Error::Issue(e) => e.is_infeasible(),
            Error::Scenario(_) | Error::Report(_) => false,
        }
    }
}
