//! Experiment harness: schedule, deliver and settle under one configuration
//! per seed, and the four issue comparisons.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evba::{self, EvSchedule, EvbaError};
use crate::evca::{self, BoundaryPolicy, EvcaConfig, EvcaError, EvcaPlan};
use crate::scenario::{Scenario, StepState};
use crate::settlement::{
    settle, simulate_delivery, CostBreakdown, CostOptions, DeliveryResult, ScheduledFlow,
};

/// Default number of Monte-Carlo seeds for forecast-error statistics.
pub const DEFAULT_NUM_SEEDS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Evba,
    Evca,
    Central,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Evba => "evba",
            ModelKind::Evca => "evca",
            ModelKind::Central => "central",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "evba" => Ok(ModelKind::Evba),
            "evca" => Ok(ModelKind::Evca),
            "central" => Ok(ModelKind::Central),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

impl fmt::Display for BoundaryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryPolicy::Naive => "naive",
            BoundaryPolicy::Oracle => "oracle",
        })
    }
}

impl FromStr for BoundaryPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "naive" => Ok(BoundaryPolicy::Naive),
            "oracle" => Ok(BoundaryPolicy::Oracle),
            other => Err(format!("unknown boundary policy {other:?}")),
        }
    }
}

/// Which fees are charged. Disabled fees are zeroed in the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeeToggles {
    pub grid: bool,
    pub utilization: bool,
    pub degradation: bool,
    /// V2G discharge pays the grid fee too.
    pub discharge_grid_fee: bool,
}

impl Default for FeeToggles {
    fn default() -> Self {
        Self {
            grid: true,
            utilization: true,
            degradation: true,
            discharge_grid_fee: false,
        }
    }
}

impl FeeToggles {
    pub fn none() -> Self {
        Self {
            grid: false,
            utilization: false,
            degradation: false,
            discharge_grid_fee: false,
        }
    }

    pub fn apply(&self, scenario: &Scenario) -> (Scenario, CostOptions) {
        let mut s = scenario.clone();
        for cs in &mut s.stations {
            if !self.grid {
                cs.grid_fee = 0.0;
            }
            if !self.utilization {
                cs.utilization_fee = 0.0;
            }
        }
        if !self.degradation {
            for ev in &mut s.evs {
                ev.degradation_fee = 0.0;
            }
        }
        let opts = CostOptions {
            discharge_grid_fee: self.grid && self.discharge_grid_fee,
        };
        (s, opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    /// Only used by the station-based model.
    pub boundary_policy: BoundaryPolicy,
    pub obc_known: bool,
    pub forecast_error: bool,
    pub fees: FeeToggles,
    /// Replaces every vehicle's degradation fee.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation_fee_override: Option<f64>,
    pub num_seeds: usize,
    pub base_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Evba,
            boundary_policy: BoundaryPolicy::Naive,
            obc_known: true,
            forecast_error: false,
            fees: FeeToggles::default(),
            degradation_fee_override: None,
            num_seeds: 1,
            base_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn evba() -> Self {
        Self::default()
    }

    pub fn evca(policy: BoundaryPolicy, obc_known: bool, forecast_error: bool) -> Self {
        Self {
            model: ModelKind::Evca,
            boundary_policy: policy,
            obc_known,
            forecast_error,
            ..Self::default()
        }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.num_seeds as u64).map(|i| self.base_seed.wrapping_add(i))
    }

    /// The scenario and cost options this configuration runs on.
    pub fn prepare(&self, scenario: &Scenario) -> (Scenario, CostOptions) {
        let (mut s, opts) = self.fees.apply(scenario);
        if let Some(fee) = self.degradation_fee_override {
            for ev in &mut s.evs {
                ev.degradation_fee = fee;
            }
        }
        (s, opts)
    }

    /// The EV-based run under the same scenario changes.
    pub fn baseline(&self) -> Self {
        Self {
            model: ModelKind::Evba,
            boundary_policy: BoundaryPolicy::Naive,
            obc_known: true,
            forecast_error: false,
            num_seeds: 1,
            ..self.clone()
        }
    }

    fn is_stochastic(&self) -> bool {
        self.model == ModelKind::Evca && self.forecast_error
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Evba(#[from] EvbaError),
    #[error(transparent)]
    Evca(#[from] EvcaError),
}

impl ModelError {
    /// The model has no feasible schedule, as opposed to a solver defect.
    pub fn is_infeasible(&self) -> bool {
        match self {
            ModelError::Evba(e) => matches!(
                e,
                EvbaError::InfeasibleMobility { .. } | EvbaError::InfeasibleFleet
            ),
            ModelError::Evca(e) => match e {
                EvcaError::Evba(inner) => ModelError::Evba(inner.clone()).is_infeasible(),
                EvcaError::InfeasibleMobility { .. }
                | EvcaError::InfeasibleSession(_)
                | EvcaError::InfeasibleStation(_)
                | EvcaError::InfeasibleCentral => true,
                _ => false,
            },
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("seed {seed}: {source}")]
    Run { seed: u64, source: ModelError },
    #[error("num_seeds must be at least 1")]
    NoSeeds,
}

impl ExperimentError {
    pub fn is_infeasible(&self) -> bool {
        match self {
            ExperimentError::Run { source, .. } => source.is_infeasible(),
            ExperimentError::NoSeeds => false,
        }
    }
}

/// One row of an emitted schedule: one vehicle in one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub entity_id: String,
    pub t: usize,
    pub e_sch_kwh: f64,
    pub e_dch_kwh: f64,
    pub e_fch_kwh: f64,
    pub soe_kwh: f64,
    pub delivered_kwh: f64,
    pub imbalance_kwh: f64,
}

/// Scalar results of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub costs: CostBreakdown,
    /// Sum of absolute per-step imbalances, kWh.
    pub imbalance_kwh: f64,
    /// Delivered V2G discharge, kWh.
    pub v2g_discharge_kwh: f64,
}

impl RunMetrics {
    pub const FIELDS: [&'static str; 10] = [
        "energy_cost",
        "grid_fees",
        "utilization_fees",
        "degradation_cost",
        "imbalance_cost",
        "mobility_deficit",
        "total_system_cost",
        "total_ev_perspective_cost",
        "imbalance_kwh",
        "v2g_discharge_kwh",
    ];

    pub fn values(&self) -> [f64; 10] {
        let c = self.costs.values();
        [
            c[0],
            c[1],
            c[2],
            c[3],
            c[4],
            c[5],
            c[6],
            c[7],
            self.imbalance_kwh,
            self.v2g_discharge_kwh,
        ]
    }

    fn from_values(v: [f64; 10]) -> Self {
        Self {
            costs: CostBreakdown {
                energy_cost: v[0],
                grid_fees: v[1],
                utilization_fees: v[2],
                degradation_cost: v[3],
                imbalance_cost: v[4],
                mobility_deficit: v[5],
                total_system_cost: v[6],
                total_ev_perspective_cost: v[7],
            },
            imbalance_kwh: v[8],
            v2g_discharge_kwh: v[9],
        }
    }

    fn zip(a: &Self, b: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let (x, y) = (a.values(), b.values());
        Self::from_values(std::array::from_fn(|i| f(x[i], y[i])))
    }

    /// Field-wise mean and sample standard deviation.
    pub fn mean_std(runs: &[RunMetrics]) -> (Self, Self) {
        let n = runs.len();
        let mut mean = [0.0; 10];
        for r in runs {
            for (m, v) in mean.iter_mut().zip(r.values()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut var = [0.0; 10];
        if n > 1 {
            for r in runs {
                for ((s, v), m) in var.iter_mut().zip(r.values()).zip(mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut()
                .for_each(|s| *s = (*s / (n - 1) as f64).sqrt());
        }
        (Self::from_values(mean), Self::from_values(var))
    }
}

/// Everything one run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub seed: u64,
    pub scenario: Scenario,
    pub options: CostOptions,
    /// Per-vehicle plans of the EV-based and central models.
    pub ev_schedules: Option<Vec<EvSchedule>>,
    /// Station plans of the station-based model.
    pub evca_plan: Option<EvcaPlan>,
    pub flows: Vec<ScheduledFlow>,
    pub delivery: DeliveryResult,
    pub metrics: RunMetrics,
}

impl Simulation {
    /// Objective value of the plan: what the schedulers expected to pay.
    pub fn planned_cost(&self) -> f64 {
        match (&self.ev_schedules, &self.evca_plan) {
            (Some(s), _) => s.iter().map(|x| x.total_cost).sum(),
            (None, Some(p)) => p.total_cost(),
            _ => 0.0,
        }
    }

    /// One row per vehicle and step, vehicles in scenario order.
    ///
    /// `soe_kwh` is the planned SOE for EV-based and central runs and the
    /// simulated true SOE for station-based runs, which plan no SOE outside
    /// sessions.
    pub fn schedule_rows(&self) -> Vec<ScheduleRow> {
        let mut rows = Vec::new();
        for ev in &self.scenario.evs {
            let d = self.delivery.ev(&ev.id).expect("delivery for every ev");
            let planned = self
                .ev_schedules
                .as_ref()
                .and_then(|s| s.iter().find(|x| x.ev_id == ev.id));
            for step in &d.steps {
                let t = step.t;
                let soe = planned.map_or(step.soe, |p| p.steps[t].soe);
                rows.push(ScheduleRow {
                    entity_id: ev.id.clone(),
                    t,
                    e_sch_kwh: step.scheduled_sch,
                    e_dch_kwh: step.scheduled_dch,
                    e_fch_kwh: step.scheduled_fch,
                    soe_kwh: soe,
                    delivered_kwh: step.delivered,
                    imbalance_kwh: step.imbalance,
                });
            }
        }
        rows
    }
}

/// Schedules, delivers and settles one configuration for one seed.
pub fn simulate(
    scenario: &Scenario,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Simulation, ModelError> {
    let (scenario, opts) = config.prepare(scenario);
    let (ev_schedules, evca_plan, flows) = match config.model {
        ModelKind::Evba => {
            let fleet = evba::optimize_fleet(&scenario, &opts)?;
            let flows = fleet.flows();
            (Some(fleet.schedules), None, flows)
        }
        ModelKind::Central => {
            let schedules = evca::optimize_central(&scenario, &opts)?;
            let flows = schedules.iter().flat_map(|s| s.flows()).collect();
            (Some(schedules), None, flows)
        }
        ModelKind::Evca => {
            let cfg = EvcaConfig {
                policy: config.boundary_policy,
                obc_known: config.obc_known,
                noise: config.forecast_error,
                seed,
            };
            let plan = evca::run_evca(&scenario, &cfg, &opts)?;
            let flows = plan.flows();
            (None, Some(plan), flows)
        }
    };
    let delivery = simulate_delivery(&flows, &scenario);
    let costs = settle(&delivery, &scenario, &opts);
    let metrics = RunMetrics {
        costs,
        imbalance_kwh: delivery.total_abs_imbalance(),
        v2g_discharge_kwh: delivery.total_discharge(),
    };
    Ok(Simulation {
        seed,
        scenario,
        options: opts,
        ev_schedules,
        evca_plan,
        flows,
        delivery,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Runs of one configuration with summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub label: String,
    pub config: ExperimentConfig,
    /// Sorted by seed.
    pub runs: Vec<RunRecord>,
    pub mean: RunMetrics,
    pub std: RunMetrics,
    /// EV-based result under the same fees.
    pub baseline: RunMetrics,
    /// `mean - baseline`.
    pub delta_vs_evba: RunMetrics,
}

impl VariantReport {
    /// Whether the runs differ between seeds at all.
    pub fn is_stochastic(&self) -> bool {
        self.config.is_stochastic()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub title: String,
    pub variants: Vec<VariantReport>,
}

impl ComparisonReport {
    pub fn variant(&self, label: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.label == label)
    }
}

fn run_variant(
    scenario: &Scenario,
    label: &str,
    config: &ExperimentConfig,
) -> Result<VariantReport, ExperimentError> {
    if config.num_seeds == 0 {
        return Err(ExperimentError::NoSeeds);
    }
    let seeds: Vec<u64> = config.seeds().collect();
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            simulate(scenario, config, seed)
                .map(|sim| RunRecord {
                    seed,
                    metrics: sim.metrics,
                })
                .map_err(|source| ExperimentError::Run { seed, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let metrics: Vec<RunMetrics> = runs.iter().map(|r| r.metrics).collect();
    let (mean, std) = RunMetrics::mean_std(&metrics);
    let base_cfg = config.baseline();
    let baseline = if *config == base_cfg {
        runs[0].metrics
    } else {
        simulate(scenario, &base_cfg, base_cfg.base_seed)
            .map_err(|source| ExperimentError::Run {
                seed: base_cfg.base_seed,
                source,
            })?
            .metrics
    };
    let delta_vs_evba = RunMetrics::zip(&mean, &baseline, |a, b| a - b);
    Ok(VariantReport {
        label: label.to_string(),
        config: config.clone(),
        runs,
        mean,
        std,
        baseline,
        delta_vs_evba,
    })
}

/// Runs `config` for every seed in `base_seed .. base_seed + num_seeds`.
/// Seeds run in parallel; results are identical to a sequential run.
pub fn run_experiment(
    scenario: &Scenario,
    config: &ExperimentConfig,
) -> Result<ComparisonReport, ExperimentError> {
    let label = match config.model {
        ModelKind::Evca => format!(
            "evca {} obc_known={} noise={}",
            config.boundary_policy, config.obc_known, config.forecast_error
        ),
        m => m.to_string(),
    };
    Ok(ComparisonReport {
        title: label.clone(),
        variants: vec![run_variant(scenario, &label, config)?],
    })
}

/// Profitability threshold of V2G for the EV-based model: above this
/// degradation fee no discharge can pay for itself, because the best
/// discharge revenue of any vehicle is below the cost of replacing the
/// energy at its cheapest charging opportunity.
pub fn degradation_threshold(scenario: &Scenario, opts: &CostOptions) -> f64 {
    let prices = &scenario.price_curve.prices;
    let mut threshold: f64 = 0.0;
    for ev in &scenario.evs {
        let Some(it) = scenario.itinerary(&ev.id) else {
            continue;
        };
        let mut best_sale = f64::NEG_INFINITY;
        let mut cheapest_buy = f64::INFINITY;
        for (t, state) in it.states.iter().enumerate() {
            let Some(cs) = state.station().and_then(|id| scenario.station(id)) else {
                continue;
            };
            let buy = prices[t] + cs.grid_fee + cs.utilization_fee;
            match state {
                StepState::Parked(_) => {
                    let fee = if opts.discharge_grid_fee {
                        cs.grid_fee
                    } else {
                        0.0
                    };
                    best_sale = best_sale.max(prices[t] - fee - cs.utilization_fee);
                    cheapest_buy = cheapest_buy.min(buy / (ev.eta_sch * ev.eta_dch));
                }
                StepState::FastCharge { .. } => {
                    cheapest_buy = cheapest_buy.min(buy / (ev.eta_fch * ev.eta_dch));
                }
                StepState::Driving { .. } => {}
            }
        }
        if best_sale == f64::NEG_INFINITY {
            continue;
        }
        // energy above the end-of-day target can be sold without replacement
        if ev.soe_init > ev.soe_end_min.max(ev.soe_min) || cheapest_buy == f64::INFINITY {
            cheapest_buy = cheapest_buy.min(0.0);
        }
        threshold = threshold.max(best_sale - cheapest_buy);
    }
    threshold
}

/// Issue ids understood by [`issue_report`].
pub const ISSUES: [u8; 4] = [1, 2, 3, 4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IssueError {
    #[error("unknown issue id {0}")]
    UnknownIssue(u8),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl IssueError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, IssueError::Experiment(e) if e.is_infeasible())
    }
}

/// Margin above [`degradation_threshold`] used by the Issue 4 comparison.
pub const THRESHOLD_MARGIN: f64 = 1e-3;

/// Variants compared for one issue.
pub fn issue_variants(
    issue: u8,
    scenario: &Scenario,
    num_seeds: usize,
    base_seed: u64,
) -> Result<Vec<(String, ExperimentConfig)>, IssueError> {
    let fixed = |c: ExperimentConfig| ExperimentConfig {
        num_seeds: 1,
        base_seed,
        ..c
    };
    let v = match issue {
        1 => vec![
            (
                "evca naive, perfect forecasts".to_string(),
                fixed(ExperimentConfig::evca(BoundaryPolicy::Naive, true, false)),
            ),
            (
                "evca naive, forecast error".to_string(),
                ExperimentConfig {
                    num_seeds,
                    base_seed,
                    ..ExperimentConfig::evca(BoundaryPolicy::Naive, true, true)
                },
            ),
        ],
        2 => vec![
            (
                "evca naive boundaries".to_string(),
                fixed(ExperimentConfig::evca(BoundaryPolicy::Naive, true, false)),
            ),
            (
                "evca oracle boundaries".to_string(),
                fixed(ExperimentConfig::evca(BoundaryPolicy::Oracle, true, false)),
            ),
        ],
        3 => vec![
            (
                "evca obc_known=false".to_string(),
                fixed(ExperimentConfig::evca(BoundaryPolicy::Naive, false, false)),
            ),
            (
                "evca obc_known=true".to_string(),
                fixed(ExperimentConfig::evca(BoundaryPolicy::Naive, true, false)),
            ),
        ],
        4 => {
            let off = FeeToggles::none();
            let on = FeeToggles::default();
            let (s, opts) = on.apply(scenario);
            let above = degradation_threshold(&s, &opts) + THRESHOLD_MARGIN;
            let evca = ExperimentConfig::evca(BoundaryPolicy::Naive, true, false);
            vec![
                (
                    "evba fees off".to_string(),
                    fixed(ExperimentConfig {
                        fees: off,
                        ..ExperimentConfig::evba()
                    }),
                ),
                (
                    "evba fees on".to_string(),
                    fixed(ExperimentConfig {
                        fees: on,
                        ..ExperimentConfig::evba()
                    }),
                ),
                (
                    "evca fees off".to_string(),
                    fixed(ExperimentConfig {
                        fees: off,
                        ..evca.clone()
                    }),
                ),
                (
                    "evca fees on".to_string(),
                    fixed(ExperimentConfig { fees: on, ..evca }),
                ),
                (
                    "evba degradation above threshold".to_string(),
                    fixed(ExperimentConfig {
                        fees: on,
                        degradation_fee_override: Some(above),
                        ..ExperimentConfig::evba()
                    }),
                ),
            ]
        }
        other => return Err(IssueError::UnknownIssue(other)),
    };
    Ok(v)
}

pub fn issue_title(issue: u8) -> &'static str {
    match issue {
        1 => "forecast dependence",
        2 => "flexibility transfer between stations",
        3 => "on-board charger limits",
        4 => "incomplete costs",
        _ => "unknown",
    }
}

pub fn issue_report(
    issue: u8,
    scenario: &Scenario,
    num_seeds: usize,
    base_seed: u64,
) -> Result<ComparisonReport, IssueError> {
    let variants = issue_variants(issue, scenario, num_seeds, base_seed)?
        .iter()
        .map(|(label, cfg)| run_variant(scenario, label, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ComparisonReport {
        title: format!("issue {issue}: {}", issue_title(issue)),
        variants,
    })
}

/// Reports for issues 1 to 4, in order.
pub fn issue_suite(
    scenario: &Scenario,
    num_seeds: usize,
    base_seed: u64,
) -> Result<Vec<ComparisonReport>, IssueError> {
    ISSUES
        .iter()
        .map(|&k| issue_report(k, scenario, num_seeds, base_seed))
        .collect()
}
