//! EV-based aggregation: every vehicle optimises its own whole-day storage
//! trajectory across all the stations it visits.
//!
//! Per step `t` the battery balance is
//!
//! ```text
//! soe[t] = soe[t-1] + e_sch[t] * eta_sch - e_dch[t] / eta_dch
//!        - e_run[t] / eta_run + e_fch[t] * eta_fch
//! ```
//!
//! with `soe[-1] = soe_init`, `soe_min <= soe[t] <= soe_max` and
//! `soe[T-1] >= soe_end_min`. Slow charging and V2G are only possible while
//! parked, fast charging only during fast-charge stops.

use std::collections::BTreeMap;

use emob_lp::{solve, LinearProgram, LpError, Relation, Status};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{effective_power_limit, Ev, Itinerary, Scenario, StepState};
use crate::settlement::{
    charge_cost_per_kwh, discharge_cost_per_kwh, plan_costs, CostBreakdown, CostOptions,
    ScheduledFlow,
};

const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvbaError {
    #[error("ev {ev_id} cannot cover its mobility needs (first violation at step {step})")]
    InfeasibleMobility { ev_id: String, step: usize },
    #[error("joint fleet schedule is infeasible under the station capacity limits")]
    InfeasibleFleet,
    #[error("unknown ev {0}")]
    UnknownEv(String),
    #[error(transparent)]
    Solver(#[from] LpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvStep {
    pub t: usize,
    pub station: Option<String>,
    pub e_sch: f64,
    pub e_dch: f64,
    pub e_fch: f64,
    pub soe: f64,
}

impl EvStep {
    /// Net energy drawn from the grid in this step.
    pub fn net(&self) -> f64 {
        self.e_sch + self.e_fch - self.e_dch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSchedule {
    pub ev_id: String,
    pub steps: Vec<EvStep>,
    pub total_cost: f64,
    pub cost_breakdown: CostBreakdown,
}

impl EvSchedule {
    /// SOE before step `t`.
    pub fn soe_before(&self, t: usize, ev: &Ev) -> f64 {
        if t == 0 {
            ev.soe_init
        } else {
            self.steps[t - 1].soe
        }
    }

    pub fn flows(&self) -> Vec<ScheduledFlow> {
        self.steps
            .iter()
            .filter_map(|s| {
                s.station.as_ref().map(|cs| ScheduledFlow {
                    ev_id: self.ev_id.clone(),
                    cs_id: cs.clone(),
                    t: s.t,
                    e_sch: s.e_sch,
                    e_dch: s.e_dch,
                    e_fch: s.e_fch,
                })
            })
            .collect()
    }

    /// Largest gap between the stored SOE and the battery balance recomputed
    /// from the scheduled flows.
    pub fn recursion_error(&self, ev: &Ev, itinerary: &Itinerary) -> f64 {
        let mut soe = ev.soe_init;
        let mut worst: f64 = 0.0;
        for (s, state) in self.steps.iter().zip(&itinerary.states) {
            soe = soe + s.e_sch * ev.eta_sch
                - s.e_dch / ev.eta_dch
                - state.driving_energy() / ev.eta_run
                + s.e_fch * ev.eta_fch;
            worst = worst.max((soe - s.soe).abs());
        }
        worst
    }

    pub fn total_discharge(&self) -> f64 {
        self.steps.iter().map(|s| s.e_dch).sum()
    }
}

/// Per-step charge and discharge of one contributor (a vehicle or a station).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub id: String,
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
}

/// Stacked fleet profile. Charge includes fast charging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateProfile {
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    pub contributors: Vec<Contribution>,
}

impl AggregateProfile {
    fn from_contributors(horizon: usize, contributors: Vec<Contribution>) -> Self {
        let mut charge = vec![0.0; horizon];
        let mut discharge = vec![0.0; horizon];
        for c in &contributors {
            for t in 0..horizon {
                charge[t] += c.charge[t];
                discharge[t] += c.discharge[t];
            }
        }
        Self {
            charge,
            discharge,
            contributors,
        }
    }

    pub fn by_ev(schedules: &[EvSchedule], horizon: usize) -> Self {
        let contributors = schedules
            .iter()
            .map(|s| {
                let mut c = Contribution {
                    id: s.ev_id.clone(),
                    charge: vec![0.0; horizon],
                    discharge: vec![0.0; horizon],
                };
                for st in &s.steps {
                    c.charge[st.t] += st.e_sch + st.e_fch;
                    c.discharge[st.t] += st.e_dch;
                }
                c
            })
            .collect();
        Self::from_contributors(horizon, contributors)
    }

    /// Groups by the station each vehicle occupies; stations appear in
    /// first-seen order.
    pub fn by_station(schedules: &[EvSchedule], horizon: usize) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut map: BTreeMap<String, Contribution> = BTreeMap::new();
        for s in schedules {
            for st in &s.steps {
                let Some(cs) = &st.station else { continue };
                let c = map.entry(cs.clone()).or_insert_with(|| {
                    order.push(cs.clone());
                    Contribution {
                        id: cs.clone(),
                        charge: vec![0.0; horizon],
                        discharge: vec![0.0; horizon],
                    }
                });
                c.charge[st.t] += st.e_sch + st.e_fch;
                c.discharge[st.t] += st.e_dch;
            }
        }
        let contributors = order.iter().filter_map(|id| map.remove(id)).collect();
        Self::from_contributors(horizon, contributors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSchedule {
    pub schedules: Vec<EvSchedule>,
    pub aggregate: AggregateProfile,
    /// Whether the joint program with station coupling was used.
    pub joint: bool,
}

impl FleetSchedule {
    pub fn total_cost(&self) -> f64 {
        self.schedules.iter().map(|s| s.total_cost).sum()
    }

    pub fn flows(&self) -> Vec<ScheduledFlow> {
        self.schedules.iter().flat_map(|s| s.flows()).collect()
    }
}

/// Per-step energy bounds of one vehicle, kWh.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepLimits {
    pub slow: f64,
    pub fast: f64,
    pub run: f64,
}

pub(crate) fn step_limits(scenario: &Scenario, ev: &Ev, state: &StepState) -> StepLimits {
    let dt = scenario.dt();
    match state {
        StepState::Parked(cs) => {
            let cs = scenario.station(cs).expect("validated station");
            StepLimits {
                slow: effective_power_limit(ev, cs).min(cs.capacity()) * dt,
                fast: 0.0,
                run: 0.0,
            }
        }
        StepState::FastCharge { cs, e_fch_max } => {
            let cs = scenario.station(cs).expect("validated station");
            StepLimits {
                slow: 0.0,
                fast: e_fch_max.min(cs.cp_limit.min(cs.capacity()) * dt),
                run: 0.0,
            }
        }
        StepState::Driving { e_run } => StepLimits {
            slow: 0.0,
            fast: 0.0,
            run: *e_run,
        },
    }
}

/// Charges as hard as possible every step; the first step at which even this
/// leaves the battery below its floor (or the final step, if the end target
/// is missed) is where mobility becomes infeasible.
pub fn first_mobility_violation(
    scenario: &Scenario,
    ev: &Ev,
    itinerary: &Itinerary,
) -> Option<usize> {
    let mut soe = ev.soe_init;
    for (t, state) in itinerary.states.iter().enumerate() {
        let lim = step_limits(scenario, ev, state);
        soe = (soe + lim.slow * ev.eta_sch + lim.fast * ev.eta_fch).min(ev.soe_max);
        soe -= lim.run / ev.eta_run;
        if soe < ev.soe_min - FEAS_TOL {
            return Some(t);
        }
    }
    if soe < ev.soe_end_min - FEAS_TOL {
        return Some(itinerary.states.len().saturating_sub(1));
    }
    None
}

#[derive(Debug, Clone, Default)]
struct VarMap {
    sch: Vec<Option<usize>>,
    dch: Vec<Option<usize>>,
    fch: Vec<Option<usize>>,
    soe: Vec<usize>,
}

/// Whether some station could see more simultaneous demand than it can
/// supply, making the vehicles' programs interdependent.
pub fn needs_coupling(scenario: &Scenario) -> bool {
    let dt = scenario.dt();
    scenario.stations.iter().any(|cs| {
        (0..scenario.horizon()).any(|t| {
            let demand: f64 = scenario
                .evs
                .iter()
                .map(|ev| {
                    let state = &scenario.itinerary(&ev.id).expect("validated").states[t];
                    if state.station() == Some(cs.id.as_str()) {
                        let l = step_limits(scenario, ev, state);
                        l.slow + l.fast
                    } else {
                        0.0
                    }
                })
                .sum();
            demand > cs.capacity() * dt + FEAS_TOL
        })
    })
}

/// Builds the whole-day program for `evs`, adding per-station, per-step
/// capacity rows wherever the listed vehicles could jointly exceed them.
fn build_program(
    scenario: &Scenario,
    evs: &[&Ev],
    opts: &CostOptions,
) -> (LinearProgram, Vec<VarMap>) {
    let horizon = scenario.horizon();
    let prices = &scenario.price_curve.prices;
    let mut lp = LinearProgram::new();
    let mut maps = Vec::with_capacity(evs.len());

    for ev in evs {
        let itinerary = scenario.itinerary(&ev.id).expect("validated itinerary");
        let mut map = VarMap::default();
        for (t, state) in itinerary.states.iter().enumerate() {
            let lim = step_limits(scenario, ev, state);
            let (mut sch, mut dch, mut fch) = (None, None, None);
            match state {
                StepState::Parked(cs) => {
                    let cs = scenario.station(cs).expect("validated station");
                    sch = Some(lp.add_var(0.0, lim.slow, charge_cost_per_kwh(prices[t], cs)));
                    dch = Some(lp.add_var(
                        0.0,
                        lim.slow,
                        discharge_cost_per_kwh(prices[t], cs, ev, opts),
                    ));
                }
                StepState::FastCharge { cs, .. } => {
                    let cs = scenario.station(cs).expect("validated station");
                    fch = Some(lp.add_var(0.0, lim.fast, charge_cost_per_kwh(prices[t], cs)));
                }
                StepState::Driving { .. } => {}
            }
            let floor = if t + 1 == horizon {
                ev.soe_min.max(ev.soe_end_min)
            } else {
                ev.soe_min
            };
            let soe = lp.add_var(floor, ev.soe_max, 0.0);

            let mut row = vec![(soe, 1.0)];
            let mut rhs = -lim.run / ev.eta_run;
            if t == 0 {
                rhs += ev.soe_init;
            } else {
                row.push((map.soe[t - 1], -1.0));
            }
            if let Some(j) = sch {
                row.push((j, -ev.eta_sch));
            }
            if let Some(j) = dch {
                row.push((j, 1.0 / ev.eta_dch));
            }
            if let Some(j) = fch {
                row.push((j, -ev.eta_fch));
            }
            lp.add_constraint(row, Relation::Eq, rhs);

            map.sch.push(sch);
            map.dch.push(dch);
            map.fch.push(fch);
            map.soe.push(soe);
        }
        maps.push(map);
    }

    if evs.len() > 1 {
        let dt = scenario.dt();
        for cs in &scenario.stations {
            for t in 0..horizon {
                let mut charge = Vec::new();
                let mut discharge = Vec::new();
                let mut demand = 0.0;
                for (ev, map) in evs.iter().zip(&maps) {
                    let state = &scenario.itinerary(&ev.id).expect("validated").states[t];
                    if state.station() != Some(cs.id.as_str()) {
                        continue;
                    }
                    let lim = step_limits(scenario, ev, state);
                    demand += lim.slow + lim.fast;
                    for j in [map.sch[t], map.fch[t]].into_iter().flatten() {
                        charge.push((j, 1.0));
                    }
                    if let Some(j) = map.dch[t] {
                        discharge.push((j, 1.0));
                    }
                }
                let cap = cs.capacity() * dt;
                if demand > cap + FEAS_TOL {
                    lp.add_constraint(charge, Relation::Le, cap);
                    if !discharge.is_empty() {
                        lp.add_constraint(discharge, Relation::Le, cap);
                    }
                }
            }
        }
    }
    (lp, maps)
}

fn extract(
    scenario: &Scenario,
    ev: &Ev,
    map: &VarMap,
    values: &[f64],
    opts: &CostOptions,
) -> EvSchedule {
    let itinerary = scenario.itinerary(&ev.id).expect("validated itinerary");
    let get = |j: Option<usize>| j.map_or(0.0, |j| values[j]);
    let steps: Vec<EvStep> = itinerary
        .states
        .iter()
        .enumerate()
        .map(|(t, state)| EvStep {
            t,
            station: state.station().map(str::to_string),
            e_sch: get(map.sch[t]),
            e_dch: get(map.dch[t]),
            e_fch: get(map.fch[t]),
            soe: values[map.soe[t]],
        })
        .collect();
    let mut schedule = EvSchedule {
        ev_id: ev.id.clone(),
        steps,
        total_cost: 0.0,
        cost_breakdown: CostBreakdown::default(),
    };
    schedule.cost_breakdown = plan_costs(&schedule.flows(), scenario, opts);
    schedule.total_cost = schedule.cost_breakdown.total_ev_perspective_cost;
    schedule
}

/// Cost-minimal whole-day schedule of one vehicle.
///
/// The objective charges energy at `price + grid_fee + utilization_fee`,
/// credits V2G discharge at `price` minus fees and the vehicle's degradation
/// fee, and charges fast energy at the fast station's price plus fees.
pub fn optimize_ev(
    scenario: &Scenario,
    ev_id: &str,
    opts: &CostOptions,
) -> Result<EvSchedule, EvbaError> {
    let ev = scenario
        .ev(ev_id)
        .ok_or_else(|| EvbaError::UnknownEv(ev_id.to_string()))?;
    let itinerary = scenario
        .itinerary(ev_id)
        .ok_or_else(|| EvbaError::UnknownEv(ev_id.to_string()))?;
    if let Some(step) = first_mobility_violation(scenario, ev, itinerary) {
        return Err(EvbaError::InfeasibleMobility {
            ev_id: ev.id.clone(),
            step,
        });
    }
    let (lp, maps) = build_program(scenario, &[ev], opts);
    let sol = solve(&lp)?;
    if sol.status == Status::Infeasible {
        return Err(EvbaError::InfeasibleMobility {
            ev_id: ev.id.clone(),
            step: scenario.horizon() - 1,
        });
    }
    Ok(extract(scenario, ev, &maps[0], &sol.values, opts))
}

/// One program over every vehicle with station capacity coupling.
pub fn optimize_joint(
    scenario: &Scenario,
    opts: &CostOptions,
) -> Result<Vec<EvSchedule>, EvbaError> {
    for ev in &scenario.evs {
        let it = scenario.itinerary(&ev.id).expect("validated itinerary");
        if let Some(step) = first_mobility_violation(scenario, ev, it) {
            return Err(EvbaError::InfeasibleMobility {
                ev_id: ev.id.clone(),
                step,
            });
        }
    }
    let evs: Vec<&Ev> = scenario.evs.iter().collect();
    let (lp, maps) = build_program(scenario, &evs, opts);
    let sol = solve(&lp)?;
    if sol.status == Status::Infeasible {
        return Err(EvbaError::InfeasibleFleet);
    }
    Ok(evs
        .iter()
        .zip(&maps)
        .map(|(ev, map)| extract(scenario, ev, map, &sol.values, opts))
        .collect())
}

/// Schedules the whole fleet. Vehicles are optimised independently unless a
/// station could be overloaded, in which case one joint program is solved.
pub fn optimize_fleet(scenario: &Scenario, opts: &CostOptions) -> Result<FleetSchedule, EvbaError> {
    let joint = needs_coupling(scenario);
    let schedules = if joint {
        optimize_joint(scenario, opts)?
    } else {
        scenario
            .evs
            .par_iter()
            .map(|ev| optimize_ev(scenario, &ev.id, opts))
            .collect::<Result<Vec<_>, _>>()?
    };
    let aggregate = AggregateProfile::by_ev(&schedules, scenario.horizon());
    Ok(FleetSchedule {
        schedules,
        aggregate,
        joint,
    })
}
