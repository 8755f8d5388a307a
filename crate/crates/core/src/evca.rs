//! Charging-station-based aggregation.
//!
//! Each station only sees vehicles while they are plugged in. For every
//! incoming vehicle it forecasts four session attributes (arrival step,
//! arrival SOE, departure step, departure SOE) and then schedules its own
//! sessions in isolation:
//!
//! ```text
//! soe[t]     = soe[t-1] + e_sch[t] * eta_sch - e_dch[t] / eta_dch   t in [t_arr, t_dep)
//! soe[t_arr - 1] = soe_arr
//! soe[t_dep - 1] >= soe_dep
//! ```
//!
//! No variable exists for a vehicle outside its sessions.

use std::collections::BTreeMap;

use emob_lp::{solve, LinearProgram, LpError, Relation, Status};
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evba::{self, first_mobility_violation, step_limits, EvSchedule, EvStep, EvbaError};
use crate::scenario::{effective_power_limit, ChargingStation, Ev, Itinerary, Scenario, StepState};
use crate::settlement::{
    charge_cost_per_kwh, discharge_cost_per_kwh, plan_costs, simulate_delivery, CostBreakdown,
    CostOptions, ScheduledFlow,
};

const FEAS_TOL: f64 = 1e-9;
const MAX_RESOLVE_ROUNDS: usize = 64;
const TRUNCATION_TRIES: usize = 64;

/// Parametric forecast error for the four session attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastErrorModel {
    /// Probability of shifting a forecast arrival or departure by the given
    /// number of steps.
    pub time_shift_probs: BTreeMap<i64, f64>,
    /// Standard deviation of the arrival SOE error, kWh.
    pub soe_sigma: f64,
    /// Safety margin added to the forecast departure SOE, kWh.
    pub dep_soe_margin: f64,
}

impl Default for ForecastErrorModel {
    fn default() -> Self {
        Self::none()
    }
}

impl ForecastErrorModel {
    /// Perfect forecasts.
    pub fn none() -> Self {
        Self::symmetric(0.0, 0.0, 0.0)
    }

    /// Shifts of -1 and +1 step with probability `p` each.
    pub fn symmetric(p: f64, soe_sigma: f64, dep_soe_margin: f64) -> Self {
        Self {
            time_shift_probs: BTreeMap::from([(-1, p), (0, 1.0 - 2.0 * p), (1, p)]),
            soe_sigma,
            dep_soe_margin,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.time_shift_probs.is_empty() {
            return Err("time_shift_probs is empty".into());
        }
        if let Some((k, p)) = self
            .time_shift_probs
            .iter()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(format!("probability of shift {k} is {p}"));
        }
        let total: f64 = self.time_shift_probs.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("time_shift_probs sum to {total}, not 1"));
        }
        if !self.soe_sigma.is_finite() || self.soe_sigma < 0.0 {
            return Err(format!("soe_sigma {} must be >= 0", self.soe_sigma));
        }
        if !self.dep_soe_margin.is_finite() || self.dep_soe_margin < 0.0 {
            return Err(format!(
                "dep_soe_margin {} must be >= 0",
                self.dep_soe_margin
            ));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.time_shift_probs
            .iter()
            .all(|(&k, &p)| k == 0 || p == 0.0)
            && self.soe_sigma == 0.0
            && self.dep_soe_margin == 0.0
    }
}

/// How session boundary SOEs are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Leave every vehicle with the least energy that still covers all of
    /// its remaining trips.
    Naive,
    /// Read the boundaries off the EV-based optimum.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionKind {
    Slow,
    Fast,
}

/// One forecast (or true) stay of a vehicle at a station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionForecast {
    pub ev_id: String,
    pub cs_id: String,
    /// Position of the session in the vehicle's day.
    pub seq: usize,
    pub kind: SessionKind,
    /// First parked step.
    pub t_arr: usize,
    /// SOE before step `t_arr`.
    pub soe_arr: f64,
    /// One past the last parked step.
    pub t_dep: usize,
    /// Required SOE at the end of step `t_dep - 1`.
    pub soe_dep: f64,
    /// Per-step energy the fast charger can deliver, for fast sessions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_fch_max: Option<f64>,
}

impl SessionForecast {
    pub fn steps(&self) -> std::ops::Range<usize> {
        self.t_arr..self.t_dep
    }

    pub fn len(&self) -> usize {
        self.t_dep.saturating_sub(self.t_arr)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStep {
    pub t: usize,
    pub e_sch: f64,
    pub e_dch: f64,
    pub e_fch: f64,
    pub soe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSchedule {
    pub session: SessionForecast,
    pub steps: Vec<SessionStep>,
}

impl SessionSchedule {
    /// Largest gap between stored SOE and the in-session balance.
    pub fn recursion_error(&self, ev: &Ev) -> f64 {
        let mut soe = self.session.soe_arr;
        let mut worst: f64 = 0.0;
        for s in &self.steps {
            soe = soe + s.e_sch * ev.eta_sch - s.e_dch / ev.eta_dch + s.e_fch * ev.eta_fch;
            worst = worst.max((soe - s.soe).abs());
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsSchedule {
    pub cs_id: String,
    pub sessions: Vec<SessionSchedule>,
    /// Station charge per step, kWh (fast charging included).
    pub total_charge: Vec<f64>,
    pub total_discharge: Vec<f64>,
    pub total_cost: f64,
    pub cost_breakdown: CostBreakdown,
}

impl CsSchedule {
    pub fn flows(&self) -> Vec<ScheduledFlow> {
        self.sessions
            .iter()
            .flat_map(|s| {
                s.steps.iter().map(move |st| ScheduledFlow {
                    ev_id: s.session.ev_id.clone(),
                    cs_id: self.cs_id.clone(),
                    t: st.t,
                    e_sch: st.e_sch,
                    e_dch: st.e_dch,
                    e_fch: st.e_fch,
                })
            })
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvcaError {
    #[error("ev {ev_id} cannot cover its mobility needs (first violation at step {step})")]
    InfeasibleMobility { ev_id: String, step: usize },
    #[error(
        "session of {} at {} [{}, {}) cannot reach departure SOE {:.3} kWh",
        .0.ev_id, .0.cs_id, .0.t_arr, .0.t_dep, .0.soe_dep
    )]
    InfeasibleSession(Box<SessionForecast>),
    #[error("station {0} cannot serve its sessions within its capacity")]
    InfeasibleStation(String),
    #[error("joint program over all stations is infeasible")]
    InfeasibleCentral,
    #[error("unknown station {0}")]
    UnknownStation(String),
    #[error(transparent)]
    Evba(#[from] EvbaError),
    #[error(transparent)]
    Solver(#[from] LpError),
}

/// Maximal runs of consecutive steps at one station, in the order they are
/// visited. Boundary SOEs are left at zero.
pub fn session_windows(itinerary: &Itinerary) -> Vec<SessionForecast> {
    let mut out: Vec<SessionForecast> = Vec::new();
    let mut open: Option<SessionForecast> = None;
    for (t, state) in itinerary.states.iter().enumerate() {
        let here = match state {
            StepState::Parked(cs) => Some((cs.as_str(), SessionKind::Slow, None)),
            StepState::FastCharge { cs, e_fch_max } => {
                Some((cs.as_str(), SessionKind::Fast, Some(*e_fch_max)))
            }
            StepState::Driving { .. } => None,
        };
        match (&mut open, here) {
            (Some(s), Some((cs, kind, cap))) if s.cs_id == cs && s.kind == kind => {
                s.t_dep = t + 1;
                if let (Some(a), Some(b)) = (s.e_fch_max, cap) {
                    s.e_fch_max = Some(a.min(b));
                }
            }
            (_, here) => {
                if let Some(s) = open.take() {
                    out.push(s);
                }
                open = here.map(|(cs, kind, cap)| SessionForecast {
                    ev_id: itinerary.ev_id.clone(),
                    cs_id: cs.to_string(),
                    seq: out.len(),
                    kind,
                    t_arr: t,
                    soe_arr: 0.0,
                    t_dep: t + 1,
                    soe_dep: 0.0,
                    e_fch_max: cap,
                });
            }
        }
    }
    out.extend(open);
    out
}

/// `floor[t]` is the least SOE before step `t` from which charging at full
/// power in every remaining session still covers all later trips and the
/// end-of-day target. `floor` has `T + 1` entries.
pub fn mobility_floor(
    scenario: &Scenario,
    ev: &Ev,
    itinerary: &Itinerary,
) -> Result<Vec<f64>, EvcaError> {
    let horizon = itinerary.states.len();
    let mut floor = vec![0.0; horizon + 1];
    floor[horizon] = ev.soe_min.max(ev.soe_end_min);
    for t in (0..horizon).rev() {
        let lim = step_limits(scenario, ev, &itinerary.states[t]);
        let gain = lim.slow * ev.eta_sch + lim.fast * ev.eta_fch;
        floor[t] = ev.soe_min.max(floor[t + 1] - gain + lim.run / ev.eta_run);
        if floor[t + 1] > ev.soe_max + FEAS_TOL {
            return Err(EvcaError::InfeasibleMobility {
                ev_id: ev.id.clone(),
                step: t,
            });
        }
    }
    if let Some(step) = first_mobility_violation(scenario, ev, itinerary) {
        return Err(EvcaError::InfeasibleMobility {
            ev_id: ev.id.clone(),
            step,
        });
    }
    Ok(floor)
}

/// True sessions of every vehicle with boundary SOEs set by `policy`.
///
/// Under [`BoundaryPolicy::Naive`] the arrival SOE is the mobility floor
/// (the initial SOE for a session starting at step 0); the true arrival SOE
/// also depends on what earlier stations deliver, which [`run_evca`]
/// resolves.
pub fn derive_true_sessions(
    scenario: &Scenario,
    policy: BoundaryPolicy,
    opts: &CostOptions,
) -> Result<Vec<SessionForecast>, EvcaError> {
    let oracle = match policy {
        BoundaryPolicy::Oracle => Some(evba::optimize_fleet(scenario, opts)?),
        BoundaryPolicy::Naive => None,
    };
    let mut out = Vec::new();
    for ev in &scenario.evs {
        let itinerary = scenario.itinerary(&ev.id).expect("validated itinerary");
        let floor = mobility_floor(scenario, ev, itinerary)?;
        let ev_sched = oracle
            .as_ref()
            .and_then(|f| f.schedules.iter().find(|s| s.ev_id == ev.id));
        for mut s in session_windows(itinerary) {
            match ev_sched {
                Some(sched) => {
                    s.soe_arr = sched.soe_before(s.t_arr, ev);
                    s.soe_dep = sched.steps[s.t_dep - 1].soe;
                }
                None => {
                    s.soe_arr = if s.t_arr == 0 {
                        ev.soe_init
                    } else {
                        floor[s.t_arr]
                    };
                    s.soe_dep = floor[s.t_dep];
                }
            }
            out.push(s);
        }
    }
    Ok(out)
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, sigma).expect("sigma validated");
    for _ in 0..TRUNCATION_TRIES {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    mean.clamp(lo, hi)
}

/// Perturbs session forecasts with `model`, deterministically per `seed`.
///
/// Arrival and departure steps are shifted independently and clamped to the
/// horizon; sessions that collapse to zero length are dropped. The arrival
/// SOE gets truncated Gaussian noise within `[soe_min, soe_max]` and the
/// departure SOE gets the margin, capped at `soe_max`.
pub fn apply_forecast_noise(
    sessions: &[SessionForecast],
    model: &ForecastErrorModel,
    scenario: &Scenario,
    seed: u64,
) -> Vec<SessionForecast> {
    let horizon = scenario.horizon() as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<i64> = model.time_shift_probs.keys().copied().collect();
    let weights = WeightedIndex::new(model.time_shift_probs.values().copied())
        .expect("validated shift distribution");
    let mut out = Vec::with_capacity(sessions.len());
    for s in sessions {
        let d_arr = shifts[weights.sample(&mut rng)];
        let d_dep = shifts[weights.sample(&mut rng)];
        let mut f = s.clone();
        f.t_arr = (s.t_arr as i64 + d_arr).clamp(0, horizon - 1) as usize;
        f.t_dep = (s.t_dep as i64 + d_dep).clamp(1, horizon) as usize;
        let Some(ev) = scenario.ev(&s.ev_id) else {
            continue;
        };
        if model.soe_sigma > 0.0 {
            f.soe_arr =
                truncated_normal(&mut rng, s.soe_arr, model.soe_sigma, ev.soe_min, ev.soe_max);
        }
        if model.dep_soe_margin != 0.0 {
            f.soe_dep = (s.soe_dep + model.dep_soe_margin).min(ev.soe_max);
        }
        if f.t_arr >= f.t_dep {
            log::warn!(
                "forecast session of {} at {} collapsed to [{}, {}), dropped",
                f.ev_id,
                f.cs_id,
                f.t_arr,
                f.t_dep
            );
            continue;
        }
        out.push(f);
    }
    out
}

/// Per-step energy bound the station plans with for `session`.
fn session_limit(
    scenario: &Scenario,
    ev: &Ev,
    cs: &ChargingStation,
    s: &SessionForecast,
    obc_known: bool,
) -> f64 {
    let dt = scenario.dt();
    match s.kind {
        SessionKind::Slow => {
            let power = if obc_known {
                effective_power_limit(ev, cs)
            } else {
                cs.cp_limit
            };
            power.min(cs.capacity()) * dt
        }
        SessionKind::Fast => {
            let cap = cs.cp_limit.min(cs.capacity()) * dt;
            s.e_fch_max.map_or(cap, |m| m.min(cap))
        }
    }
}

/// Highest SOE the session can reach by its departure.
fn reachable_soe(ev: &Ev, s: &SessionForecast, limit: f64) -> f64 {
    let eta = match s.kind {
        SessionKind::Slow => ev.eta_sch,
        SessionKind::Fast => ev.eta_fch,
    };
    (s.soe_arr + s.len() as f64 * limit * eta).min(ev.soe_max)
}

/// Starting point of a session's SOE chain: `var + offset`, or just
/// `offset` when fixed.
#[derive(Debug, Clone, Copy)]
struct Anchor {
    var: Option<usize>,
    offset: f64,
}

#[derive(Debug, Clone)]
struct SessionVars {
    t_arr: usize,
    limit: f64,
    sch: Vec<Option<usize>>,
    dch: Vec<Option<usize>>,
    fch: Vec<Option<usize>>,
    soe: Vec<usize>,
}

impl SessionVars {
    fn at(&self, t: usize) -> Option<usize> {
        t.checked_sub(self.t_arr).filter(|&k| k < self.soe.len())
    }
}

#[allow(clippy::too_many_arguments)]
fn add_session(
    lp: &mut LinearProgram,
    scenario: &Scenario,
    ev: &Ev,
    cs: &ChargingStation,
    kind: SessionKind,
    steps: std::ops::Range<usize>,
    limit: f64,
    start: Anchor,
    dep_floor: f64,
    opts: &CostOptions,
) -> SessionVars {
    let prices = &scenario.price_curve.prices;
    let mut v = SessionVars {
        t_arr: steps.start,
        limit,
        sch: Vec::new(),
        dch: Vec::new(),
        fch: Vec::new(),
        soe: Vec::new(),
    };
    let last = steps.end - 1;
    for t in steps {
        let (mut sch, mut dch, mut fch) = (None, None, None);
        let mut row = Vec::new();
        match kind {
            SessionKind::Slow => {
                let a = lp.add_var(0.0, limit, charge_cost_per_kwh(prices[t], cs));
                let b = lp.add_var(0.0, limit, discharge_cost_per_kwh(prices[t], cs, ev, opts));
                row.push((a, -ev.eta_sch));
                row.push((b, 1.0 / ev.eta_dch));
                sch = Some(a);
                dch = Some(b);
            }
            SessionKind::Fast => {
                let a = lp.add_var(0.0, limit, charge_cost_per_kwh(prices[t], cs));
                row.push((a, -ev.eta_fch));
                fch = Some(a);
            }
        }
        let lo = if t == last {
            ev.soe_min.max(dep_floor)
        } else {
            ev.soe_min
        };
        let soe = lp.add_var(lo, ev.soe_max, 0.0);
        row.push((soe, 1.0));
        let rhs = match v.soe.last() {
            Some(&prev) => {
                row.push((prev, -1.0));
                0.0
            }
            None => {
                if let Some(j) = start.var {
                    row.push((j, -1.0));
                }
                start.offset
            }
        };
        lp.add_constraint(row, Relation::Eq, rhs);
        v.sch.push(sch);
        v.dch.push(dch);
        v.fch.push(fch);
        v.soe.push(soe);
    }
    v
}

/// Caps each station's per-step exchange wherever the sessions present could
/// jointly exceed it.
fn add_coupling(
    lp: &mut LinearProgram,
    scenario: &Scenario,
    cs: &ChargingStation,
    sessions: &[&SessionVars],
) {
    let cap = cs.capacity() * scenario.dt();
    for t in 0..scenario.horizon() {
        let mut charge = Vec::new();
        let mut discharge = Vec::new();
        let mut demand = 0.0;
        for v in sessions {
            let Some(k) = v.at(t) else { continue };
            demand += v.limit;
            for j in [v.sch[k], v.fch[k]].into_iter().flatten() {
                charge.push((j, 1.0));
            }
            if let Some(j) = v.dch[k] {
                discharge.push((j, 1.0));
            }
        }
        if demand > cap + FEAS_TOL {
            lp.add_constraint(charge, Relation::Le, cap);
            if !discharge.is_empty() {
                lp.add_constraint(discharge, Relation::Le, cap);
            }
        }
    }
}

fn read_steps(v: &SessionVars, values: &[f64]) -> Vec<SessionStep> {
    let get = |j: Option<usize>| j.map_or(0.0, |j| values[j]);
    (0..v.soe.len())
        .map(|k| SessionStep {
            t: v.t_arr + k,
            e_sch: get(v.sch[k]),
            e_dch: get(v.dch[k]),
            e_fch: get(v.fch[k]),
            soe: values[v.soe[k]],
        })
        .collect()
}

/// Schedules one station over its forecast sessions.
///
/// The station plans with `cp_limit` per session, or with
/// `min(cp_limit, obc_limit)` when `obc_known` is set, and minimises the
/// same per-kWh prices and fees the vehicles would pay.
pub fn optimize_cs(
    station: &ChargingStation,
    sessions: &[SessionForecast],
    scenario: &Scenario,
    obc_known: bool,
    opts: &CostOptions,
) -> Result<CsSchedule, EvcaError> {
    let horizon = scenario.horizon();
    let mut lp = LinearProgram::new();
    let mut vars = Vec::with_capacity(sessions.len());
    for s in sessions {
        debug_assert_eq!(s.cs_id, station.id);
        let ev = scenario
            .ev(&s.ev_id)
            .ok_or_else(|| EvcaError::Evba(EvbaError::UnknownEv(s.ev_id.clone())))?;
        let limit = session_limit(scenario, ev, station, s, obc_known);
        if s.soe_dep > ev.soe_max + FEAS_TOL || reachable_soe(ev, s, limit) < s.soe_dep - FEAS_TOL {
            return Err(EvcaError::InfeasibleSession(Box::new(s.clone())));
        }
        let start = Anchor {
            var: None,
            offset: s.soe_arr,
        };
        vars.push(add_session(
            &mut lp,
            scenario,
            ev,
            station,
            s.kind,
            s.steps(),
            limit,
            start,
            s.soe_dep,
            opts,
        ));
    }
    let refs: Vec<&SessionVars> = vars.iter().collect();
    add_coupling(&mut lp, scenario, station, &refs);

    let sol = solve(&lp)?;
    if sol.status == Status::Infeasible {
        return Err(EvcaError::InfeasibleStation(station.id.clone()));
    }
    let mut total_charge = vec![0.0; horizon];
    let mut total_discharge = vec![0.0; horizon];
    let sessions: Vec<SessionSchedule> = sessions
        .iter()
        .zip(&vars)
        .map(|(s, v)| {
            let steps = read_steps(v, &sol.values);
            for st in &steps {
                total_charge[st.t] += st.e_sch + st.e_fch;
                total_discharge[st.t] += st.e_dch;
            }
            SessionSchedule {
                session: s.clone(),
                steps,
            }
        })
        .collect();
    let mut out = CsSchedule {
        cs_id: station.id.clone(),
        sessions,
        total_charge,
        total_discharge,
        total_cost: sol.objective_value,
        cost_breakdown: CostBreakdown::default(),
    };
    out.cost_breakdown = plan_costs(&out.flows(), scenario, opts);
    Ok(out)
}

/// Groups sessions by station and schedules every station independently.
/// Stations without sessions get empty schedules.
pub fn optimize_stations(
    sessions: &[SessionForecast],
    scenario: &Scenario,
    obc_known: bool,
    opts: &CostOptions,
) -> Result<Vec<CsSchedule>, EvcaError> {
    if let Some(s) = sessions
        .iter()
        .find(|s| scenario.station(&s.cs_id).is_none())
    {
        return Err(EvcaError::UnknownStation(s.cs_id.clone()));
    }
    scenario
        .stations
        .par_iter()
        .map(|cs| {
            let mine: Vec<SessionForecast> = sessions
                .iter()
                .filter(|s| s.cs_id == cs.id)
                .cloned()
                .collect();
            optimize_cs(cs, &mine, scenario, obc_known, opts)
        })
        .collect()
}

/// Omniscient joint program over all stations: every station's sessions,
/// with each vehicle's departure SOE from one station carried through its
/// trips into the arrival SOE at the next.
pub fn optimize_central(
    scenario: &Scenario,
    opts: &CostOptions,
) -> Result<Vec<EvSchedule>, EvcaError> {
    let horizon = scenario.horizon();
    let mut lp = LinearProgram::new();
    let mut per_ev: Vec<Vec<SessionVars>> = Vec::with_capacity(scenario.evs.len());
    let mut per_station: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();

    for (i, ev) in scenario.evs.iter().enumerate() {
        let itinerary = scenario.itinerary(&ev.id).expect("validated itinerary");
        if let Some(step) = first_mobility_violation(scenario, ev, itinerary) {
            return Err(EvcaError::InfeasibleMobility {
                ev_id: ev.id.clone(),
                step,
            });
        }
        let windows = session_windows(itinerary);
        let mut chain = Vec::with_capacity(windows.len());
        let mut anchor = Anchor {
            var: None,
            offset: ev.soe_init,
        };
        let mut t = 0;
        for w in &windows {
            let run: f64 = itinerary.states[t..w.t_arr]
                .iter()
                .map(|s| s.driving_energy() / ev.eta_run)
                .sum();
            anchor.offset -= run;
            if let Some(j) = anchor.var {
                if run > 0.0 {
                    lp.add_constraint(vec![(j, 1.0)], Relation::Ge, ev.soe_min + run);
                }
            }
            let cs = scenario.station(&w.cs_id).expect("validated station");
            let limit = session_limit(scenario, ev, cs, w, true);
            let is_last = w.t_dep == horizon;
            let dep_floor = if is_last { ev.soe_end_min } else { ev.soe_min };
            let v = add_session(
                &mut lp,
                scenario,
                ev,
                cs,
                w.kind,
                w.steps(),
                limit,
                anchor,
                dep_floor,
                opts,
            );
            anchor = Anchor {
                var: v.soe.last().copied(),
                offset: 0.0,
            };
            per_station
                .entry(cs.id.as_str())
                .or_default()
                .push((i, chain.len()));
            chain.push(v);
            t = w.t_dep;
        }
        let run: f64 = itinerary.states[t..]
            .iter()
            .map(|s| s.driving_energy() / ev.eta_run)
            .sum();
        if t < horizon {
            // the day ends on the road
            let need = ev.soe_min.max(ev.soe_end_min) + run;
            if let Some(j) = anchor.var {
                lp.add_constraint(vec![(j, 1.0)], Relation::Ge, need);
            }
        }
        per_ev.push(chain);
    }

    for (cs_id, members) in &per_station {
        let cs = scenario.station(cs_id).expect("validated station");
        let refs: Vec<&SessionVars> = members.iter().map(|&(i, k)| &per_ev[i][k]).collect();
        add_coupling(&mut lp, scenario, cs, &refs);
    }

    let sol = solve(&lp)?;
    if sol.status == Status::Infeasible {
        return Err(EvcaError::InfeasibleCentral);
    }

    let mut out = Vec::with_capacity(scenario.evs.len());
    for (ev, chain) in scenario.evs.iter().zip(&per_ev) {
        let itinerary = scenario.itinerary(&ev.id).expect("validated itinerary");
        let mut steps: Vec<EvStep> = itinerary
            .states
            .iter()
            .enumerate()
            .map(|(t, s)| EvStep {
                t,
                station: s.station().map(str::to_string),
                e_sch: 0.0,
                e_dch: 0.0,
                e_fch: 0.0,
                soe: 0.0,
            })
            .collect();
        for v in chain {
            for st in read_steps(v, &sol.values) {
                let e = &mut steps[st.t];
                e.e_sch = st.e_sch;
                e.e_dch = st.e_dch;
                e.e_fch = st.e_fch;
            }
        }
        let mut soe = ev.soe_init;
        for (e, state) in steps.iter_mut().zip(&itinerary.states) {
            soe = soe + e.e_sch * ev.eta_sch
                - e.e_dch / ev.eta_dch
                - state.driving_energy() / ev.eta_run
                + e.e_fch * ev.eta_fch;
            e.soe = soe;
        }
        let mut sched = EvSchedule {
            ev_id: ev.id.clone(),
            steps,
            total_cost: 0.0,
            cost_breakdown: CostBreakdown::default(),
        };
        sched.cost_breakdown = plan_costs(&sched.flows(), scenario, opts);
        sched.total_cost = sched.cost_breakdown.total_ev_perspective_cost;
        out.push(sched);
    }
    Ok(out)
}

/// Settings of one station-based planning run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvcaConfig {
    pub policy: BoundaryPolicy,
    pub obc_known: bool,
    /// Apply the scenario's forecast error model.
    pub noise: bool,
    pub seed: u64,
}

/// Forecasts the stations planned with, and their schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvcaPlan {
    /// Sessions with true boundaries.
    pub true_sessions: Vec<SessionForecast>,
    /// Sessions the stations actually planned with.
    pub forecasts: Vec<SessionForecast>,
    pub stations: Vec<CsSchedule>,
}

impl EvcaPlan {
    pub fn flows(&self) -> Vec<ScheduledFlow> {
        self.stations.iter().flat_map(|c| c.flows()).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.stations.iter().map(|c| c.total_cost).sum()
    }
}

/// Replaces each arrival SOE by the SOE the vehicle really arrives with,
/// given what earlier stations deliver. Sessions are settled in the order
/// each vehicle visits them, so a session is only re-planned once all of its
/// predecessors are final.
fn resolve_arrivals(
    mut sessions: Vec<SessionForecast>,
    scenario: &Scenario,
    obc_known: bool,
    opts: &CostOptions,
) -> Result<(Vec<SessionForecast>, Vec<CsSchedule>), EvcaError> {
    let last_seq = sessions.iter().map(|s| s.seq).max().unwrap_or(0);
    let mut stations = optimize_stations(&sessions, scenario, obc_known, opts)?;
    for round in 0.. {
        let flows: Vec<ScheduledFlow> = stations.iter().flat_map(|c| c.flows()).collect();
        let delivery = simulate_delivery(&flows, scenario);
        let mut changed = false;
        for s in sessions
            .iter_mut()
            .filter(|s| s.t_arr > 0 && s.seq <= round)
        {
            let d = delivery.ev(&s.ev_id).expect("delivery for every ev");
            let truth = d.steps[s.t_arr - 1].soe;
            if (truth - s.soe_arr).abs() > FEAS_TOL {
                s.soe_arr = truth;
                changed = true;
            }
        }
        if !changed && round >= last_seq {
            break;
        }
        if round >= last_seq + MAX_RESOLVE_ROUNDS {
            log::warn!("arrival SOEs did not settle after {round} rounds");
            break;
        }
        if changed {
            relax_departures(&mut sessions, scenario, obc_known);
            stations = optimize_stations(&sessions, scenario, obc_known, opts)?;
        }
    }
    Ok((sessions, stations))
}

/// Caps unreachable departure targets at what the session can reach.
fn relax_departures(sessions: &mut [SessionForecast], scenario: &Scenario, obc_known: bool) {
    for s in sessions {
        let (Some(ev), Some(cs)) = (scenario.ev(&s.ev_id), scenario.station(&s.cs_id)) else {
            continue;
        };
        let reach = reachable_soe(ev, s, session_limit(scenario, ev, cs, s, obc_known));
        if s.soe_dep > reach {
            log::debug!(
                "forecast departure SOE {:.3} of {} at {} unreachable, planning for {:.3}",
                s.soe_dep,
                s.ev_id,
                s.cs_id,
                reach
            );
            s.soe_dep = reach;
        }
    }
}

/// Station-based planning pipeline: true sessions under the boundary policy,
/// arrival SOEs resolved against delivery, optional forecast noise, then one
/// independent program per station.
pub fn run_evca(
    scenario: &Scenario,
    config: &EvcaConfig,
    opts: &CostOptions,
) -> Result<EvcaPlan, EvcaError> {
    let sessions = derive_true_sessions(scenario, config.policy, opts)?;
    let (true_sessions, stations) = resolve_arrivals(sessions, scenario, config.obc_known, opts)?;
    if !config.noise || scenario.forecast_error.is_zero() {
        return Ok(EvcaPlan {
            forecasts: true_sessions.clone(),
            true_sessions,
            stations,
        });
    }
    let mut forecasts = apply_forecast_noise(
        &true_sessions,
        &scenario.forecast_error,
        scenario,
        config.seed,
    );
    relax_departures(&mut forecasts, scenario, config.obc_known);
    let stations = optimize_stations(&forecasts, scenario, config.obc_known, opts)?;
    Ok(EvcaPlan {
        true_sessions,
        forecasts,
        stations,
    })
}
