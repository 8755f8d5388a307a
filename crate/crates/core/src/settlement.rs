//! Physical delivery of schedules and their cost settlement.
//!
//! [`simulate_delivery`] replays scheduled energy flows against the true
//! itinerary: an absent vehicle delivers nothing, power is capped by
//! `min(OBC, CP)`, and the battery window caps what can be charged or
//! discharged. [`settle`] then prices the delivered energy, the fees and the
//! gap between scheduled and delivered energy.

use serde::{Deserialize, Serialize};

use crate::scenario::{effective_power_limit, ChargingStation, Ev, Scenario, StepState};

/// Scheduled quantities that are within this margin of what is physically
/// possible are delivered in full.
pub const DELIVERY_SNAP_TOL: f64 = 1e-7;

const DEFICIT_TOL: f64 = 1e-9;

/// Switches that change how energy flows are charged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostOptions {
    /// V2G discharge pays the station's grid fee, like consumption does.
    pub discharge_grid_fee: bool,
}

/// Cost of buying one kWh at a slow or fast station: price plus fees.
pub fn charge_cost_per_kwh(price: f64, station: &ChargingStation) -> f64 {
    price + station.grid_fee + station.utilization_fee
}

/// Cost (negative: revenue) of discharging one kWh to the grid.
pub fn discharge_cost_per_kwh(
    price: f64,
    station: &ChargingStation,
    ev: &Ev,
    opts: &CostOptions,
) -> f64 {
    let grid_fee = if opts.discharge_grid_fee {
        station.grid_fee
    } else {
        0.0
    };
    -price + grid_fee + station.utilization_fee + ev.degradation_fee
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub energy_cost: f64,
    pub grid_fees: f64,
    pub utilization_fees: f64,
    pub degradation_cost: f64,
    pub imbalance_cost: f64,
    pub mobility_deficit: f64,
    /// Energy, grid fees, degradation and imbalance. Utilization fees are a
    /// transfer between vehicle and station owners and are left out.
    pub total_system_cost: f64,
    /// `total_system_cost` plus utilization fees.
    pub total_ev_perspective_cost: f64,
}

impl CostBreakdown {
    pub const FIELDS: [&'static str; 8] = [
        "energy_cost",
        "grid_fees",
        "utilization_fees",
        "degradation_cost",
        "imbalance_cost",
        "mobility_deficit",
        "total_system_cost",
        "total_ev_perspective_cost",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.energy_cost,
            self.grid_fees,
            self.utilization_fees,
            self.degradation_cost,
            self.imbalance_cost,
            self.mobility_deficit,
            self.total_system_cost,
            self.total_ev_perspective_cost,
        ]
    }

    fn finish(mut self) -> Self {
        self.total_system_cost =
            self.energy_cost + self.grid_fees + self.degradation_cost + self.imbalance_cost;
        self.total_ev_perspective_cost = self.total_system_cost + self.utilization_fees;
        self
    }

    pub fn combine(items: impl IntoIterator<Item = CostBreakdown>) -> Self {
        let mut out = CostBreakdown::default();
        for c in items {
            out.energy_cost += c.energy_cost;
            out.grid_fees += c.grid_fees;
            out.utilization_fees += c.utilization_fees;
            out.degradation_cost += c.degradation_cost;
            out.imbalance_cost += c.imbalance_cost;
            out.mobility_deficit += c.mobility_deficit;
        }
        out.finish()
    }

    /// Accumulates the price and fee components of one vehicle-step.
    fn add_flows(
        &mut self,
        price: f64,
        station: &ChargingStation,
        ev: &Ev,
        opts: &CostOptions,
        charge: f64,
        discharge: f64,
    ) {
        self.energy_cost += (charge - discharge) * price;
        self.grid_fees += charge * station.grid_fee;
        if opts.discharge_grid_fee {
            self.grid_fees += discharge * station.grid_fee;
        }
        self.utilization_fees += (charge + discharge) * station.utilization_fee;
        self.degradation_cost += discharge * ev.degradation_fee;
    }
}

/// Energy one party plans to move for one vehicle at one station in one step.
///
/// Slow-charging sessions use `e_sch`/`e_dch`; fast-charging stops use
/// `e_fch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledFlow {
    pub ev_id: String,
    pub cs_id: String,
    pub t: usize,
    pub e_sch: f64,
    pub e_dch: f64,
    pub e_fch: f64,
}

impl ScheduledFlow {
    pub fn net(&self) -> f64 {
        self.e_sch + self.e_fch - self.e_dch
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeliveryStep {
    pub t: usize,
    /// Station the vehicle truly occupies.
    pub station: Option<String>,
    pub scheduled_sch: f64,
    pub scheduled_dch: f64,
    pub scheduled_fch: f64,
    pub delivered_sch: f64,
    pub delivered_dch: f64,
    pub delivered_fch: f64,
    /// Scheduled net grid draw (charge minus discharge), kWh.
    pub scheduled: f64,
    pub delivered: f64,
    /// `scheduled - delivered`.
    pub imbalance: f64,
    /// True state of energy at the end of the step.
    pub soe: f64,
    /// Driving energy that could not be covered without dropping below
    /// `soe_min`.
    pub deficit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvDelivery {
    pub ev_id: String,
    pub steps: Vec<DeliveryStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryResult {
    pub evs: Vec<EvDelivery>,
}

impl DeliveryResult {
    pub fn ev(&self, id: &str) -> Option<&EvDelivery> {
        self.evs.iter().find(|e| e.ev_id == id)
    }

    pub fn total_abs_imbalance(&self) -> f64 {
        self.evs
            .iter()
            .flat_map(|e| &e.steps)
            .map(|s| s.imbalance.abs())
            .sum()
    }

    pub fn total_discharge(&self) -> f64 {
        self.evs
            .iter()
            .flat_map(|e| &e.steps)
            .map(|s| s.delivered_dch)
            .sum()
    }

    /// Largest deviation between the stored true SOE and a recomputation of
    /// the storage balance from delivered quantities.
    pub fn conservation_error(&self, scenario: &Scenario) -> f64 {
        let mut worst: f64 = 0.0;
        for d in &self.evs {
            let (Some(ev), Some(it)) = (scenario.ev(&d.ev_id), scenario.itinerary(&d.ev_id)) else {
                continue;
            };
            let mut soe = ev.soe_init;
            for (s, state) in d.steps.iter().zip(&it.states) {
                soe = soe + s.delivered_sch * ev.eta_sch
                    - s.delivered_dch / ev.eta_dch
                    - state.driving_energy() / ev.eta_run
                    + s.delivered_fch * ev.eta_fch
                    + s.deficit;
                worst = worst.max((soe - s.soe).abs());
            }
        }
        worst
    }
}

/// Delivers `req` when it is within [`DELIVERY_SNAP_TOL`] of `cap`,
/// otherwise caps it.
fn deliverable(req: f64, cap: f64) -> f64 {
    if req <= cap + DELIVERY_SNAP_TOL {
        req
    } else {
        cap.max(0.0)
    }
}

/// Replays `flows` against the true itinerary of every vehicle in
/// `scenario`. Vehicles without flows are simulated with zero schedules.
pub fn simulate_delivery(flows: &[ScheduledFlow], scenario: &Scenario) -> DeliveryResult {
    let horizon = scenario.horizon();
    let dt = scenario.dt();
    let mut evs = Vec::with_capacity(scenario.evs.len());
    for ev in &scenario.evs {
        let Some(itinerary) = scenario.itinerary(&ev.id) else {
            continue;
        };
        let mut per_step: Vec<Vec<&ScheduledFlow>> = vec![Vec::new(); horizon];
        for f in flows.iter().filter(|f| f.ev_id == ev.id && f.t < horizon) {
            per_step[f.t].push(f);
        }

        let mut soe = ev.soe_init;
        let mut steps = Vec::with_capacity(horizon);
        for (t, state) in itinerary.states.iter().enumerate() {
            let planned = &per_step[t];
            let mut step = DeliveryStep {
                t,
                station: state.station().map(str::to_string),
                ..Default::default()
            };
            for f in planned {
                step.scheduled_sch += f.e_sch;
                step.scheduled_dch += f.e_dch;
                step.scheduled_fch += f.e_fch;
            }
            let sum_at = |cs: &str, pick: fn(&ScheduledFlow) -> f64| -> f64 {
                planned
                    .iter()
                    .filter(|f| f.cs_id == cs)
                    .map(|f| pick(f))
                    .sum()
            };

            match state {
                StepState::Parked(cs_id) => {
                    let cs = scenario.station(cs_id).expect("validated station");
                    let limit = effective_power_limit(ev, cs).min(cs.capacity()) * dt;
                    let want_ch = sum_at(cs_id, |f| f.e_sch);
                    let want_dch = sum_at(cs_id, |f| f.e_dch);
                    let ch = deliverable(want_ch, limit.min((ev.soe_max - soe) / ev.eta_sch));
                    soe += ch * ev.eta_sch;
                    let dch = deliverable(want_dch, limit.min((soe - ev.soe_min) * ev.eta_dch));
                    soe -= dch / ev.eta_dch;
                    step.delivered_sch = ch;
                    step.delivered_dch = dch;
                }
                StepState::FastCharge { cs, e_fch_max } => {
                    let station = scenario.station(cs).expect("validated station");
                    let cap = e_fch_max.min(station.cp_limit.min(station.capacity()) * dt);
                    let want = sum_at(cs, |f| f.e_fch);
                    let fch = deliverable(want, cap.min((ev.soe_max - soe) / ev.eta_fch));
                    soe += fch * ev.eta_fch;
                    step.delivered_fch = fch;
                }
                StepState::Driving { e_run } => {
                    soe -= e_run / ev.eta_run;
                    if soe < ev.soe_min - DEFICIT_TOL {
                        step.deficit = ev.soe_min - soe;
                        soe = ev.soe_min;
                    }
                }
            }
            step.scheduled = step.scheduled_sch + step.scheduled_fch - step.scheduled_dch;
            step.delivered = step.delivered_sch + step.delivered_fch - step.delivered_dch;
            step.imbalance = step.scheduled - step.delivered;
            step.soe = soe;
            steps.push(step);
        }
        evs.push(EvDelivery {
            ev_id: ev.id.clone(),
            steps,
        });
    }
    DeliveryResult { evs }
}

/// Extra cost of an imbalance of `imbalance` kWh at day-ahead `price`.
///
/// A positive imbalance (less delivered than scheduled) is settled at
/// `price * short_factor`, so beyond the day-ahead price it costs
/// `price * (short_factor - 1)`; a negative one is refunded at
/// `price * long_factor` and costs `price * (1 - long_factor)`.
pub fn imbalance_penalty(imbalance: f64, price: f64, short_factor: f64, long_factor: f64) -> f64 {
    imbalance.max(0.0) * price * (short_factor - 1.0)
        + (-imbalance).max(0.0) * price * (1.0 - long_factor)
}

/// Prices a delivery: energy at day-ahead prices, fees at the station the
/// vehicle truly occupied, and imbalances with the dual-price penalty.
pub fn settle(delivery: &DeliveryResult, scenario: &Scenario, opts: &CostOptions) -> CostBreakdown {
    let pc = &scenario.price_curve;
    let mut out = CostBreakdown::default();
    for d in &delivery.evs {
        let ev = scenario.ev(&d.ev_id).expect("delivery for known ev");
        for s in &d.steps {
            let price = pc.prices[s.t];
            if let Some(cs) = s.station.as_deref().and_then(|id| scenario.station(id)) {
                out.add_flows(
                    price,
                    cs,
                    ev,
                    opts,
                    s.delivered_sch + s.delivered_fch,
                    s.delivered_dch,
                );
            }
            out.imbalance_cost += imbalance_penalty(
                s.imbalance,
                price,
                pc.penalty_short_factor,
                pc.penalty_long_factor,
            );
            out.mobility_deficit += s.deficit;
        }
    }
    out.finish()
}

/// Cost of executing `flows` exactly as scheduled, without imbalance.
pub fn plan_costs(
    flows: &[ScheduledFlow],
    scenario: &Scenario,
    opts: &CostOptions,
) -> CostBreakdown {
    let mut out = CostBreakdown::default();
    for f in flows {
        let (Some(ev), Some(cs)) = (scenario.ev(&f.ev_id), scenario.station(&f.cs_id)) else {
            continue;
        };
        let price = scenario.price_curve.prices[f.t];
        out.add_flows(price, cs, ev, opts, f.e_sch + f.e_fch, f.e_dch);
    }
    out.finish()
}
