//! Scenario data model: vehicles, charging stations, itineraries and prices.
//!
//! A [`Scenario`] is plain data. [`Scenario::validate`] enforces every
//! structural invariant the optimisers rely on, and [`load_scenario`] only
//! ever hands out validated values.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evca::ForecastErrorModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon_steps: usize,
    pub step_hours: f64,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            horizon_steps: 24,
            step_hours: 1.0,
        }
    }
}

/// An electric vehicle: battery window, on-board charger and efficiencies.
///
/// Energies are kWh, `obc_limit` is kW, `degradation_fee` is currency per
/// kWh discharged to the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ev {
    pub id: String,
    pub capacity: f64,
    pub soe_init: f64,
    pub soe_min: f64,
    pub soe_max: f64,
    /// Required state of energy at the end of the horizon.
    pub soe_end_min: f64,
    pub obc_limit: f64,
    pub eta_sch: f64,
    pub eta_dch: f64,
    pub eta_run: f64,
    pub eta_fch: f64,
    pub degradation_fee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargingStation {
    pub id: String,
    /// Per charging point, kW.
    pub cp_limit: f64,
    pub num_cps: usize,
    pub utilization_fee: f64,
    pub grid_fee: f64,
    pub is_fast: bool,
    /// Optional connection limit for the whole site, kW. Defaults to
    /// `num_cps * cp_limit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_limit: Option<f64>,
}

impl ChargingStation {
    /// Total power the site can exchange in one step, kW.
    pub fn capacity(&self) -> f64 {
        let cps = self.num_cps as f64 * self.cp_limit;
        self.site_limit.map_or(cps, |s| s.min(cps))
    }
}

/// Where a vehicle is during one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StepState {
    Parked(String),
    Driving { e_run: f64 },
    FastCharge { cs: String, e_fch_max: f64 },
}

impl StepState {
    /// Station occupied during this step, if any.
    pub fn station(&self) -> Option<&str> {
        match self {
            StepState::Parked(cs) => Some(cs),
            StepState::FastCharge { cs, .. } => Some(cs),
            StepState::Driving { .. } => None,
        }
    }

    pub fn driving_energy(&self) -> f64 {
        match self {
            StepState::Driving { e_run } => *e_run,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Itinerary {
    pub ev_id: String,
    pub states: Vec<StepState>,
}

/// Day-ahead prices (currency per kWh) and dual imbalance price factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceCurve {
    pub prices: Vec<f64>,
    pub penalty_short_factor: f64,
    pub penalty_long_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub time_grid: TimeGrid,
    pub evs: Vec<Ev>,
    pub stations: Vec<ChargingStation>,
    pub itineraries: Vec<Itinerary>,
    #[serde(rename = "prices")]
    pub price_curve: PriceCurve,
    pub forecast_error: ForecastErrorModel,
    pub rng_seed: u64,
}

/// Maximum exchange power of `ev` at `station`: the smaller of the on-board
/// charger and the charging point.
pub fn effective_power_limit(ev: &Ev, station: &ChargingStation) -> f64 {
    ev.obc_limit.min(station.cp_limit)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("horizon_steps must be at least 1")]
    EmptyHorizon,
    #[error("step_hours must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate ev id {0}")]
    DuplicateEv(String),
    #[error("duplicate station id {0}")]
    DuplicateStation(String),
    #[error("ev {0}: require 0 <= soe_min <= soe_init <= soe_max <= capacity")]
    SoeOrdering(String),
    #[error("ev {0}: require 0 <= soe_end_min <= soe_max")]
    SoeEndMin(String),
    #[error("ev {0}: obc_limit must be positive")]
    ObcLimit(String),
    #[error("ev {ev}: efficiency {name} must lie in (0, 1]")]
    Efficiency { ev: String, name: &'static str },
    #[error("{owner}: fee {name} must be non-negative")]
    NegativeFee { owner: String, name: &'static str },
    #[error("station {0}: cp_limit must be positive")]
    CpLimit(String),
    #[error("station {0}: num_cps must be at least 1")]
    NumCps(String),
    #[error("station {0}: site_limit must be positive")]
    SiteLimit(String),
    #[error("ev {0} has no itinerary")]
    MissingItinerary(String),
    #[error("ev {0} has more than one itinerary")]
    DuplicateItinerary(String),
    #[error("itinerary references unknown ev {0}")]
    UnknownEv(String),
    #[error("ev {ev}: states length ≠ horizon ({got} vs {expected})")]
    StatesLength {
        ev: String,
        got: usize,
        expected: usize,
    },
    #[error("ev {ev}, step {t}: e_run must be non-negative")]
    NegativeRun { ev: String, t: usize },
    #[error("ev {ev}, step {t}: e_fch_max must be non-negative")]
    NegativeFastCharge { ev: String, t: usize },
    #[error("ev {ev}, step {t}: unknown station {cs}")]
    UnknownStation { ev: String, t: usize, cs: String },
    #[error("ev {ev}, step {t}: fast charge at non-fast station {cs}")]
    NotFastStation { ev: String, t: usize, cs: String },
    #[error("station {cs}, step {t}: CP capacity exceeded ({parked} vehicles, {num_cps} points)")]
    CpCapacityExceeded {
        cs: String,
        t: usize,
        parked: usize,
        num_cps: usize,
    },
    #[error("price curve length {got} ≠ horizon {expected}")]
    PriceLength { got: usize, expected: usize },
    #[error("penalty factors must be positive")]
    PenaltyFactor,
    #[error("forecast error model: {0}")]
    ForecastModel(String),
}

/// Non-fatal findings from [`Scenario::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationWarning {
    /// Price plus fees is negative, so charging and discharging in the same
    /// step is no longer strictly dominated.
    NegativeEffectivePrice { t: usize, cs: String, price: f64 },
}

impl fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationWarning::NegativeEffectivePrice { t, cs, price } => write!(
                f,
                "effective buy price {price} at step {t}, station {cs} is negative; \
                 simultaneous charge and discharge may occur"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}, field `{field}`: {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Validation(#[from] ValidationError),
}

fn check_finite(name: &str, values: &[f64]) -> Result<(), ValidationError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ValidationError::NonFinite(name.to_string()))
    }
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.time_grid.horizon_steps
    }

    pub fn dt(&self) -> f64 {
        self.time_grid.step_hours
    }

    pub fn ev(&self, id: &str) -> Option<&Ev> {
        self.evs.iter().find(|e| e.id == id)
    }

    pub fn station(&self, id: &str) -> Option<&ChargingStation> {
        self.stations.iter().find(|s| s.id == id)
    }

    pub fn itinerary(&self, ev_id: &str) -> Option<&Itinerary> {
        self.itineraries.iter().find(|i| i.ev_id == ev_id)
    }

    /// Checks every invariant; returns warnings that do not make the
    /// scenario unusable.
    pub fn validate(&self) -> Result<Vec<ValidationWarning>, ValidationError> {
        let horizon = self.time_grid.horizon_steps;
        if horizon == 0 {
            return Err(ValidationError::EmptyHorizon);
        }
        check_finite("time_grid.step_hours", &[self.time_grid.step_hours])?;
        if self.time_grid.step_hours <= 0.0 {
            return Err(ValidationError::NonPositiveStep(self.time_grid.step_hours));
        }

        let mut ev_ids = HashSet::new();
        for ev in &self.evs {
            if !ev_ids.insert(ev.id.as_str()) {
                return Err(ValidationError::DuplicateEv(ev.id.clone()));
            }
            check_finite(
                &format!("ev {}", ev.id),
                &[
                    ev.capacity,
                    ev.soe_init,
                    ev.soe_min,
                    ev.soe_max,
                    ev.soe_end_min,
                    ev.obc_limit,
                    ev.eta_sch,
                    ev.eta_dch,
                    ev.eta_run,
                    ev.eta_fch,
                    ev.degradation_fee,
                ],
            )?;
            let ordered = 0.0 <= ev.soe_min
                && ev.soe_min <= ev.soe_init
                && ev.soe_init <= ev.soe_max
                && ev.soe_max <= ev.capacity;
            if !ordered {
                return Err(ValidationError::SoeOrdering(ev.id.clone()));
            }
            if !(0.0 <= ev.soe_end_min && ev.soe_end_min <= ev.soe_max) {
                return Err(ValidationError::SoeEndMin(ev.id.clone()));
            }
            if ev.obc_limit <= 0.0 {
                return Err(ValidationError::ObcLimit(ev.id.clone()));
            }
            for (name, eta) in [
                ("eta_sch", ev.eta_sch),
                ("eta_dch", ev.eta_dch),
                ("eta_run", ev.eta_run),
                ("eta_fch", ev.eta_fch),
            ] {
                if !(eta > 0.0 && eta <= 1.0) {
                    return Err(ValidationError::Efficiency {
                        ev: ev.id.clone(),
                        name,
                    });
                }
            }
            if ev.degradation_fee < 0.0 {
                return Err(ValidationError::NegativeFee {
                    owner: format!("ev {}", ev.id),
                    name: "degradation_fee",
                });
            }
        }

        let mut cs_ids = HashSet::new();
        for cs in &self.stations {
            if !cs_ids.insert(cs.id.as_str()) {
                return Err(ValidationError::DuplicateStation(cs.id.clone()));
            }
            check_finite(
                &format!("station {}", cs.id),
                &[
                    cs.cp_limit,
                    cs.utilization_fee,
                    cs.grid_fee,
                    cs.site_limit.unwrap_or(1.0),
                ],
            )?;
            if cs.cp_limit <= 0.0 {
                return Err(ValidationError::CpLimit(cs.id.clone()));
            }
            if cs.num_cps == 0 {
                return Err(ValidationError::NumCps(cs.id.clone()));
            }
            if cs.site_limit.is_some_and(|s| s <= 0.0) {
                return Err(ValidationError::SiteLimit(cs.id.clone()));
            }
            for (name, fee) in [
                ("utilization_fee", cs.utilization_fee),
                ("grid_fee", cs.grid_fee),
            ] {
                if fee < 0.0 {
                    return Err(ValidationError::NegativeFee {
                        owner: format!("station {}", cs.id),
                        name,
                    });
                }
            }
        }

        let mut seen = HashSet::new();
        for it in &self.itineraries {
            if !ev_ids.contains(it.ev_id.as_str()) {
                return Err(ValidationError::UnknownEv(it.ev_id.clone()));
            }
            if !seen.insert(it.ev_id.as_str()) {
                return Err(ValidationError::DuplicateItinerary(it.ev_id.clone()));
            }
            if it.states.len() != horizon {
                return Err(ValidationError::StatesLength {
                    ev: it.ev_id.clone(),
                    got: it.states.len(),
                    expected: horizon,
                });
            }
            for (t, state) in it.states.iter().enumerate() {
                match state {
                    StepState::Driving { e_run } => {
                        check_finite(&format!("itinerary {} step {t}", it.ev_id), &[*e_run])?;
                        if *e_run < 0.0 {
                            return Err(ValidationError::NegativeRun {
                                ev: it.ev_id.clone(),
                                t,
                            });
                        }
                    }
                    StepState::Parked(cs) => {
                        if !cs_ids.contains(cs.as_str()) {
                            return Err(ValidationError::UnknownStation {
                                ev: it.ev_id.clone(),
                                t,
                                cs: cs.clone(),
                            });
                        }
                    }
                    StepState::FastCharge { cs, e_fch_max } => {
                        check_finite(&format!("itinerary {} step {t}", it.ev_id), &[*e_fch_max])?;
                        let Some(station) = self.station(cs) else {
                            return Err(ValidationError::UnknownStation {
                                ev: it.ev_id.clone(),
                                t,
                                cs: cs.clone(),
                            });
                        };
                        if !station.is_fast {
                            return Err(ValidationError::NotFastStation {
                                ev: it.ev_id.clone(),
                                t,
                                cs: cs.clone(),
                            });
                        }
                        if *e_fch_max < 0.0 {
                            return Err(ValidationError::NegativeFastCharge {
                                ev: it.ev_id.clone(),
                                t,
                            });
                        }
                    }
                }
            }
        }
        if let Some(ev) = self.evs.iter().find(|e| !seen.contains(e.id.as_str())) {
            return Err(ValidationError::MissingItinerary(ev.id.clone()));
        }

        for t in 0..horizon {
            let mut occupancy: BTreeMap<&str, usize> = BTreeMap::new();
            for it in &self.itineraries {
                if let Some(cs) = it.states[t].station() {
                    *occupancy.entry(cs).or_default() += 1;
                }
            }
            for (cs, parked) in occupancy {
                let num_cps = self.station(cs).map_or(0, |s| s.num_cps);
                if parked > num_cps {
                    return Err(ValidationError::CpCapacityExceeded {
                        cs: cs.to_string(),
                        t,
                        parked,
                        num_cps,
                    });
                }
            }
        }

        let pc = &self.price_curve;
        if pc.prices.len() != horizon {
            return Err(ValidationError::PriceLength {
                got: pc.prices.len(),
                expected: horizon,
            });
        }
        check_finite("prices", &pc.prices)?;
        check_finite(
            "penalty factors",
            &[pc.penalty_short_factor, pc.penalty_long_factor],
        )?;
        if pc.penalty_short_factor <= 0.0 || pc.penalty_long_factor <= 0.0 {
            return Err(ValidationError::PenaltyFactor);
        }

        self.forecast_error
            .validate()
            .map_err(ValidationError::ForecastModel)?;

        let mut warnings = Vec::new();
        for cs in &self.stations {
            for (t, &p) in pc.prices.iter().enumerate() {
                let price = p + cs.grid_fee + cs.utilization_fee;
                if price < 0.0 {
                    warnings.push(ValidationWarning::NegativeEffectivePrice {
                        t,
                        cs: cs.id.clone(),
                        price,
                    });
                }
            }
        }
        Ok(warnings)
    }

    /// Pretty JSON in the scenario file format.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    /// Parses and validates a scenario from JSON text.
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|err| {
            let field = err.path().to_string();
            let inner = err.into_inner();
            ScenarioError::Parse {
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })?;
        for warning in scenario.validate()? {
            log::warn!("{warning}");
        }
        Ok(scenario)
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json_str(&text)
}

const ILLUSTRATIVE_JSON: &str = include_str!("../data/illustrative.json");

/// The three-vehicle, three-station illustrative day.
///
/// EV1 (4 kW charger) commutes home-work-home, EV2 (8 kW) home-mall-home and
/// EV3 (12 kW) home-work-mall-home. Home, work and mall stations offer 4, 8
/// and 12 kW per point with three points each. Battery sizes, efficiencies,
/// fees and the double-peak price curve are declared defaults.
pub fn builtin_illustrative() -> Scenario {
    Scenario::from_json_str(ILLUSTRATIVE_JSON).expect("builtin scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_matches_described_day() {
        let s = builtin_illustrative();
        assert_eq!(s.horizon(), 24);
        assert_eq!(s.dt(), 1.0);
        let obc: Vec<f64> = s.evs.iter().map(|e| e.obc_limit).collect();
        assert_eq!(obc, vec![4.0, 8.0, 12.0]);
        let cp: Vec<f64> = s.stations.iter().map(|c| c.cp_limit).collect();
        assert_eq!(cp, vec![4.0, 8.0, 12.0]);
        assert!(s.stations.iter().all(|c| c.num_cps == 3));
        assert_eq!(s.evs[2].obc_limit, 12.0);
        assert!(s.validate().unwrap().is_empty());

        for t in 0..7 {
            let at_home = s
                .itineraries
                .iter()
                .filter(|it| it.states[t] == StepState::Parked("cs1".into()))
                .count();
            assert_eq!(at_home, 3, "hour {t}");
        }

        let ev1 = &s.itinerary("ev1").unwrap().states;
        assert!(ev1[..7].iter().all(|st| st.station() == Some("cs1")));
        assert_eq!(ev1[7].driving_energy(), 4.0);
        assert!(ev1[8..16].iter().all(|st| st.station() == Some("cs2")));
        assert!(ev1[17..].iter().all(|st| st.station() == Some("cs1")));

        let ev2 = &s.itinerary("ev2").unwrap().states;
        assert!(ev2[12..21].iter().all(|st| st.station() == Some("cs3")));
        assert!(ev2[22..].iter().all(|st| st.station() == Some("cs1")));
    }

    #[test]
    fn effective_limit_examples() {
        let s = builtin_illustrative();
        let (ev1, ev2, ev3) = (&s.evs[0], &s.evs[1], &s.evs[2]);
        let (cs1, cs2, cs3) = (&s.stations[0], &s.stations[1], &s.stations[2]);
        assert_eq!(effective_power_limit(ev1, cs2), 4.0);
        assert_eq!(effective_power_limit(ev2, cs1), 4.0);
        assert_eq!(effective_power_limit(ev3, cs3), 12.0);
    }

    #[test]
    fn round_trip() {
        let s = builtin_illustrative();
        let back = Scenario::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn short_itinerary_rejected() {
        let mut s = builtin_illustrative();
        s.itineraries[0].states.pop();
        let err = s.validate().unwrap_err();
        assert!(matches!(
            err,
            ValidationError::StatesLength {
                got: 23,
                expected: 24,
                ..
            }
        ));
        assert!(err.to_string().contains("states length ≠ horizon"));
    }

    #[test]
    fn cp_capacity_exceeded() {
        let mut s = builtin_illustrative();
        let mut extra = s.evs[0].clone();
        extra.id = "ev4".into();
        s.evs.push(extra);
        let mut it = s.itineraries[0].clone();
        it.ev_id = "ev4".into();
        s.itineraries.push(it);
        let err = s.validate().unwrap_err();
        assert!(matches!(
            err,
            ValidationError::CpCapacityExceeded {
                parked: 4,
                num_cps: 3,
                ..
            }
        ));
        assert!(err.to_string().contains("CP capacity exceeded"));
    }

    #[test]
    fn parse_errors_carry_location() {
        let text = ILLUSTRATIVE_JSON.replacen("\"num_cps\": 3", "\"num_cps\": \"three\"", 1);
        match Scenario::from_json_str(&text) {
            Err(ScenarioError::Parse { field, line, .. }) => {
                assert_eq!(field, "stations[0].num_cps");
                assert!(line > 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn negative_effective_price_warns() {
        let mut s = builtin_illustrative();
        s.price_curve.prices[3] = -1.0;
        let warnings = s.validate().unwrap();
        assert_eq!(warnings.len(), 3);
    }

    #[test]
    fn fast_charge_needs_fast_station() {
        let mut s = builtin_illustrative();
        s.itineraries[0].states[7] = StepState::FastCharge {
            cs: "cs2".into(),
            e_fch_max: 10.0,
        };
        assert!(matches!(
            s.validate(),
            Err(ValidationError::NotFastStation { .. })
        ));
        s.stations[1].is_fast = true;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn site_limit_caps_capacity() {
        let mut cs = builtin_illustrative().stations[1].clone();
        assert_eq!(cs.capacity(), 24.0);
        cs.site_limit = Some(10.0);
        assert_eq!(cs.capacity(), 10.0);
    }

    #[test]
    fn state_json_encoding() {
        let states = vec![
            StepState::Parked("cs1".into()),
            StepState::Driving { e_run: 4.0 },
            StepState::FastCharge {
                cs: "f1".into(),
                e_fch_max: 20.0,
            },
        ];
        let json = serde_json::to_string(&states).unwrap();
        assert_eq!(
            json,
            r#"[{"parked":"cs1"},{"driving":{"e_run":4.0}},{"fast_charge":{"cs":"f1","e_fch_max":20.0}}]"#
        );
    }
}
