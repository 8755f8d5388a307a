use emob_core::scenario::{StepState, ValidationError};
use emob_core::{
    builtin_illustrative, effective_power_limit, load_scenario, Scenario, ScenarioError,
};
use proptest::prelude::*;

#[test]
fn file_round_trip() {
    let s = builtin_illustrative();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, s.to_json_string()).unwrap();
    assert_eq!(load_scenario(&path).unwrap(), s);
}

#[test]
fn missing_file_is_io_error() {
    let err = load_scenario("/nonexistent/scenario.json").unwrap_err();
    assert!(matches!(err, ScenarioError::Io { .. }), "{err}");
}

#[test]
fn unknown_field_is_reported_with_path() {
    let text = builtin_illustrative()
        .to_json_string()
        .replacen("\"obc_limit\"", "\"obc_limt\"", 1);
    match Scenario::from_json_str(&text).unwrap_err() {
        ScenarioError::Parse { field, line, .. } => {
            assert!(field.starts_with("evs[0]"), "{field}");
            assert!(line > 1);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn four_vehicles_at_three_points() {
    let mut s = builtin_illustrative();
    for cs in &mut s.stations {
        cs.num_cps = 1;
    }
    match s.validate().unwrap_err() {
        ValidationError::CpCapacityExceeded {
            parked, num_cps, ..
        } => {
            assert!(parked > num_cps);
        }
        other => panic!("unexpected {other}"),
    }
}

/// A single field pushed past its bound, and the error it must produce.
fn mutate(s: &mut Scenario, which: usize, amount: f64) -> fn(&ValidationError) -> bool {
    match which {
        0 => {
            s.evs[1].soe_min = s.evs[1].soe_init + amount;
            |e| matches!(e, ValidationError::SoeOrdering(id) if id == "ev2")
        }
        1 => {
            s.evs[0].obc_limit = -amount;
            |e| matches!(e, ValidationError::ObcLimit(_))
        }
        2 => {
            s.evs[2].eta_dch = 1.0 + amount;
            |e| {
                matches!(
                    e,
                    ValidationError::Efficiency {
                        name: "eta_dch",
                        ..
                    }
                )
            }
        }
        3 => {
            s.stations[1].grid_fee = -amount;
            |e| {
                matches!(
                    e,
                    ValidationError::NegativeFee {
                        name: "grid_fee",
                        ..
                    }
                )
            }
        }
        4 => {
            s.price_curve.penalty_short_factor = -amount;
            |e| matches!(e, ValidationError::PenaltyFactor)
        }
        5 => {
            s.stations[0].cp_limit = -amount;
            |e| matches!(e, ValidationError::CpLimit(_))
        }
        6 => {
            s.evs[0].soe_end_min = s.evs[0].soe_max + amount;
            |e| matches!(e, ValidationError::SoeEndMin(_))
        }
        _ => {
            let t = (amount as usize) % s.horizon();
            s.itineraries[0].states[t] = StepState::Driving { e_run: -amount };
            |e| matches!(e, ValidationError::NegativeRun { .. })
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_field_violations_are_named(which in 0usize..8, amount in 0.01f64..50.0) {
        let mut s = builtin_illustrative();
        let expected = mutate(&mut s, which, amount);
        let err = s.validate().unwrap_err();
        prop_assert!(expected(&err), "case {which}: {err}");
        // the same violation through the loader
        let loaded = Scenario::from_json_str(&s.to_json_string());
        prop_assert!(matches!(loaded, Err(ScenarioError::Validation(_))));
    }

    #[test]
    fn valid_price_edits_round_trip(prices in prop::collection::vec(-0.05f64..0.5, 24)) {
        let mut s = builtin_illustrative();
        s.price_curve.prices = prices;
        let back = Scenario::from_json_str(&s.to_json_string()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn effective_limit_is_min(obc in 0.1f64..50.0, cp in 0.1f64..50.0) {
        let mut s = builtin_illustrative();
        s.evs[0].obc_limit = obc;
        s.stations[0].cp_limit = cp;
        let lim = effective_power_limit(&s.evs[0], &s.stations[0]);
        prop_assert_eq!(lim, obc.min(cp));
        prop_assert!(lim <= obc && lim <= cp);
    }
}
