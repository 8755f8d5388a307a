mod common;

use emob_core::settlement::{imbalance_penalty, plan_costs, ScheduledFlow};
use emob_core::{
    builtin_illustrative, evba, settle, simulate, simulate_delivery, BoundaryPolicy, CostOptions,
    ExperimentConfig, FeeToggles,
};
use proptest::prelude::*;

fn flow(ev: &str, cs: &str, t: usize, e_sch: f64) -> ScheduledFlow {
    ScheduledFlow {
        ev_id: ev.into(),
        cs_id: cs.into(),
        t,
        e_sch,
        e_dch: 0.0,
        e_fch: 0.0,
    }
}

#[test]
fn overbooked_charger_delivers_its_limit() {
    let s = builtin_illustrative();
    let d = simulate_delivery(&[flow("ev1", "cs2", 9, 8.0)], &s);
    let st = &d.ev("ev1").unwrap().steps[9];
    assert_eq!(st.delivered_sch, 4.0);
    assert_eq!(st.imbalance, 4.0);
}

#[test]
fn energy_planned_before_arrival_is_not_delivered() {
    let s = builtin_illustrative();
    // ev1 is on the road in step 7 and arrives at cs2 in step 8
    let d = simulate_delivery(&[flow("ev1", "cs2", 7, 3.0)], &s);
    let st = &d.ev("ev1").unwrap().steps[7];
    assert_eq!(st.delivered, 0.0);
    assert_eq!(st.imbalance, 3.0);
}

#[test]
fn shortfall_penalty_by_hand() {
    assert!((imbalance_penalty(4.0, 0.10, 1.5, 0.5) - 0.20).abs() < 1e-12);
    // surplus refunded at half price costs the other half
    assert!((imbalance_penalty(-4.0, 0.10, 1.5, 0.5) - 0.20).abs() < 1e-12);
    assert_eq!(imbalance_penalty(0.0, 0.10, 1.5, 0.5), 0.0);
}

#[test]
fn without_fees_system_cost_is_energy_cost() {
    let (s, opts) = FeeToggles::none().apply(&builtin_illustrative());
    let fleet = evba::optimize_fleet(&s, &opts).unwrap();
    let c = settle(&simulate_delivery(&fleet.flows(), &s), &s, &opts);
    assert_eq!(c.imbalance_cost, 0.0);
    assert!((c.total_system_cost - c.energy_cost).abs() < 1e-12);
}

#[test]
fn no_throughput_costs_nothing() {
    let s = builtin_illustrative();
    let c = settle(
        &simulate_delivery(&[], &s),
        &s,
        &CostOptions {
            discharge_grid_fee: true,
        },
    );
    assert!(c.values()[..5].iter().all(|&v| v == 0.0), "{c:?}");
    assert_eq!(c.total_system_cost, 0.0);
}

#[test]
fn evba_settles_to_its_objective() {
    let base = builtin_illustrative();
    let opts = CostOptions::default();
    for s in common::random_price_scenarios(&base, 10, 21) {
        let fleet = evba::optimize_fleet(&s, &opts).unwrap();
        let d = simulate_delivery(&fleet.flows(), &s);
        assert_eq!(d.total_abs_imbalance(), 0.0);
        let c = settle(&d, &s, &opts);
        assert!(common::rel_diff(c.total_ev_perspective_cost, fleet.total_cost()) <= 1e-6);
        assert_eq!(c, plan_costs(&fleet.flows(), &s, &opts));
    }
}

#[test]
fn perfect_information_has_no_deficit() {
    let s = builtin_illustrative();
    for cfg in [
        ExperimentConfig::evba(),
        ExperimentConfig::evca(BoundaryPolicy::Naive, true, false),
        ExperimentConfig::evca(BoundaryPolicy::Oracle, true, false),
    ] {
        let sim = simulate(&s, &cfg, 0).unwrap();
        assert_eq!(sim.metrics.costs.mobility_deficit, 0.0);
        assert!(sim.delivery.conservation_error(&sim.scenario) <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dearer_shortfall_never_cheaper(lo in 1.0f64..3.0, extra in 0.0f64..2.0, seed in 0u64..8) {
        let s = builtin_illustrative();
        let cfg = ExperimentConfig::evca(BoundaryPolicy::Naive, false, true);
        let sim = simulate(&s, &cfg, seed).unwrap();
        let mut a = sim.scenario.clone();
        a.price_curve.penalty_short_factor = lo;
        let mut b = a.clone();
        b.price_curve.penalty_short_factor = lo + extra;
        let ca = settle(&sim.delivery, &a, &sim.options);
        let cb = settle(&sim.delivery, &b, &sim.options);
        prop_assert!(cb.imbalance_cost >= ca.imbalance_cost - 1e-12);
    }

    #[test]
    fn random_flows_conserve_energy(
        picks in prop::collection::vec((0usize..3, 0usize..24, 0.0f64..15.0, 0.0f64..15.0), 0..40)
    ) {
        let s = builtin_illustrative();
        let flows: Vec<ScheduledFlow> = picks
            .iter()
            .map(|&(e, t, c, d)| {
                let ev = &s.evs[e].id;
                let cs = s.itinerary(ev).unwrap().states[t].station().unwrap_or("cs1").to_string();
                ScheduledFlow { ev_id: ev.clone(), cs_id: cs, t, e_sch: c, e_dch: d, e_fch: 0.0 }
            })
            .collect();
        let d = simulate_delivery(&flows, &s);
        prop_assert!(d.conservation_error(&s) <= 1e-9);
        for e in &d.evs {
            let ev = s.ev(&e.ev_id).unwrap();
            for st in &e.steps {
                prop_assert!(st.soe >= ev.soe_min - 1e-9 && st.soe <= ev.soe_max + 1e-9);
                prop_assert!((st.imbalance - (st.scheduled - st.delivered)).abs() <= 1e-12);
            }
        }
    }
}
