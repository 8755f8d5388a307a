mod common;

use emob_core::experiments::{
    degradation_threshold, issue_variants, IssueError, ModelKind, THRESHOLD_MARGIN,
};
use emob_core::{
    builtin_illustrative, issue_report, run_experiment, simulate, BoundaryPolicy, ExperimentConfig,
    FeeToggles, Scenario,
};

/// Delivered discharge at `cs` over steps `a..b`.
fn discharge_at(sim: &emob_core::Simulation, cs: &str, a: usize, b: usize) -> f64 {
    sim.delivery
        .evs
        .iter()
        .flat_map(|e| &e.steps[a..b])
        .filter(|st| st.station.as_deref() == Some(cs))
        .map(|st| st.delivered_dch)
        .sum()
}

#[test]
fn evba_ignores_the_seed() {
    let s = builtin_illustrative();
    let cfg = ExperimentConfig {
        num_seeds: 4,
        ..ExperimentConfig::evba()
    };
    let rep = run_experiment(&s, &cfg).unwrap();
    let runs = &rep.variants[0].runs;
    assert_eq!(runs.len(), 4);
    assert!(runs
        .windows(2)
        .all(|w| w[0].metrics == w[1].metrics && w[0].seed < w[1].seed));
    assert!(rep.variants[0].std.values().iter().all(|&v| v == 0.0));
}

#[test]
fn deltas_against_evba() {
    let s = builtin_illustrative();
    let oracle = run_experiment(
        &s,
        &ExperimentConfig::evca(BoundaryPolicy::Oracle, true, false),
    )
    .unwrap();
    for d in oracle.variants[0].delta_vs_evba.values() {
        assert!(d.abs() <= 1e-6, "{d}");
    }
    let naive = run_experiment(
        &s,
        &ExperimentConfig::evca(BoundaryPolicy::Naive, true, false),
    )
    .unwrap();
    let d = naive.variants[0].delta_vs_evba.costs;
    assert!(
        d.total_system_cost >= 0.0 && d.total_ev_perspective_cost >= 0.0,
        "{d:?}"
    );
}

#[test]
fn evba_bounds_every_perfect_time_configuration() {
    let base = builtin_illustrative();
    let configs = [
        ExperimentConfig::evca(BoundaryPolicy::Naive, true, false),
        ExperimentConfig::evca(BoundaryPolicy::Oracle, true, false),
        ExperimentConfig {
            model: ModelKind::Central,
            ..ExperimentConfig::default()
        },
    ];
    for s in common::random_price_scenarios(&base, common::RANDOM_CURVES, 99) {
        let b = simulate(&s, &ExperimentConfig::evba(), 0)
            .unwrap()
            .metrics
            .costs;
        for cfg in &configs {
            let c = simulate(&s, cfg, 0).unwrap().metrics.costs;
            assert!(c.total_ev_perspective_cost >= b.total_ev_perspective_cost - 1e-6);
        }
    }
}

#[test]
fn naive_boundaries_sell_less_in_the_evening_at_the_mall() {
    let s = builtin_illustrative();
    let evba = simulate(&s, &ExperimentConfig::evba(), 0).unwrap();
    let naive = simulate(
        &s,
        &ExperimentConfig::evca(BoundaryPolicy::Naive, true, false),
        0,
    )
    .unwrap();
    let (e, n) = (
        discharge_at(&evba, "cs3", 17, 21),
        discharge_at(&naive, "cs3", 17, 21),
    );
    assert!(n < e - 1.0, "naive {n} vs evba {e}");
}

#[test]
fn issue3_imbalance_only_with_unknown_obc() {
    let s = builtin_illustrative();
    let rep = issue_report(3, &s, 1, s.rng_seed).unwrap();
    let unknown = rep.variant("evca obc_known=false").unwrap();
    let known = rep.variant("evca obc_known=true").unwrap();
    assert!(unknown.mean.imbalance_kwh > 0.0);
    assert!(unknown.mean.costs.imbalance_cost > 0.0);
    assert_eq!(known.mean.imbalance_kwh, 0.0);
}

#[test]
fn issue4_threshold_silences_v2g() {
    let s = builtin_illustrative();
    let rep = issue_report(4, &s, 1, s.rng_seed).unwrap();
    assert!(rep.variant("evba fees on").unwrap().mean.v2g_discharge_kwh > 0.0);
    assert_eq!(
        rep.variant("evba degradation above threshold")
            .unwrap()
            .mean
            .v2g_discharge_kwh,
        0.0
    );
    let off = rep
        .variant("evba fees off")
        .unwrap()
        .mean
        .costs
        .total_ev_perspective_cost;
    let on = rep
        .variant("evba fees on")
        .unwrap()
        .mean
        .costs
        .total_ev_perspective_cost;
    assert!(on >= off);
}

#[test]
fn threshold_is_tight_from_below() {
    let s = builtin_illustrative();
    let (p, opts) = FeeToggles::default().apply(&s);
    let th = degradation_threshold(&p, &opts);
    let v2g = |fee: f64| {
        let cfg = ExperimentConfig {
            degradation_fee_override: Some(fee),
            ..ExperimentConfig::evba()
        };
        simulate(&s, &cfg, 0).unwrap().metrics.v2g_discharge_kwh
    };
    assert_eq!(v2g(th + THRESHOLD_MARGIN), 0.0);
    assert!(v2g(th - 0.01) > 0.0);
}

#[test]
fn issue1_statistics() {
    let s = builtin_illustrative();
    let rep = issue_report(1, &s, 20, s.rng_seed).unwrap();
    let noisy = rep.variant("evca naive, forecast error").unwrap();
    assert_eq!(noisy.runs.len(), 20);
    let seeds: Vec<u64> = noisy.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, (s.rng_seed..s.rng_seed + 20).collect::<Vec<_>>());
    let n = noisy.runs.len() as f64;
    let mean = noisy
        .runs
        .iter()
        .map(|r| r.metrics.imbalance_kwh)
        .sum::<f64>()
        / n;
    let var = noisy
        .runs
        .iter()
        .map(|r| (r.metrics.imbalance_kwh - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    assert!((noisy.mean.imbalance_kwh - mean).abs() < 1e-12);
    assert!((noisy.std.imbalance_kwh - var.sqrt()).abs() < 1e-12);
    assert!(mean > 0.0);
}

#[test]
fn reports_repeat_exactly() {
    let s = builtin_illustrative();
    assert_eq!(
        issue_report(1, &s, 12, 3).unwrap(),
        issue_report(1, &s, 12, 3).unwrap()
    );
}

#[test]
fn unknown_issue_and_zero_seeds() {
    let s: Scenario = builtin_illustrative();
    assert_eq!(
        issue_variants(5, &s, 1, 0).unwrap_err(),
        IssueError::UnknownIssue(5)
    );
    let cfg = ExperimentConfig {
        num_seeds: 0,
        ..ExperimentConfig::evba()
    };
    assert!(run_experiment(&s, &cfg).is_err());
}
