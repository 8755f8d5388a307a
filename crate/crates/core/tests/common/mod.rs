#![allow(dead_code)]

use emob_core::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RANDOM_CURVES: usize = 50;
pub const CURVE_SEED: u64 = 20_240_601;

/// Builtin scenario with prices drawn uniformly from [0.01, 0.20].
pub fn random_price_scenarios(base: &Scenario, count: usize, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut s = base.clone();
            for p in &mut s.price_curve.prices {
                *p = rng.gen_range(0.01..=0.20);
            }
            s
        })
        .collect()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
