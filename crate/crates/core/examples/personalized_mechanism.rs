//! Per-customer choice between bundling and unbundling when the better
//! mechanism depends on the feature.

use ancillary_pricing::acceptance::{mixed_instance, MIXED_RADIUS_SCALE};
use ancillary_pricing::market_sim::{build_policy, compare_mechanisms, run_episode, Benchmark, EpisodeOptions};
use ancillary_pricing::policies::{PolicyKind, PolicySettings};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = mixed_instance();
    let m = compare_mechanisms(&instance, 10_000, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("bundling is optimal for {:.1}% of features", 100.0 * m.bundle_share);

    let horizon = 10_000;
    let settings = PolicySettings { radius_scale: MIXED_RADIUS_SCALE, ..Default::default() };
    let mut policy = build_policy(PolicyKind::Alg2, &instance, horizon, settings, Benchmark::PerCustomer)?;
    let r = run_episode(&instance, policy.as_mut(), horizon, 1, Benchmark::PerCustomer, EpisodeOptions::default())?;

    let window = horizon / 10;
    println!("{:>6} {:>12} {:>16}", "t", "mismatches", "strategy regret");
    let (mut mismatches, mut acc) = (0, 0.0);
    for rec in &r.records {
        mismatches += usize::from(rec.strategy != rec.optimal_strategy);
        acc += rec.strategy_regret;
        if rec.t % window == 0 {
            println!("{:>6} {mismatches:>12} {acc:>16.3}", rec.t);
            mismatches = 0;
        }
    }
    println!("total regret {:.3}, bundled in {} periods", r.summary.cumulative_regret, r.summary.bundle_periods);
    Ok(())
}
