//! LCB pricing against the certainty-equivalent baseline on the standard
//! instance.

use ancillary_pricing::acceptance::{standard_instance, STANDARD_RADIUS_SCALE};
use ancillary_pricing::market_sim::{build_policy, run_episode, Benchmark, EpisodeOptions, FeatureSource};
use ancillary_pricing::policies::{PolicyKind, PolicySettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = standard_instance(FeatureSource::IidUnitBall);
    let settings = PolicySettings { radius_scale: STANDARD_RADIUS_SCALE, ..Default::default() };
    let horizon = 5_000;
    println!("{:<7} {:>5} {:>10} {:>10} {:>6} {:>10}", "policy", "seed", "regret", "revenue", "good", "violations");
    for kind in [PolicyKind::Alg1, PolicyKind::Greedy] {
        for seed in 0..3 {
            let mut policy = build_policy(kind, &instance, horizon, settings, Benchmark::PureUnbundle)?;
            let r = run_episode(&instance, policy.as_mut(), horizon, seed, Benchmark::PureUnbundle, EpisodeOptions { keep_records: false })?;
            let s = &r.summary;
            println!(
                "{:<7} {seed:>5} {:>10.3} {:>10.1} {:>6} {:>10}",
                kind.as_str(),
                s.cumulative_regret,
                s.policy_revenue,
                s.good_event_held,
                s.lcb_violations
            );
        }
    }
    Ok(())
}
