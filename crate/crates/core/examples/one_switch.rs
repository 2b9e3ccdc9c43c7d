//! The one-switch policy on an instance where bundling always wins.
//!
//! With a radius that still covers the truth the averaged confidence width
//! stays above half the revenue gap, so the policy keeps unbundling. Shrinking
//! the radius far enough makes it switch, at the price of losing coverage.

use ancillary_pricing::acceptance::{bundle_dominant_instance, BUNDLE_DOMINANT_RADIUS_SCALE};
use ancillary_pricing::market_sim::{build_policy, compare_mechanisms, run_episode, Benchmark, EpisodeOptions};
use ancillary_pricing::mle::beta_bar;
use ancillary_pricing::policies::{PolicyKind, PolicySettings};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = bundle_dominant_instance();
    let m = compare_mechanisms(&instance, 10_000, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("mean revenue: bundle {:.4}, unbundle {:.4}", m.bundle.mean, m.unbundle.mean);

    let horizon = 20_000;
    let t = horizon as f64;
    for scale in [BUNDLE_DOMINANT_RADIUS_SCALE, 0.0003] {
        let settings = PolicySettings { radius_scale: scale, ..Default::default() };
        let mut policy = build_policy(PolicyKind::Alg3, &instance, horizon, settings, Benchmark::PerCustomer)?;
        let r = run_episode(&instance, policy.as_mut(), horizon, 3, Benchmark::PerCustomer, EpisodeOptions { keep_records: false })?;
        let norm_sum = policy.one_switch().map_or(0.0, |s| s.norm_sum());
        let bbar = scale * beta_bar(instance.dim, horizon, 1.0, instance.theta_bar, &instance.constants);
        println!(
            "radius scale {scale}: switch at {:?}, good event {}, width at T: {:.3} + {:.3}",
            r.summary.switch_time,
            r.summary.good_event_held,
            4.0 * (t.ln() / t).sqrt(),
            2.0 * bbar / t * norm_sum
        );
    }
    Ok(())
}
