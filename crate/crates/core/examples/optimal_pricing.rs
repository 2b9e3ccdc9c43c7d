//! Clairvoyant prices and the bundle/unbundle choice as valuations move.

use ancillary_pricing::pricing_oracle::{g_fn, optimal_strategy, PriceBox};
use ancillary_pricing::shock_dist::ShockDistribution;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let u = ShockDistribution::uniform(-2.5, 2.5)?;
    let bundle = ShockDistribution::normal(0.8, 1.0)?;
    let bx = PriceBox::new(0.1, 1.0)?;

    println!("g for uniform(-2.5, 2.5): g(0) = {:.4}, g(1) = {:.4}", g_fn(&u, 0.0)?, g_fn(&u, 1.0)?);
    println!("\n{:>6} {:>9} {:>7} {:>7} {:>7} {:>9} {:>9}", "v", "strategy", "p_f", "p_a", "p_b", "r_u", "r_b");
    for i in -4..=4 {
        // Both products valued at v, so the bundle is valued at 2v.
        let v = 0.25 * i as f64;
        let q = optimal_strategy(&u, &u, &bundle, v, v, &bx)?;
        let show = |p: Option<f64>| p.map_or("-".to_string(), |p| format!("{p:.4}"));
        println!(
            "{v:>6.2} {:>9} {:>7} {:>7} {:>7} {:>9.5} {:>9.5}",
            q.strategy.as_str(),
            show(q.p_f),
            show(q.p_a),
            show(q.p_b),
            q.unbundle_revenue,
            q.bundle_revenue
        );
    }
    Ok(())
}
