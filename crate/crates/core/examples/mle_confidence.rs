//! Regularized MLE from fixed-price sales, with the confidence radius and
//! the valuation interval it implies.

use ancillary_pricing::market_sim::{gen_feature, FeatureSource};
use ancillary_pricing::mle::{EstimatorState, ProductTag};
use ancillary_pricing::shock_dist::{compute_constants, ShockDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dist = ShockDistribution::uniform(-2.0, 2.0)?;
    let constants = compute_constants(&dist, 0.1, 1.0, 0.5, 10_000)?;
    let theta = [0.3, -0.2];
    let horizon = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut est = EstimatorState::new(ProductTag::Focal, 2, 1.0, 0.5)?;

    println!("{:>6} {:>18} {:>8} {:>9} {:>9}", "n", "theta_hat", "error", "beta", "dist/beta");
    for t in 1..=horizon {
        let x = gen_feature(&FeatureSource::IidUnitBall, 2, t, &mut rng)?;
        let price = rng.gen_range(0.1..1.0);
        let v: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
        est.update(price, &x, rng.gen::<f64>() < dist.sf(price - v))?;
        if [100, 1_000, 10_000].contains(&t) {
            est.fit(&dist, &constants)?;
            let th = est.theta_hat();
            let err = ((th[0] - theta[0]).powi(2) + (th[1] - theta[1]).powi(2)).sqrt();
            let beta = est.beta_radius(&constants, horizon);
            println!(
                "{t:>6} ({:>7.4}, {:>7.4}) {err:>8.4} {beta:>9.2} {:>9.5}",
                th[0],
                th[1],
                est.sigma_distance(&theta) / beta
            );
        }
    }

    // The worst-case radius is very conservative; at full size the interval
    // is clipped to the theta_bar ball.
    let x = [0.6, 0.6];
    let truth: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
    for scale in [1.0, 0.03] {
        let ci = est.valuation_bounds(scale * est.beta_radius(&constants, horizon), &x);
        println!("radius scale {scale}: x^T theta* = {truth:.4} in [{:.4}, {:.4}]: {}", ci.lcb, ci.ucb, ci.contains(truth));
    }
    Ok(())
}
