//! Curvature and density constants of the supported shock laws over the
//! working interval |v| <= p_high + theta_bar, and their combination.

use ancillary_pricing::shock_dist::{compute_constants, ShockConstants, ShockDistribution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (p_low, p_high, theta_bar) = (0.1, 1.0, 0.5);
    let laws = [
        ("uniform(-2, 2)", ShockDistribution::uniform(-2.0, 2.0)?),
        ("normal(0, 1)", ShockDistribution::normal(0.0, 1.0)?),
        ("logistic(0, 0.5)", ShockDistribution::logistic(0.0, 0.5)?),
    ];
    println!("{:<18} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8}", "law", "nu", "mu", "B", "B'", "eta", "mu/nu");
    let mut all = Vec::new();
    for (name, dist) in &laws {
        let c = compute_constants(dist, p_low, p_high, theta_bar, 10_000)?;
        print_row(name, &c);
        all.push(c);
    }
    print_row("combined", &ShockConstants::combine(&all, p_high));
    Ok(())
}

fn print_row(name: &str, c: &ShockConstants) {
    println!(
        "{name:<18} {:>10.5} {:>10.5} {:>8.4} {:>8.4} {:>8.4} {:>8.2}",
        c.nu,
        c.mu,
        c.b_max,
        c.b_prime_max,
        c.eta,
        c.mu / c.nu
    );
}
