pub mod acceptance;
pub mod bench;
pub mod market_sim;
pub mod mle;
pub mod policies;
pub mod pricing_oracle;
pub mod shock_dist;
