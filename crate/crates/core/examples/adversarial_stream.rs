//! Writes the adversarial feature stream as a FixedSequence file.
//!
//!     cargo run --example adversarial_stream -- configs/adversarial.csv 10000

use std::fmt::Write as _;

use ancillary_pricing::acceptance::adversarial_features;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "adversarial.csv".into());
    let n: usize = args.next().map_or(Ok(10_000), |s| s.parse())?;
    let mut text = String::new();
    for row in adversarial_features(n) {
        writeln!(text, "{:.12},{:.12}", row[0], row[1])?;
    }
    std::fs::write(&path, text)?;
    println!("wrote {n} rows to {path}");
    Ok(())
}
