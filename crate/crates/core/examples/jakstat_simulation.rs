//! Integrates the JAK-STAT5 signaling model at the reference parameters and
//! prints the two observables next to the bundled field series.
//!
//! `cargo run --release --example jakstat_simulation`

use kohdesign::scenarios::jakstat::{input_series, load_field, simulate, REFERENCE};

fn main() -> kohdesign::Result<()> {
    let records = load_field(None, 0)?;
    let input = input_series(&records)?;
    let times: Vec<f64> = records.iter().map(|r| r.time).collect();
    let sim = simulate(&REFERENCE, &times, &input)?;
    println!("{:>6} {:>7} {:>9} {:>9} {:>9} {:>9}", "t", "D", "x1 sim", "x1 obs", "x2 sim", "x2 obs");
    for (r, s) in records.iter().zip(&sim) {
        println!("{:>6.1} {:>7.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", r.time, r.d, s[0], r.x1, s[1], r.x2);
    }
    Ok(())
}
