//! Writes the synthetic JAK-STAT5 field series as CSV to stdout.
//!
//! `cargo run --example jakstat_field_data -- 0 > data/jakstat_field.csv`
//! regenerates the bundled copy.

use kohdesign::scenarios::jakstat::{synthetic_field, write_field_csv};

fn main() -> kohdesign::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    write_field_csv(&synthetic_field(seed)?, std::io::stdout())
}
