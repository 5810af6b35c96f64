//! Final accuracy as a function of the aggregation proportion.
//!
//! ```text
//! cargo run --example beta_sweep
//! ```

use mafl::{sweep_beta, DataSource, SimConfig};

fn main() {
    let source: DataSource = std::env::args()
        .nth(1)
        .as_deref()
        .unwrap_or("synth")
        .parse()
        .unwrap_or_else(|e| {
            eprintln!("{e}");
            std::process::exit(2);
        });
    let (train, test) = source.load().unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(1);
    });
    let cfg = SimConfig {
        num_rounds: 10,
        ..SimConfig::default()
    };
    let rows = sweep_beta(&cfg, &[0.1, 0.3, 0.5, 0.7, 0.9], &[1, 2, 3], &train, &test).unwrap();
    for row in rows {
        let bar = "#".repeat((row.accuracy_pct / 2.0) as usize);
        println!("beta {:.1}: {:>6.2}% {bar}", row.beta, row.accuracy_pct);
    }
}
