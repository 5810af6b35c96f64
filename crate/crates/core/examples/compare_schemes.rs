//! MAFL against plain AFL on identical seeds, printed every ten rounds.
//!
//! ```text
//! cargo run --example compare_schemes            # synthetic data
//! cargo run --example compare_schemes -- mnist:data/mnist
//! ```

use mafl::{compare, DataSource, SimConfig};

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
        num_rounds: 50,
        ..SimConfig::default()
    };
    let (mafl, afl) = compare(&cfg, &[1, 2, 3], &train, &test).unwrap();
    println!("round   mafl_acc   afl_acc   mafl_loss  afl_loss");
    for (m, a) in mafl
        .rounds
        .iter()
        .zip(&afl.rounds)
        .filter(|(m, _)| m.round % 10 == 0 || m.round == 1)
    {
        println!(
            "{:>5} {:>9.2}% {:>8.2}% {:>10.4} {:>9.4}",
            m.round, m.accuracy_pct, a.accuracy_pct, m.loss, a.loss
        );
    }
}
