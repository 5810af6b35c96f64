//! Training delay and decay weights for every vehicle of the default fleet.
//!
//! ```text
//! cargo run --example staleness_weights
//! ```

use mafl::staleness::{self, DelayWeights};
use mafl::{default_profiles, ModelParams, ShapeTag, SimConfig};

fn main() {
    let cfg = SimConfig::default();
    println!(
        "{:>3} {:>7} {:>10} {:>9} {:>9}",
        "id", "D_i", "cpu_hz", "train_s", "weight"
    );
    for p in default_profiles(&cfg) {
        let delay = staleness::train_delay(&p, &cfg);
        println!(
            "{:>3} {:>7} {:>10.3e} {:>9.6} {:>9.6}",
            p.id,
            p.data_count,
            p.cpu_freq,
            delay,
            staleness::train_weight(&cfg, delay)
        );
    }

    // a scalar "model" scaled by both weights
    let w = ModelParams::new(vec![2.0, 0.0], ShapeTag::dense(&[1, 1])).unwrap();
    let weights = DelayWeights::for_scheme(&cfg, 1.67239e-3, 1.766667);
    let scaled = staleness::weight_local_model(&w, &weights).unwrap();
    println!(
        "upload weight {:.6}, train weight {:.6}: 2.0 -> {:.6}",
        weights.upload_weight,
        weights.train_weight,
        scaled.values()[0]
    );
}
