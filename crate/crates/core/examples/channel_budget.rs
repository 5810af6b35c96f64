//! Uplink budget of one vehicle as it crosses the coverage segment.
//!
//! ```text
//! cargo run --example channel_budget
//! ```

use mafl::channel::{self, FadingTrack};
use mafl::{default_profiles, SimConfig};

fn main() {
    let cfg = SimConfig::default();
    let vehicle = &default_profiles(&cfg)[0];
    let mut fading = FadingTrack::new(cfg.rng_seed, vehicle.id);

    println!("vehicle {} starts at x = {:.1} m", vehicle.id, vehicle.initial_x);
    println!(
        "{:>6} {:>9} {:>10} {:>8} {:>14} {:>12}",
        "t_s", "x_m", "dist_m", "gain", "rate_bps", "upload_s"
    );
    for t in (0..=50).step_by(5).map(f64::from) {
        let pos = channel::position_at(vehicle, &cfg, t);
        let dist = channel::distance_to_rsu(&pos, &cfg);
        let gain = fading.gain_at_slot(channel::slot_of(t, &cfg), &cfg);
        let rate = channel::tx_rate(&cfg, gain, dist).expect("distance is at least the antenna height");
        let upload = channel::upload_delay(&cfg, rate).map_or(f64::INFINITY, |d| d);
        println!(
            "{t:>6.0} {:>9.1} {dist:>10.1} {gain:>8.3} {rate:>14.4e} {upload:>12.4e}",
            pos.x
        );
    }

    // the reference link: unit gain at 100 m
    let rate = channel::tx_rate(&cfg, 1.0, 100.0).unwrap();
    println!(
        "unit gain at 100 m: {rate:.6e} bit/s, {:.6e} s per model",
        channel::upload_delay(&cfg, rate).unwrap()
    );
}
