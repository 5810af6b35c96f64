//! Event timeline of one short run: which vehicle lands when, with what
//! weights, and how the global model scores after each aggregation.
//!
//! ```text
//! cargo run --example simulate_timeline
//! ```

use mafl::trainer::{partition, synth_split, SynthSpec};
use mafl::{default_profiles, BoundaryPolicy, SimConfig, SimData, Simulation};

fn main() {
    let (train, test) = synth_split(&SynthSpec::default());
    for policy in [BoundaryPolicy::Wrap, BoundaryPolicy::Exit] {
        let cfg = SimConfig {
            num_rounds: 25,
            boundary_policy: policy,
            coverage_half_width: 150.0,
            ..SimConfig::default()
        };
        let profiles = default_profiles(&cfg);
        let shards = partition(&train, &profiles, cfg.rng_seed).unwrap().shards;
        let data = SimData {
            train: &train,
            test: &test,
            shards: &shards,
        };
        println!("boundary policy {policy}");
        match Simulation::new(&cfg, &profiles, data).run() {
            Ok(trace) => {
                for r in &trace.records {
                    println!(
                        "  round {:>2} t={:>7.3}s vehicle {:>2} weights {:.4} x {:.4} -> {:.2}% loss {:.4}",
                        r.round,
                        r.sim_time,
                        r.vehicle_id,
                        r.upload_weight,
                        r.train_weight,
                        r.test_accuracy,
                        r.test_loss
                    );
                }
                for d in &trace.departures {
                    println!("  vehicle {} left coverage at t={:.3}s", d.vehicle_id, d.time);
                }
            }
            Err(e) => println!("  {e}"),
        }
    }
}
