//! Local SGD on synthetic blobs with both model kinds.
//!
//! ```text
//! cargo run --example train_synthetic
//! ```

use mafl::rng::{self, Domain};
use mafl::trainer::net::{local_train, loss, TrainerModel};
use mafl::trainer::{synth_split, SynthSpec};
use mafl::{evaluate, ModelKind, SimConfig};

fn main() {
    let spec = SynthSpec {
        n_train: 4_000,
        n_test: 1_000,
        ..SynthSpec::default()
    };
    let (train, test) = synth_split(&spec);
    for kind in [ModelKind::SoftmaxRegression, ModelKind::Mlp1Hidden] {
        let cfg = SimConfig {
            model: kind,
            local_iters: 20,
            ..SimConfig::default()
        };
        let mut model = TrainerModel::init(kind, train.dim(), train.num_classes(), cfg.hidden_width, 7);
        let mut rng = rng::stream(7, Domain::Training, 0);
        println!("{kind} {}", model.params.shape());
        for epoch in 1..=5 {
            model.params = local_train(&model.params, &train, &cfg, &mut rng).unwrap();
            let eval = evaluate(&model.params, &test).unwrap();
            println!(
                "  after {:>3} steps: train loss {:.4}, test accuracy {:.2}%",
                epoch * cfg.local_iters,
                loss(&model, &train).per_sample,
                eval.accuracy
            );
        }
    }
}
