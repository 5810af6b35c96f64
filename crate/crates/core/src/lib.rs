//! Discrete-event simulation of mobility-aware asynchronous federated
//! learning (MAFL) between vehicles and a road side unit (RSU).
//!
//! Vehicles drive past an RSU at constant speed, train a shared model on
//! their own data, and upload it over a fading Shannon-rate link. The RSU
//! folds each arriving model into the global model as soon as it lands. Under
//! MAFL every upload is first scaled by two decay weights, one for its upload
//! delay and one for its local training delay; plain AFL skips the scaling.
//!
//! Module map:
//! - [`config`]: experiment parameters and vehicle profiles
//! - [`channel`]: positions, distances, AR(1) fading, uplink rate and delay
//! - [`staleness`]: delay-decay weights
//! - [`trainer`]: datasets, models, SGD
//! - [`sim`]: aggregation and the event loop
//! - [`eval`], [`experiment`], [`output`], [`cli`]: metrics and orchestration

pub mod channel;
pub mod cli;
pub mod config;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod output;
pub mod rng;
pub mod sim;
pub mod staleness;
pub mod trainer;

pub use config::{default_profiles, BoundaryPolicy, ConfigError, ModelKind, Scheme, SimConfig, VehicleProfile};
pub use eval::{evaluate, Evaluation};
pub use experiment::{compare, run_experiment, sweep_beta, DataSource, ExperimentError, ExperimentResult, SweepRow};
pub use model::{ModelParams, ShapeTag};
pub use sim::{aggregate, run_simulation, RoundRecord, SimData, SimError, Simulation};
pub use staleness::DelayWeights;
