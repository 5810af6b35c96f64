//! RSU aggregation and the discrete-event engine.
//!
//! Every vehicle downloads the global model at `t = 0` and loops through
//! train -> upload -> download. Download takes no time. An upload that
//! completes at `t` is aggregated immediately into the current global model,
//! which counts as one round; the vehicle then starts its next cycle from the
//! fresh global at the same instant. Uploads completing at the same time are
//! aggregated one after another in ascending vehicle id.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelError, FadingTrack};
use crate::config::{BoundaryPolicy, SimConfig, VehicleProfile};
use crate::eval::{evaluate, Evaluation};
use crate::model::{ModelError, ModelParams};
use crate::rng::{self, Domain};
use crate::staleness::{self, DelayWeights};
use crate::trainer::net::{self, TrainError, TrainerModel};
use crate::trainer::{Dataset, Shard};

/// Upper bound on consecutive slots an upload may wait for a usable link.
const MAX_DEFERRED_SLOTS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("all vehicles left coverage after {completed} of {requested} rounds")]
    Starved { completed: usize, requested: usize },
    #[error("no shard for vehicle {0}")]
    MissingShard(usize),
    #[error("vehicle {vehicle}: {source}")]
    Training { vehicle: usize, source: TrainError },
    #[error("vehicle {vehicle} never found a usable uplink")]
    NoUplink { vehicle: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(TrainError),
}

/// One aggregation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Seconds.
    pub sim_time: f64,
    pub vehicle_id: usize,
    pub upload_weight: f64,
    pub train_weight: f64,
    /// Percent.
    pub test_accuracy: f64,
    /// Per-sample cross-entropy.
    pub test_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    UploadComplete,
}

#[derive(Clone, Debug)]
pub struct SimEvent {
    pub fire_time: f64,
    pub vehicle_id: usize,
    pub kind: EventKind,
    pub model: ModelParams,
    pub weights: DelayWeights,
}

/// Event order: earlier `fire_time` first, then lower vehicle id.
pub fn tie_break(a: &SimEvent, b: &SimEvent) -> Ordering {
    a.fire_time
        .total_cmp(&b.fire_time)
        .then(a.vehicle_id.cmp(&b.vehicle_id))
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        tie_break(self, other) == Ordering::Equal
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        tie_break(self, other)
    }
}

/// `beta * global + (1 - beta) * weighted_local`, elementwise.
pub fn aggregate(global: &ModelParams, weighted_local: &ModelParams, beta: f64) -> Result<ModelParams, ModelError> {
    global.combine(beta, weighted_local, 1.0 - beta)
}

/// Source of the training and upload delays.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DelayModel {
    /// Delays from compute capability, mobility and the fading channel.
    Physical,
    /// Every cycle uses the given delays in seconds.
    Fixed { train: f64, upload: f64 },
}

/// Where a cycle that starts now will end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CyclePlan {
    Deliver {
        fire_time: f64,
        weights: DelayWeights,
    },
    /// The vehicle passes `+R` at `at` before its upload would complete.
    Leave {
        at: f64,
    },
}

/// Per-vehicle simulation state.
#[derive(Clone, Debug)]
pub struct Vehicle {
    pub profile: VehicleProfile,
    pub fading: FadingTrack,
    pub shard: Vec<usize>,
    rng: ChaCha8Rng,
}

impl Vehicle {
    pub fn new(profile: VehicleProfile, shard: Vec<usize>, seed: u64) -> Self {
        let fading = FadingTrack::new(seed, profile.id);
        let rng = rng::stream(seed, Domain::Training, profile.id as u64);
        Self {
            profile,
            fading,
            shard,
            rng,
        }
    }

    /// Delays and weights for a cycle starting at `start`. The channel is
    /// sampled once, in the slot where the upload begins; if the link is
    /// unusable there the upload waits for the next slot.
    pub fn plan_cycle(&mut self, cfg: &SimConfig, start: f64, delays: DelayModel) -> Result<CyclePlan, SimError> {
        let (train_delay, upload_start, upload_delay) = match delays {
            DelayModel::Fixed { train, upload } => (train, start + train, upload),
            DelayModel::Physical => {
                let train_delay = staleness::train_delay(&self.profile, cfg);
                let mut upload_start = start + train_delay;
                let mut deferred = 0;
                loop {
                    let slot = channel::slot_of(upload_start, cfg);
                    let gain = self.fading.gain_at_slot(slot, cfg);
                    let position = channel::position_at(&self.profile, cfg, upload_start);
                    let distance = channel::distance_to_rsu(&position, cfg);
                    let rate = channel::tx_rate(cfg, gain, distance).unwrap_or(0.0);
                    match channel::upload_delay(cfg, rate) {
                        Ok(delay) => break (train_delay, upload_start, delay),
                        Err(ChannelError::LinkUnusable(_)) | Err(ChannelError::NonPositiveDistance(_)) => {
                            deferred += 1;
                            if deferred > MAX_DEFERRED_SLOTS {
                                return Err(SimError::NoUplink {
                                    vehicle: self.profile.id,
                                });
                            }
                            upload_start = (slot + 1) as f64 * cfg.slot_seconds;
                        }
                    }
                }
            }
        };
        let fire_time = upload_start + upload_delay;
        if cfg.boundary_policy == BoundaryPolicy::Exit
            && channel::travelled_x(&self.profile, cfg, fire_time) >= cfg.coverage_half_width
        {
            let at = (cfg.coverage_half_width - self.profile.initial_x) / cfg.velocity;
            return Ok(CyclePlan::Leave { at });
        }
        let weights = DelayWeights::for_scheme(cfg, upload_delay, train_delay);
        Ok(CyclePlan::Deliver { fire_time, weights })
    }

    /// Local training from `global` followed by delay weighting.
    pub fn train(
        &mut self,
        global: &ModelParams,
        train: &Dataset,
        cfg: &SimConfig,
        weights: &DelayWeights,
    ) -> Result<ModelParams, SimError> {
        let id = self.profile.id;
        let local = net::local_train_on(global, net::Batch::rows(train, &self.shard), cfg, &mut self.rng)
            .map_err(|source| SimError::Training { vehicle: id, source })?;
        staleness::weight_local_model(&local, weights).map_err(|e| SimError::Training {
            vehicle: id,
            source: e.into(),
        })
    }
}

/// Training pool, evaluation set and per-vehicle shard indices.
#[derive(Clone, Copy, Debug)]
pub struct SimData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub shards: &'a [Shard],
}

/// A vehicle removed under the exit policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Departure {
    pub vehicle_id: usize,
    pub time: f64,
}

#[derive(Clone, Debug)]
pub struct SimTrace {
    pub records: Vec<RoundRecord>,
    pub departures: Vec<Departure>,
    pub final_global: ModelParams,
}

/// Initial global model `w_g` for a run.
pub fn initial_global(cfg: &SimConfig, data: &SimData<'_>) -> ModelParams {
    TrainerModel::init(
        cfg.model,
        data.train.dim(),
        data.train.num_classes(),
        cfg.hidden_width,
        cfg.rng_seed,
    )
    .params
}

/// Builds the fleet, pairing each profile with its shard.
pub fn build_fleet(cfg: &SimConfig, profiles: &[VehicleProfile], data: &SimData<'_>) -> Result<Vec<Vehicle>, SimError> {
    profiles
        .iter()
        .map(|p| {
            let shard = data
                .shards
                .iter()
                .find(|s| s.vehicle_id == p.id)
                .ok_or(SimError::MissingShard(p.id))?;
            Ok(Vehicle::new(p.clone(), shard.indices.clone(), cfg.rng_seed))
        })
        .collect()
}

pub fn record_round(round: usize, event: &SimEvent, eval: Evaluation) -> RoundRecord {
    RoundRecord {
        round,
        sim_time: event.fire_time,
        vehicle_id: event.vehicle_id,
        upload_weight: event.weights.upload_weight,
        train_weight: event.weights.train_weight,
        test_accuracy: eval.accuracy,
        test_loss: eval.loss,
    }
}

pub struct Simulation<'a> {
    cfg: SimConfig,
    profiles: Vec<VehicleProfile>,
    data: SimData<'a>,
    delays: DelayModel,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &SimConfig, profiles: &[VehicleProfile], data: SimData<'a>) -> Self {
        Self {
            cfg: cfg.clone(),
            profiles: profiles.to_vec(),
            data,
            delays: DelayModel::Physical,
        }
    }

    pub fn with_delays(mut self, delays: DelayModel) -> Self {
        self.delays = delays;
        self
    }

    fn start_cycle(
        &self,
        vehicle: &mut Vehicle,
        start: f64,
        global: &ModelParams,
        queue: &mut BinaryHeap<Reverse<SimEvent>>,
        departures: &mut Vec<Departure>,
    ) -> Result<(), SimError> {
        match vehicle.plan_cycle(&self.cfg, start, self.delays)? {
            CyclePlan::Leave { at } => {
                departures.push(Departure {
                    vehicle_id: vehicle.profile.id,
                    time: at,
                });
            }
            CyclePlan::Deliver { fire_time, weights } => {
                let model = vehicle.train(global, self.data.train, &self.cfg, &weights)?;
                queue.push(Reverse(SimEvent {
                    fire_time,
                    vehicle_id: vehicle.profile.id,
                    kind: EventKind::UploadComplete,
                    model,
                    weights,
                }));
            }
        }
        Ok(())
    }

    pub fn run(&self) -> Result<SimTrace, SimError> {
        let cfg = &self.cfg;
        let mut fleet = build_fleet(cfg, &self.profiles, &self.data)?;
        let mut global = initial_global(cfg, &self.data);
        let mut queue = BinaryHeap::new();
        let mut departures = Vec::new();
        for vehicle in fleet.iter_mut() {
            self.start_cycle(vehicle, 0.0, &global, &mut queue, &mut departures)?;
        }

        let mut records = Vec::with_capacity(cfg.num_rounds);
        while records.len() < cfg.num_rounds {
            let Some(Reverse(event)) = queue.pop() else {
                return Err(SimError::Starved {
                    completed: records.len(),
                    requested: cfg.num_rounds,
                });
            };
            global = aggregate(&global, &event.model, cfg.agg_proportion)?;
            let eval = evaluate(&global, self.data.test).map_err(SimError::Eval)?;
            records.push(record_round(records.len() + 1, &event, eval));
            if records.len() == cfg.num_rounds {
                break;
            }
            let vehicle = fleet
                .iter_mut()
                .find(|v| v.profile.id == event.vehicle_id)
                .expect("events come from fleet vehicles");
            self.start_cycle(vehicle, event.fire_time, &global, &mut queue, &mut departures)?;
        }
        // vehicles still in flight when the run ends are not departures
        Ok(SimTrace {
            records,
            departures,
            final_global: global,
        })
    }
}

/// Runs `cfg.num_rounds` aggregations with physical delays.
pub fn run_simulation(
    cfg: &SimConfig,
    profiles: &[VehicleProfile],
    data: SimData<'_>,
) -> Result<Vec<RoundRecord>, SimError> {
    Ok(Simulation::new(cfg, profiles, data).run()?.records)
}
