//! Multi-seed experiments, scheme comparison and the beta sweep.

use std::env;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{default_profiles, Scheme, SimConfig};
use crate::sim::{SimData, SimError, SimTrace, Simulation};
use crate::trainer::data::{load_mnist, partition, synth_split, DataError, Dataset, SynthSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("seed {seed}: {source}")]
    Seed { seed: u64, source: SimError },
    #[error("seed {seed}: {source}")]
    Partition { seed: u64, source: DataError },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("beta {0} is outside (0, 1)")]
    BadBeta(f64),
    #[error("bad data source `{0}`: expected `synth`, `mnist` or `mnist:PATH`")]
    BadSource(String),
    #[error("`mnist` without a path needs MAFL_DATA_DIR to be set")]
    NoDataDir,
}

/// Where training and test data come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Mnist(PathBuf),
    Synth(SynthSpec),
}

impl FromStr for DataSource {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "synth" => Ok(DataSource::Synth(SynthSpec::default())),
            None if s == "mnist" => env::var_os("MAFL_DATA_DIR")
                .map(|dir| DataSource::Mnist(dir.into()))
                .ok_or(ExperimentError::NoDataDir),
            Some(("mnist", path)) if !path.is_empty() => Ok(DataSource::Mnist(path.into())),
            _ => Err(ExperimentError::BadSource(s.to_string())),
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<(Dataset, Dataset), DataError> {
        match self {
            DataSource::Mnist(dir) => load_mnist(dir),
            DataSource::Synth(spec) => Ok(synth_split(spec)),
        }
    }
}

/// Seed-averaged metrics of one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub sim_time_s: f64,
    /// Present when every seed aggregated the same vehicle in this round.
    pub vehicle_id: Option<usize>,
    pub upload_weight: f64,
    pub train_weight: f64,
    pub accuracy_pct: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scheme: Scheme,
    /// Ascending.
    pub seeds: Vec<u64>,
    pub config_fingerprint: String,
    pub rounds: Vec<RoundSummary>,
}

impl ExperimentResult {
    pub fn final_round(&self) -> &RoundSummary {
        self.rounds.last().expect("experiments run at least one round")
    }

    /// Mean accuracy over 1-based rounds `first..=last`.
    pub fn mean_accuracy(&self, first: usize, last: usize) -> f64 {
        mean(self.rounds[first - 1..last].iter().map(|r| r.accuracy_pct))
    }

    /// Mean loss over 1-based rounds `first..=last`.
    pub fn mean_loss(&self, first: usize, last: usize) -> f64 {
        mean(self.rounds[first - 1..last].iter().map(|r| r.loss))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// One simulation with `cfg.rng_seed = seed`: profiles, partition, fading
/// and the initial model all derive from that seed.
pub fn run_seed(cfg: &SimConfig, seed: u64, train: &Dataset, test: &Dataset) -> Result<SimTrace, ExperimentError> {
    let cfg = SimConfig {
        rng_seed: seed,
        ..cfg.clone()
    };
    let profiles = default_profiles(&cfg);
    let shards = partition(train, &profiles, seed)
        .map_err(|source| ExperimentError::Partition { seed, source })?
        .shards;
    let data = SimData {
        train,
        test,
        shards: &shards,
    };
    Simulation::new(&cfg, &profiles, data)
        .run()
        .map_err(|source| ExperimentError::Seed { seed, source })
}

/// Runs every seed (in parallel on the current rayon pool) and averages the
/// per-round metrics in ascending seed order.
pub fn run_experiment(
    cfg: &SimConfig,
    seeds: &[u64],
    train: &Dataset,
    test: &Dataset,
) -> Result<ExperimentResult, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    let traces = seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed, train, test))
        .collect::<Result<Vec<_>, _>>()?;

    let rounds = (0..cfg.num_rounds)
        .map(|i| {
            let recs: Vec<_> = traces.iter().map(|t| &t.records[i]).collect();
            let first = recs[0].vehicle_id;
            RoundSummary {
                round: i + 1,
                sim_time_s: mean(recs.iter().map(|r| r.sim_time)),
                vehicle_id: recs.iter().all(|r| r.vehicle_id == first).then_some(first),
                upload_weight: mean(recs.iter().map(|r| r.upload_weight)),
                train_weight: mean(recs.iter().map(|r| r.train_weight)),
                accuracy_pct: mean(recs.iter().map(|r| r.test_accuracy)),
                loss: mean(recs.iter().map(|r| r.test_loss)),
            }
        })
        .collect();
    Ok(ExperimentResult {
        scheme: cfg.scheme,
        seeds,
        config_fingerprint: cfg.fingerprint(),
        rounds,
    })
}

/// MAFL and AFL on identical seeds, shards, fading and initial models.
pub fn compare(
    cfg: &SimConfig,
    seeds: &[u64],
    train: &Dataset,
    test: &Dataset,
) -> Result<(ExperimentResult, ExperimentResult), ExperimentError> {
    let mafl = SimConfig {
        scheme: Scheme::Mafl,
        ..cfg.clone()
    };
    let afl = SimConfig {
        scheme: Scheme::Afl,
        ..cfg.clone()
    };
    let (a, b) = rayon::join(
        || run_experiment(&mafl, seeds, train, test),
        || run_experiment(&afl, seeds, train, test),
    );
    Ok((a?, b?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    /// Seed-mean accuracy after the last round.
    pub accuracy_pct: f64,
    pub loss: f64,
}

/// Drops repeated betas, keeping first occurrences in order.
pub fn dedup_betas(betas: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(betas.len());
    for &b in betas {
        if out.contains(&b) {
            log::warn!("duplicate beta {b} ignored");
        } else {
            out.push(b);
        }
    }
    out
}

/// Final-round accuracy for each aggregation proportion.
pub fn sweep_beta(
    cfg: &SimConfig,
    betas: &[f64],
    seeds: &[u64],
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<SweepRow>, ExperimentError> {
    if let Some(&bad) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
        return Err(ExperimentError::BadBeta(bad));
    }
    dedup_betas(betas)
        .into_iter()
        .map(|beta| {
            let cfg = SimConfig {
                agg_proportion: beta,
                ..cfg.clone()
            };
            let result = run_experiment(&cfg, seeds, train, test)?;
            let last = result.final_round();
            Ok(SweepRow {
                beta,
                accuracy_pct: last.accuracy_pct,
                loss: last.loss,
            })
        })
        .collect()
}
