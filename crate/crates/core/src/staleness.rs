//! Delay-decay weights applied to a local model before upload.
//!
//! Both weights are `decay^(delay - 1)` with delay in seconds, so a delay of
//! exactly one second leaves a model untouched and shorter delays amplify it.
//! No clamping is applied.

use serde::{Deserialize, Serialize};

use crate::config::{Scheme, SimConfig, VehicleProfile};
use crate::model::{ModelError, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayWeights {
    pub upload_weight: f64,
    pub train_weight: f64,
    /// Seconds.
    pub upload_delay: f64,
    /// Seconds.
    pub train_delay: f64,
}

impl DelayWeights {
    /// Weights for the configured scheme. Plain AFL keeps both at 1.
    pub fn for_scheme(cfg: &SimConfig, upload_delay: f64, train_delay: f64) -> Self {
        let (upload_weight, train_weight) = match cfg.scheme {
            Scheme::Mafl => (
                self::upload_weight(cfg, upload_delay),
                self::train_weight(cfg, train_delay),
            ),
            Scheme::Afl => (1.0, 1.0),
        };
        Self {
            upload_weight,
            train_weight,
            upload_delay,
            train_delay,
        }
    }

    pub fn product(&self) -> f64 {
        self.upload_weight * self.train_weight
    }
}

/// `gamma^(delay - 1)`
pub fn upload_weight(cfg: &SimConfig, delay: f64) -> f64 {
    cfg.upload_decay.powf(delay - 1.0)
}

/// `D_i C_y / delta_i`, seconds.
pub fn train_delay(profile: &VehicleProfile, cfg: &SimConfig) -> f64 {
    profile.data_count as f64 * cfg.cycles_per_sample / profile.cpu_freq
}

/// `zeta^(delay - 1)`
pub fn train_weight(cfg: &SimConfig, delay: f64) -> f64 {
    cfg.train_decay.powf(delay - 1.0)
}

/// Multiplies every parameter by `upload_weight * train_weight`.
pub fn weight_local_model(w: &ModelParams, weights: &DelayWeights) -> Result<ModelParams, ModelError> {
    let factor = weights.product();
    if factor == 1.0 {
        return Ok(w.clone());
    }
    w.scale(factor)
}
