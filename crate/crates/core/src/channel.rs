//! Vehicle kinematics, RSU geometry, AR(1) Rayleigh fading and the
//! Shannon-rate uplink.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::{BoundaryPolicy, SimConfig, VehicleProfile};
use crate::rng::{self, Domain};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("link unusable: rate {0} bit/s")]
    LinkUnusable(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Road coordinate `d_x(0) + v t` with no boundary handling applied.
pub fn travelled_x(profile: &VehicleProfile, cfg: &SimConfig, t: f64) -> f64 {
    profile.initial_x + cfg.velocity * t
}

/// Position of a vehicle at time `t`. Under [`BoundaryPolicy::Wrap`] the road
/// coordinate is folded back into `[-R, R)`.
pub fn position_at(profile: &VehicleProfile, cfg: &SimConfig, t: f64) -> Position3D {
    let raw = travelled_x(profile, cfg, t);
    let x = match cfg.boundary_policy {
        BoundaryPolicy::Wrap => wrap_into(raw, cfg.coverage_half_width),
        BoundaryPolicy::Exit => raw,
    };
    Position3D {
        x,
        y: cfg.lane_offset,
        z: 0.0,
    }
}

fn wrap_into(x: f64, half_width: f64) -> f64 {
    let span = 2.0 * half_width;
    let folded = (x + half_width).rem_euclid(span) - half_width;
    // rem_euclid can round up to exactly `span`
    if folded >= half_width {
        -half_width
    } else {
        folded
    }
}

/// Euclidean distance from `p` to the RSU antenna at `(0, 0, H)`.
pub fn distance_to_rsu(p: &Position3D, cfg: &SimConfig) -> f64 {
    let dz = p.z - cfg.rsu_height;
    (p.x * p.x + p.y * p.y + dz * dz).sqrt()
}

/// Complex AR(1) fading coefficient of one vehicle with its own noise stream.
#[derive(Clone, Debug)]
pub struct FadingState {
    pub coeff: Complex64,
    rng: ChaCha8Rng,
}

fn complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    // CN(0, 1): each component N(0, 1/2)
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

impl FadingState {
    /// Stationary start `g ~ CN(0, 1)` drawn from the vehicle's own stream.
    pub fn new(seed: u64, vehicle_id: usize) -> Self {
        let mut rng = rng::stream(seed, Domain::Fading, vehicle_id as u64);
        let coeff = complex_normal(&mut rng);
        Self { coeff, rng }
    }

    pub fn with_coeff(coeff: Complex64, seed: u64, vehicle_id: usize) -> Self {
        Self {
            coeff,
            ..Self::new(seed, vehicle_id)
        }
    }

    /// Power gain `h = |g|^2`.
    pub fn gain(&self) -> f64 {
        self.coeff.norm_sqr()
    }
}

/// One AR(1) step: `g' = rho g + sqrt(1 - rho^2) n`, `n ~ CN(0, 1)`.
pub fn step_fading(mut state: FadingState, cfg: &SimConfig) -> FadingState {
    let rho = cfg.fading_rho;
    let innovation = complex_normal(&mut state.rng);
    state.coeff = state.coeff * rho + innovation * (1.0 - rho * rho).sqrt();
    state
}

/// Gains of one vehicle indexed by slot, extended on demand. The fading
/// process advances once per slot whether or not the vehicle transmits.
#[derive(Clone, Debug)]
pub struct FadingTrack {
    state: FadingState,
    gains: Vec<f64>,
}

impl FadingTrack {
    pub fn new(seed: u64, vehicle_id: usize) -> Self {
        let state = FadingState::new(seed, vehicle_id);
        let gains = vec![state.gain()];
        Self { state, gains }
    }

    pub fn gain_at_slot(&mut self, slot: usize, cfg: &SimConfig) -> f64 {
        while self.gains.len() <= slot {
            let next = step_fading(self.state.clone(), cfg);
            self.gains.push(next.gain());
            self.state = next;
        }
        self.gains[slot]
    }
}

/// Slot index containing time `t`.
pub fn slot_of(t: f64, cfg: &SimConfig) -> usize {
    (t / cfg.slot_seconds).floor() as usize
}

/// Shannon uplink rate `B log2(1 + p h d^-alpha / sigma^2)` in bit/s.
pub fn tx_rate(cfg: &SimConfig, gain: f64, distance: f64) -> Result<f64, ChannelError> {
    if distance.is_nan() || distance <= 0.0 {
        return Err(ChannelError::NonPositiveDistance(distance));
    }
    let snr = cfg.tx_power * gain * distance.powf(-cfg.path_loss_exp) / cfg.noise_power;
    Ok(cfg.bandwidth * snr.ln_1p() / std::f64::consts::LN_2)
}

/// Time to push `|w|` bits at `rate`.
pub fn upload_delay(cfg: &SimConfig, rate: f64) -> Result<f64, ChannelError> {
    if rate.is_nan() || rate <= 0.0 {
        return Err(ChannelError::LinkUnusable(rate));
    }
    Ok(cfg.model_size_bits / rate)
}
