//! Experiment configuration and per-vehicle profiles.
//!
//! Configuration text is either a flat list of dotted `key = value`
//! assignments (one per line, `#` starts a comment) or an equivalent JSON
//! tree. Both forms go through the same key table, so a key is valid in one
//! form exactly when it is valid in the other.
//!
//! ```text
//! network.num_vehicles = 10
//! channel.noise_power = 1e-11 mW
//! learning.agg_proportion = 0.5
//! ```
//!
//! Power values accept a `W`, `mW` or `dBm` suffix and are stored in watts.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{self, Domain};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{}unknown key `{key}`", at_line(*.line))]
    UnknownKey { line: Option<usize>, key: String },
    #[error("{}invalid value for `{key}`: {message}", at_line(*.line))]
    BadValue {
        line: Option<usize>,
        key: String,
        message: String,
    },
    #[error("{field} must be {bound} (got {value})")]
    Validation {
        field: &'static str,
        bound: &'static str,
        value: String,
    },
    #[error("invalid JSON config: {0}")]
    Json(String),
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

fn at_line(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Delay-weighted uploads.
    Mafl,
    /// Plain asynchronous aggregation, all weights 1.
    Afl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryPolicy {
    /// A vehicle passing `+R` re-enters at `-R`.
    Wrap,
    /// A vehicle passing `+R` leaves the simulation.
    Exit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SoftmaxRegression,
    Mlp1Hidden,
}

macro_rules! keyword_enum {
    ($ty:ident { $($text:literal => $variant:ident),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($ty::$variant),)+
                    other => Err(format!(
                        "expected one of {}, got `{other}`",
                        [$($text),+].join("|")
                    )),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text,)+ })
            }
        }
    };
}

keyword_enum!(Scheme { "mafl" => Mafl, "afl" => Afl });
keyword_enum!(BoundaryPolicy { "wrap" => Wrap, "exit" => Exit });
keyword_enum!(ModelKind { "softmax_regression" => SoftmaxRegression, "mlp_1hidden" => Mlp1Hidden });

/// All scalar parameters of one simulated experiment. SI units throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// K
    pub num_vehicles: usize,
    /// v, m/s
    pub velocity: f64,
    /// H, m
    pub rsu_height: f64,
    /// d_y, m
    pub lane_offset: f64,
    /// C_y, CPU cycles per training sample
    pub cycles_per_sample: f64,
    /// |w|, bits
    pub model_size_bits: f64,
    /// B, Hz
    pub bandwidth: f64,
    /// p_m, W
    pub tx_power: f64,
    /// alpha
    pub path_loss_exp: f64,
    /// sigma^2, W
    pub noise_power: f64,
    /// beta, share of the previous global model kept on aggregation
    pub agg_proportion: f64,
    /// gamma
    pub upload_decay: f64,
    /// zeta
    pub train_decay: f64,
    /// M
    pub num_rounds: usize,
    /// l
    pub local_iters: usize,
    /// eta
    pub learning_rate: f64,
    /// Samples per SGD iteration; 0 means the whole shard.
    pub batch_size: usize,
    pub model: ModelKind,
    /// Hidden units of the MLP model; ignored for softmax regression.
    pub hidden_width: usize,
    /// Channel sampling slot, s
    pub slot_seconds: f64,
    /// R, m
    pub coverage_half_width: f64,
    pub boundary_policy: BoundaryPolicy,
    /// AR(1) fading coefficient rho
    pub fading_rho: f64,
    pub rng_seed: u64,
    pub scheme: Scheme,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_vehicles: 10,
            velocity: 20.0,
            rsu_height: 10.0,
            lane_offset: 10.0,
            cycles_per_sample: 1e5,
            model_size_bits: 5000.0,
            bandwidth: 1e5,
            tx_power: 0.1,
            path_loss_exp: 2.0,
            // 1e-11 mW
            noise_power: 1e-14,
            agg_proportion: 0.5,
            upload_decay: 0.9,
            train_decay: 0.9,
            num_rounds: 100,
            local_iters: 5,
            learning_rate: 0.1,
            batch_size: 0,
            model: ModelKind::SoftmaxRegression,
            hidden_width: 64,
            slot_seconds: 1.0,
            coverage_half_width: 500.0,
            boundary_policy: BoundaryPolicy::Wrap,
            fading_rho: 0.99,
            rng_seed: 1,
            scheme: Scheme::Mafl,
        }
    }
}

/// Every accepted key, in serialization order.
pub const KEYS: &[&str] = &[
    "network.num_vehicles",
    "network.rsu_height",
    "network.lane_offset",
    "network.coverage_half_width",
    "network.boundary_policy",
    "network.slot_seconds",
    "mobility.velocity",
    "channel.bandwidth",
    "channel.tx_power",
    "channel.path_loss_exp",
    "channel.noise_power",
    "channel.fading_rho",
    "compute.cycles_per_sample",
    "model.kind",
    "model.size_bits",
    "model.hidden_width",
    "learning.agg_proportion",
    "learning.upload_decay",
    "learning.train_decay",
    "learning.num_rounds",
    "learning.local_iters",
    "learning.learning_rate",
    "learning.batch_size",
    "experiment.rng_seed",
    "experiment.scheme",
];

impl SimConfig {
    /// Parses flat or JSON configuration text on top of the defaults and
    /// validates the result.
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if source.trim_start().starts_with('{') {
            cfg.apply_json(source)?;
        } else {
            cfg.apply_flat(source)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    fn apply_flat(&mut self, source: &str) -> Result<(), ConfigError> {
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let Some((key, value)) = text.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `key = value`, got `{text}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    message: "empty key".into(),
                });
            }
            self.set_at(key, value.trim().trim_matches('"'), Some(line))?;
        }
        Ok(())
    }

    fn apply_json(&mut self, source: &str) -> Result<(), ConfigError> {
        let tree: serde_json::Value = serde_json::from_str(source).map_err(|e| ConfigError::Json(e.to_string()))?;
        let mut leaves = Vec::new();
        flatten_json("", &tree, &mut leaves)?;
        for (key, value) in leaves {
            self.set_at(&key, &value, None)?;
        }
        Ok(())
    }

    /// Sets one dotted key from its textual value. Does not validate ranges.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_at(key, value, None)
    }

    fn set_at(&mut self, key: &str, value: &str, line: Option<usize>) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::BadValue {
            line,
            key: key.to_string(),
            message,
        };
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
        }
        match key {
            "network.num_vehicles" => self.num_vehicles = num(value).map_err(bad)?,
            "network.rsu_height" => self.rsu_height = num(value).map_err(bad)?,
            "network.lane_offset" => self.lane_offset = num(value).map_err(bad)?,
            "network.coverage_half_width" => self.coverage_half_width = num(value).map_err(bad)?,
            "network.boundary_policy" => self.boundary_policy = value.parse().map_err(bad)?,
            "network.slot_seconds" => self.slot_seconds = num(value).map_err(bad)?,
            "mobility.velocity" => self.velocity = num(value).map_err(bad)?,
            "channel.bandwidth" => self.bandwidth = num(value).map_err(bad)?,
            "channel.tx_power" => self.tx_power = parse_power(value).map_err(bad)?,
            "channel.path_loss_exp" => self.path_loss_exp = num(value).map_err(bad)?,
            "channel.noise_power" => self.noise_power = parse_power(value).map_err(bad)?,
            "channel.fading_rho" => self.fading_rho = num(value).map_err(bad)?,
            "compute.cycles_per_sample" => self.cycles_per_sample = num(value).map_err(bad)?,
            "model.kind" => self.model = value.parse().map_err(bad)?,
            "model.size_bits" => self.model_size_bits = num(value).map_err(bad)?,
            "model.hidden_width" => self.hidden_width = num(value).map_err(bad)?,
            "learning.agg_proportion" => self.agg_proportion = num(value).map_err(bad)?,
            "learning.upload_decay" => self.upload_decay = num(value).map_err(bad)?,
            "learning.train_decay" => self.train_decay = num(value).map_err(bad)?,
            "learning.num_rounds" => self.num_rounds = num(value).map_err(bad)?,
            "learning.local_iters" => self.local_iters = num(value).map_err(bad)?,
            "learning.learning_rate" => self.learning_rate = num(value).map_err(bad)?,
            "learning.batch_size" => self.batch_size = num(value).map_err(bad)?,
            "experiment.rng_seed" => self.rng_seed = num(value).map_err(bad)?,
            "experiment.scheme" => self.scheme = value.parse().map_err(bad)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// `(key, value)` pairs in [`KEYS`] order; values re-parse to identical fields.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.num_vehicles.to_string(),
            fmt_f64(self.rsu_height),
            fmt_f64(self.lane_offset),
            fmt_f64(self.coverage_half_width),
            self.boundary_policy.to_string(),
            fmt_f64(self.slot_seconds),
            fmt_f64(self.velocity),
            fmt_f64(self.bandwidth),
            fmt_f64(self.tx_power),
            fmt_f64(self.path_loss_exp),
            fmt_f64(self.noise_power),
            fmt_f64(self.fading_rho),
            fmt_f64(self.cycles_per_sample),
            self.model.to_string(),
            fmt_f64(self.model_size_bits),
            self.hidden_width.to_string(),
            fmt_f64(self.agg_proportion),
            fmt_f64(self.upload_decay),
            fmt_f64(self.train_decay),
            self.num_rounds.to_string(),
            self.local_iters.to_string(),
            fmt_f64(self.learning_rate),
            self.batch_size.to_string(),
            self.rng_seed.to_string(),
            self.scheme.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// Flat `key = value` text accepted by [`SimConfig::parse`].
    pub fn to_flat_string(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hash of every field except the seed and the scheme, so two runs that
    /// differ only in those share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (key, value) in self.entries() {
            if key == "experiment.rng_seed" || key == "experiment.scheme" {
                continue;
            }
            hasher.update(key.as_bytes());
            hasher.update(b"=");
            hasher.update(value.as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(
            ok: bool,
            field: &'static str,
            bound: &'static str,
            value: impl fmt::Display,
        ) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Validation {
                    field,
                    bound,
                    value: value.to_string(),
                })
            }
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let unit_open = |x: f64| x > 0.0 && x < 1.0;

        check(self.num_vehicles >= 1, "num_vehicles", ">= 1", self.num_vehicles)?;
        check(positive(self.velocity), "velocity", "> 0", self.velocity)?;
        check(positive(self.rsu_height), "rsu_height", "> 0", self.rsu_height)?;
        check(positive(self.lane_offset), "lane_offset", "> 0", self.lane_offset)?;
        check(
            positive(self.cycles_per_sample),
            "cycles_per_sample",
            "> 0",
            self.cycles_per_sample,
        )?;
        check(
            positive(self.model_size_bits),
            "model_size_bits",
            "> 0",
            self.model_size_bits,
        )?;
        check(positive(self.bandwidth), "bandwidth", "> 0", self.bandwidth)?;
        check(positive(self.tx_power), "tx_power", "> 0", self.tx_power)?;
        check(positive(self.path_loss_exp), "path_loss_exp", "> 0", self.path_loss_exp)?;
        check(positive(self.noise_power), "noise_power", "> 0", self.noise_power)?;
        check(
            unit_open(self.agg_proportion),
            "agg_proportion",
            "in (0, 1)",
            self.agg_proportion,
        )?;
        check(
            unit_open(self.upload_decay),
            "upload_decay",
            "in (0, 1)",
            self.upload_decay,
        )?;
        check(
            unit_open(self.train_decay),
            "train_decay",
            "in (0, 1)",
            self.train_decay,
        )?;
        check(self.num_rounds >= 1, "num_rounds", ">= 1", self.num_rounds)?;
        check(self.local_iters >= 1, "local_iters", ">= 1", self.local_iters)?;
        check(positive(self.learning_rate), "learning_rate", "> 0", self.learning_rate)?;
        check(
            self.model != ModelKind::Mlp1Hidden || self.hidden_width >= 1,
            "hidden_width",
            ">= 1",
            self.hidden_width,
        )?;
        check(positive(self.slot_seconds), "slot_seconds", "> 0", self.slot_seconds)?;
        check(
            positive(self.coverage_half_width),
            "coverage_half_width",
            "> 0",
            self.coverage_half_width,
        )?;
        check(
            (0.0..1.0).contains(&self.fading_rho),
            "fading_rho",
            "in [0, 1)",
            self.fading_rho,
        )?;
        Ok(())
    }
}

fn fmt_f64(x: f64) -> String {
    // `{:?}` is the shortest representation that parses back to the same bits.
    format!("{x:?}")
}

fn flatten_json(prefix: &str, value: &serde_json::Value, out: &mut Vec<(String, String)>) -> Result<(), ConfigError> {
    use serde_json::Value;
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten_json(&key(k), v, out)?;
            }
        }
        Value::Number(n) => out.push((prefix.to_string(), n.to_string())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::Null | Value::Array(_) => {
            return Err(ConfigError::BadValue {
                line: None,
                key: prefix.to_string(),
                message: "expected a number, string or object".into(),
            })
        }
    }
    Ok(())
}

/// Parses a power with an optional `W`, `mW` or `dBm` unit into watts.
pub fn parse_power(text: &str) -> Result<f64, String> {
    let text = text.trim();
    let split = text
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(text.len());
    let (number, unit) = text.split_at(split);
    let value: f64 = number.trim().parse().map_err(|e| format!("`{text}`: {e}"))?;
    match unit.trim() {
        "" | "W" | "w" => Ok(value),
        "mW" | "mw" => Ok(value * 1e-3),
        "dBm" | "dbm" => Ok(10f64.powf(value / 10.0) * 1e-3),
        other => Err(format!("unknown power unit `{other}` (use W, mW or dBm)")),
    }
}

/// Static description of one vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleProfile {
    /// 1-based.
    pub id: usize,
    /// D_i, training samples carried.
    pub data_count: usize,
    /// delta_i, cycles/s.
    pub cpu_freq: f64,
    /// d_x(0), m.
    pub initial_x: f64,
}

/// D_i = 2250 + 3750 i
pub fn default_data_count(id: usize) -> usize {
    2250 + 3750 * id
}

/// delta_i = 1.5 (i + 5) 1e8 cycles/s
pub fn default_cpu_freq(id: usize) -> f64 {
    1.5 * (id as f64 + 5.0) * 1e8
}

/// K profiles with the default data and CPU schedules. Start positions are
/// uniform in `[-R, R)` and depend only on `cfg.rng_seed`.
pub fn default_profiles(cfg: &SimConfig) -> Vec<VehicleProfile> {
    let mut rng = rng::stream(cfg.rng_seed, Domain::Profiles, 0);
    let r = cfg.coverage_half_width;
    (1..=cfg.num_vehicles)
        .map(|id| VehicleProfile {
            id,
            data_count: default_data_count(id),
            cpu_freq: default_cpu_freq(id),
            initial_x: rng.gen_range(-r..r),
        })
        .collect()
}
