//! Run configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Depth at which a transaction counts as confirmed.
pub const CONFIRMATION_DEPTH: u64 = 6;

/// Peer-selection strategy used to build the overlay.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Distance-based: the `P` nodes following `k` on the id ring.
    #[serde(alias = "distance")]
    Normal,
    Random,
    /// `P-1` distance peers plus one random peer.
    Mixed,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Normal, Strategy::Random, Strategy::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Normal => "normal",
            Strategy::Random => "random",
            Strategy::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "distance" => Ok(Strategy::Normal),
            "random" => Ok(Strategy::Random),
            "mixed" => Ok(Strategy::Mixed),
            other => Err(ConfigError::BadValue {
                key: "strategy".into(),
                message: format!("expected normal, random or mixed, got `{other}`"),
            }),
        }
    }
}

/// All parameters of one simulation run. Times are in seconds, sizes in bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Total nodes `C`, including the measurement node 1.
    pub node_count: usize,
    /// Outgoing peers per node `P`.
    pub peer_count: usize,
    pub strategy: Strategy,
    /// Transactions per minute per generating node.
    pub tx_rate: f64,
    /// Network-wide mean block interval.
    pub block_interval: f64,
    /// Mean of the exponential per-message link delay.
    pub mean_link_delay: f64,
    /// Link capacity in bits per second. `inf` disables serialization delay.
    pub bandwidth: f64,
    pub tx_validation_delay: f64,
    pub block_validation_delay: f64,
    pub tx_size: u32,
    /// Maximum transactions per block.
    pub block_capacity: usize,
    pub confirmation_depth: u64,
    /// Generation horizon `T_d`.
    pub duration: f64,
    pub master_seed: u64,
    pub replications: usize,
    /// Relaying continues for at most this long after `duration` with generators stopped.
    pub drain_window: f64,
    /// When set, data messages take exactly this long per hop and inventory
    /// messages are instantaneous. Replaces the exponential link delay.
    pub oracle_hop_delay: Option<f64>,
    /// Bytes per inventory entry in inv/getdata messages.
    pub inv_item_size: u32,
    /// Fixed header bytes of inv/getdata messages.
    pub message_header_size: u32,
    pub block_header_size: u32,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            node_count: 104,
            peer_count: 8,
            strategy: Strategy::Normal,
            tx_rate: 3.0,
            block_interval: 600.0,
            mean_link_delay: 0.011,
            bandwidth: 10_000_000.0,
            tx_validation_delay: 0.080,
            block_validation_delay: 0.080,
            tx_size: 500,
            block_capacity: 2000,
            confirmation_depth: CONFIRMATION_DEPTH,
            duration: 7200.0,
            master_seed: 1,
            replications: 10,
            drain_window: 3600.0,
            oracle_hop_delay: None,
            inv_item_size: 61,
            message_header_size: 24,
            block_header_size: 80,
        }
    }
}

impl Config {
    /// Reads a TOML file of `key = value` pairs; missing keys keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Overrides one key from its textual value, as given on the command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut table = toml::Table::try_from(&*self).expect("config always serializes");
        if !table.contains_key(key) && !OPTIONAL_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let parsed = parse_scalar(value);
        table.insert(key.to_string(), parsed);
        let updated: Config = table.try_into().map_err(|e: toml::de::Error| ConfigError::BadValue {
            key: key.to_string(),
            message: e.message().to_string(),
        })?;
        *self = updated;
        Ok(())
    }

    /// Per-node mean seconds between generated transactions.
    pub fn tx_interval(&self) -> f64 {
        60.0 / self.tx_rate
    }

    /// Switches to the degenerate oracle configuration: no link delay, unlimited
    /// bandwidth and instantaneous validation.
    pub fn make_degenerate(&mut self) {
        self.mean_link_delay = 0.0;
        self.bandwidth = f64::INFINITY;
        self.tx_validation_delay = 0.0;
        self.block_validation_delay = 0.0;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.node_count < 3 {
            return invalid(format!("node_count must be at least 3, got {}", self.node_count));
        }
        if self.peer_count < 1 || self.peer_count > self.node_count - 2 {
            return invalid(format!(
                "peer_count must lie in 1..={}, got {}",
                self.node_count - 2,
                self.peer_count
            ));
        }
        if self.strategy == Strategy::Mixed && self.peer_count < 2 {
            return invalid("mixed strategy needs peer_count >= 2".into());
        }
        for (key, v) in [
            ("tx_rate", self.tx_rate),
            ("block_interval", self.block_interval),
            ("bandwidth", self.bandwidth),
            ("duration", self.duration),
        ] {
            if v.is_nan() || v <= 0.0 {
                return invalid(format!("{key} must be positive, got {v}"));
            }
        }
        for (key, v) in [
            ("mean_link_delay", self.mean_link_delay),
            ("tx_validation_delay", self.tx_validation_delay),
            ("block_validation_delay", self.block_validation_delay),
            ("drain_window", self.drain_window),
        ] {
            if !v.is_finite() || v < 0.0 {
                return invalid(format!("{key} must be finite and non-negative, got {v}"));
            }
        }
        if let Some(d) = self.oracle_hop_delay {
            if !d.is_finite() || d < 0.0 {
                return invalid(format!("oracle_hop_delay must be finite and non-negative, got {d}"));
            }
        }
        if self.tx_size == 0 {
            return invalid("tx_size must be positive".into());
        }
        if self.block_capacity == 0 {
            return invalid("block_capacity must be positive".into());
        }
        if self.confirmation_depth != CONFIRMATION_DEPTH {
            return invalid(format!(
                "confirmation_depth is fixed at {CONFIRMATION_DEPTH}, got {}",
                self.confirmation_depth
            ));
        }
        if self.replications == 0 {
            return invalid("replications must be at least 1".into());
        }
        if self.inv_item_size == 0 {
            return invalid("inv_item_size must be positive".into());
        }
        Ok(())
    }
}

const OPTIONAL_KEYS: &[&str] = &["oracle_hop_delay"];

fn parse_scalar(value: &str) -> toml::Value {
    let wrapped = format!("v = {value}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}
