//! Simulation constants and their validation.
//!
//! [`SimParams::default`] carries the reference values used throughout the
//! evaluation. Overrides are applied by field name with [`make_params`], and
//! a structured TOML file with sections grouping those same field names can
//! be loaded with [`SimParams::from_toml_str`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::phy::McsTable;

/// Every constant the simulator needs.
///
/// Units follow the field comments; durations that the MAC engine consumes
/// are converted to integer microsecond ticks by the accessor methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Number of BSSs (one AP each).
    pub num_bss: usize,
    /// STAs associated to every AP.
    pub stas_per_bss: usize,
    /// Side of the AP square, meters.
    pub inter_ap_distance: f64,
    /// Closed range of AP-to-STA distances, meters.
    pub ap_sta_distance_range: [f64; 2],
    /// Channel bandwidth, MHz.
    pub bandwidth: f64,
    pub num_subcarriers: u32,
    pub num_spatial_streams: u32,
    /// GHz.
    pub carrier_freq: f64,
    /// µs.
    pub t_ofdm: f64,
    /// µs.
    pub t_gi: f64,
    /// ms.
    pub t_txop_max: f64,
    /// µs.
    pub t_mapc: f64,
    /// µs.
    pub t_back: f64,
    /// µs.
    pub t_sifs: f64,
    /// µs.
    pub t_difs: f64,
    /// µs.
    pub t_collision: f64,
    /// µs.
    pub t_empty_slot: f64,
    /// Slots.
    pub cw_min: u32,
    /// Slots.
    pub cw_max: u32,
    /// dB.
    pub capture_threshold: f64,
    /// mW.
    pub tx_power: f64,
    /// W.
    pub noise_power: f64,
    /// dBm.
    pub cca_threshold: f64,
    /// Mean ON period, ms.
    pub t_on: f64,
    /// Mean OFF period, ms.
    pub t_off: f64,
    /// s.
    pub sim_duration: f64,
    /// Bits per data frame.
    pub frame_length: u32,
    /// Walls crossed per 10 m of separation.
    pub walls_per_10m: u32,
    /// Cap on the wall count of any link.
    pub max_walls: u32,
    /// MCS thresholds. Not overridable by key; load a table file instead.
    #[serde(skip)]
    pub mcs_table: McsTable,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            num_bss: 4,
            stas_per_bss: 2,
            inter_ap_distance: 10.0,
            ap_sta_distance_range: [1.0, 10.0],
            bandwidth: 80.0,
            num_subcarriers: 980,
            num_spatial_streams: 2,
            carrier_freq: 6.0,
            t_ofdm: 12.8,
            t_gi: 0.8,
            t_txop_max: 5.0,
            t_mapc: 286.0,
            t_back: 100.0,
            t_sifs: 16.0,
            t_difs: 34.0,
            t_collision: 137.0,
            t_empty_slot: 9.0,
            cw_min: 15,
            cw_max: 1023,
            capture_threshold: 15.0,
            tx_power: 200.0,
            noise_power: 3.2e-13,
            cca_threshold: -82.0,
            t_on: 1.0,
            t_off: 10.0,
            sim_duration: 5.0,
            frame_length: 12_000,
            walls_per_10m: 1,
            max_walls: 2,
            mcs_table: McsTable::default(),
        }
    }
}

/// Override values keyed by field name.
pub type Overrides = BTreeMap<String, toml::Value>;

/// Config-file sections and the fields each one may hold.
const SECTIONS: &[(&str, &[&str])] = &[
    (
        "topology",
        &["num_bss", "stas_per_bss", "inter_ap_distance", "ap_sta_distance_range", "walls_per_10m", "max_walls"],
    ),
    (
        "phy",
        &[
            "bandwidth",
            "num_subcarriers",
            "num_spatial_streams",
            "carrier_freq",
            "t_ofdm",
            "t_gi",
            "capture_threshold",
            "tx_power",
            "noise_power",
            "cca_threshold",
        ],
    ),
    (
        "mac",
        &["t_txop_max", "t_mapc", "t_back", "t_sifs", "t_difs", "t_collision", "t_empty_slot", "cw_min", "cw_max"],
    ),
    ("traffic", &["t_on", "t_off", "frame_length"]),
    ("simulation", &["sim_duration"]),
];

/// Applies `overrides` to the default parameters and validates the result.
pub fn make_params(overrides: &Overrides) -> Result<SimParams, ConfigError> {
    SimParams::default().with_overrides(overrides)
}

impl SimParams {
    pub fn with_overrides(&self, overrides: &Overrides) -> Result<SimParams, ConfigError> {
        let mut table = toml::Table::try_from(self).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (key, value) in overrides {
            if !table.contains_key(key) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
            let value = match (&table[key], value) {
                // Allow integer literals for float fields.
                (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(*i as f64),
                (_, v) => v.clone(),
            };
            table.insert(key.clone(), value);
        }
        let mut params: SimParams = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
        params.mcs_table = self.mcs_table.clone();
        params.validate()?;
        Ok(params)
    }

    /// Parses a sectioned TOML document (`[topology]`, `[phy]`, `[mac]`,
    /// `[traffic]`, `[simulation]`) into parameters. Keys outside their
    /// section, or unknown sections, are rejected.
    pub fn from_toml_str(text: &str) -> Result<SimParams, ConfigError> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        make_params(&flatten_sections(&doc)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, why: &str| Err(ConfigError::InvalidValue { field: field.to_string(), reason: why.to_string() });
        let positive = [
            ("inter_ap_distance", self.inter_ap_distance),
            ("bandwidth", self.bandwidth),
            ("carrier_freq", self.carrier_freq),
            ("t_ofdm", self.t_ofdm),
            ("t_gi", self.t_gi),
            ("t_txop_max", self.t_txop_max),
            ("t_mapc", self.t_mapc),
            ("t_back", self.t_back),
            ("t_sifs", self.t_sifs),
            ("t_difs", self.t_difs),
            ("t_collision", self.t_collision),
            ("t_empty_slot", self.t_empty_slot),
            ("tx_power", self.tx_power),
            ("noise_power", self.noise_power),
            ("t_on", self.t_on),
            ("sim_duration", self.sim_duration),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return invalid(name, "must be strictly positive");
            }
        }
        if !(self.t_off.is_finite() && self.t_off >= 0.0) {
            return invalid("t_off", "must be non-negative");
        }
        if self.num_bss == 0 {
            return invalid("num_bss", "must be at least 1");
        }
        if self.stas_per_bss == 0 {
            return invalid("stas_per_bss", "must be at least 1");
        }
        if self.num_subcarriers == 0 || self.num_spatial_streams == 0 {
            return invalid("num_subcarriers", "subcarriers and spatial streams must be positive");
        }
        if self.frame_length == 0 {
            return invalid("frame_length", "must be positive");
        }
        let [lo, hi] = self.ap_sta_distance_range;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return invalid("ap_sta_distance_range", "need 1 <= lower <= upper");
        }
        for (name, cw) in [("cw_min", self.cw_min), ("cw_max", self.cw_max)] {
            if !(cw + 1).is_power_of_two() || cw == 0 {
                return invalid(name, "must be of the form 2^n - 1");
            }
        }
        if self.cw_min >= self.cw_max {
            return invalid("cw_min", "must be smaller than cw_max");
        }
        if !self.capture_threshold.is_finite() || !self.cca_threshold.is_finite() {
            return invalid("capture_threshold", "thresholds must be finite");
        }
        let txop = self.txop_max_us();
        if txop <= self.coordinated_overhead_us() {
            return invalid("t_txop_max", "must exceed the per-TXOP overheads");
        }
        Ok(())
    }

    pub fn num_pairs(&self) -> usize {
        self.num_bss * self.stas_per_bss
    }

    /// Transmit power in dBm.
    pub fn tx_power_dbm(&self) -> f64 {
        10.0 * self.tx_power.log10()
    }

    /// OFDM symbol plus guard interval, µs.
    pub fn symbol_us(&self) -> f64 {
        self.t_ofdm + self.t_gi
    }

    pub fn txop_max_us(&self) -> u64 {
        (self.t_txop_max * 1000.0).round() as u64
    }

    /// SIFS + BACK, plus the MAPC phase when the TXOP is coordinated.
    pub fn txop_overhead_us(&self, coordinated: bool) -> u64 {
        let base = self.t_sifs + self.t_back;
        let total = if coordinated { base + self.t_mapc } else { base };
        total.ceil() as u64
    }

    fn coordinated_overhead_us(&self) -> u64 {
        self.txop_overhead_us(true)
    }

    pub fn difs_us(&self) -> u64 {
        self.t_difs.ceil() as u64
    }

    pub fn slot_us(&self) -> u64 {
        self.t_empty_slot.ceil() as u64
    }

    pub fn collision_us(&self) -> u64 {
        self.t_collision.ceil() as u64
    }

    pub fn sim_duration_us(&self) -> u64 {
        (self.sim_duration * 1e6).round() as u64
    }
}

fn flatten_sections(doc: &toml::Table) -> Result<Overrides, ConfigError> {
    let mut out = Overrides::new();
    for (section, value) in doc {
        let Some((_, fields)) = SECTIONS.iter().find(|(name, _)| name == section) else {
            return Err(ConfigError::UnknownKey(section.clone()));
        };
        let toml::Value::Table(entries) = value else {
            return Err(ConfigError::Invalid(format!("`{section}` must be a table")));
        };
        for (key, v) in entries {
            if !fields.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(format!("{section}.{key}")));
            }
            out.insert(key.clone(), v.clone());
        }
    }
    Ok(out)
}

/// Parses `key=value` strings (as given on a command line) into overrides.
pub fn parse_override(text: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("expected key=value, got `{text}`")))?;
    let doc: toml::Table = format!("v = {raw}")
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    Ok((key.trim().to_string(), doc["v"].clone()))
}
