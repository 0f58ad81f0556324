//! Declarative configuration files.
//!
//! The testbed (bus parameters plus node behavior) and scenario definitions
//! load from TOML. Byte payloads are written as whitespace-separated hex
//! pairs, the way they appear in bus logs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::BusConfig;
use crate::ecu::EcuConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("failed to render config: {0}")]
    Render(#[from] toml::ser::Error),
}

/// Bus and node setup for one simulated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedConfig {
    pub bus: BusSection,
    #[serde(rename = "ecu")]
    pub ecus: Vec<EcuConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusSection {
    pub baud: u32,
    pub frame_bits: u32,
}

impl From<BusSection> for BusConfig {
    fn from(s: BusSection) -> Self {
        BusConfig {
            baud: s.baud,
            frame_bits: s.frame_bits,
        }
    }
}

impl TestbedConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// Whole harness config file: optional testbed override plus optional
/// scenario definitions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HarnessConfig {
    #[serde(default)]
    pub testbed: Option<TestbedConfig>,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<crate::attack::ScenarioSpec>,
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// Serialize byte vectors as hex pairs: `"31 4D 38"`.
pub mod hex_bytes {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        let text = bytes
            .iter()
            .map(|b| format!("{b:02X}"))
            .collect::<Vec<_>>()
            .join(" ");
        ser.serialize_str(&text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(de)?;
        text.split_whitespace()
            .map(|pair| u8::from_str_radix(pair, 16).map_err(de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preset::testbed_preset;

    #[test]
    fn testbed_round_trips_through_toml() {
        let preset = testbed_preset();
        let text = preset.to_toml().unwrap();
        let parsed = TestbedConfig::from_toml(&text).unwrap();
        assert_eq!(parsed, preset);
    }
}
