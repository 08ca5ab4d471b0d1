//! Run configuration read from a TOML file.
//!
//! Every table and key is optional; missing values take the defaults.
//!
//! ```toml
//! [model]
//! variant = "no_gan"
//! z_dim = 32
//!
//! [train]
//! epochs = 20
//! lr = 1e-3
//!
//! [data]
//! test_fraction = 0.2
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::SynthConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Share of each (scenario, subject) group held out for testing.
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Camera-to-torso distance mapped to 1 in the user encoding, meters.
    pub d_max: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            split_seed: 0,
            d_max: 5.0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test_fraction must be in [0, 1), got {}", self.test_fraction)));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(Error::Config(format!("d_max must be positive, got {}", self.d_max)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate().map_err(Error::Config)?;
        self.data.validate()
    }
}
