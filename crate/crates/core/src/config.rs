//! TOML run configuration: a `[data]` table of generator settings and a
//! `[train]` table of model, loss and optimizer settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GeneratorConfig;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: GeneratorConfig,
    pub train: TrainConfig,
}

impl RunConfigFile {
    /// Parses `text`, attributing errors to `path` and a 1-based line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |span| line_of(text, span.start));
            Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: e.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1
}
