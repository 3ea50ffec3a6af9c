//! Flat `key = value` TOML configuration files with a mandatory
//! `version = 1` entry.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

pub const CONFIG_VERSION: i64 = 1;

/// The entries of a flat configuration file, minus `version`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    table: toml::Table,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        match table.remove("version") {
            Some(toml::Value::Integer(CONFIG_VERSION)) => {}
            Some(v) => return Err(Error::Config(format!("unsupported config version {v}"))),
            None => return Err(Error::Config("config is missing `version = 1`".into())),
        }
        if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
            return Err(Error::Config(format!("config must be flat; `{k}` is a table")));
        }
        Ok(Self { table })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Moves the listed keys into a separate config.
    pub fn split_off(&mut self, keys: &[&str]) -> FlatConfig {
        let mut taken = toml::Table::new();
        for k in keys {
            if let Some(v) = self.table.remove(*k) {
                taken.insert(k.to_string(), v);
            }
        }
        FlatConfig { table: taken }
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Deserializes into `T`, whose serde attributes reject unknown keys and
    /// fill in defaults.
    pub fn into_typed<T: DeserializeOwned>(self, what: &str) -> Result<T> {
        toml::Value::Table(self.table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{what}: {}", e.message())))
    }
}
