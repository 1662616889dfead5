//! Model profile registry files.

use std::collections::BTreeSet;
use std::io::Read;

use geoprobe_core::prompt::{ModelProfile, PromptError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRegistry {
    pub profiles: Vec<ModelProfile>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile registry parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] PromptError),
    #[error("duplicate profile id `{0}`")]
    Duplicate(String),
    #[error("unknown profile `{0}`")]
    Unknown(String),
    #[error("cannot read profiles: {0}")]
    Io(#[from] std::io::Error),
}

impl ProfileRegistry {
    pub fn load(source: impl Read) -> Result<Self, ProfileError> {
        let reg: ProfileRegistry = serde_json::from_reader(source).map_err(|e| ProfileError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let mut seen = BTreeSet::new();
        for p in &self.profiles {
            p.validate()?;
            if !seen.insert(p.id.as_str()) {
                return Err(ProfileError::Duplicate(p.id.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&ModelProfile, ProfileError> {
        self.profiles
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| ProfileError::Unknown(id.to_string()))
    }

    /// The built-in registry of the fourteen base/post-trained profiles.
    pub fn builtin() -> Self {
        Self::load(BUILTIN_PROFILES.as_bytes()).expect("shipped registry is valid")
    }
}

pub const BUILTIN_PROFILES: &str = include_str!("../data/profiles.json");
