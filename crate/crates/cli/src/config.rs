//! Model files.
//!
//! ```toml
//! schema_version = 1
//!
//! [model]
//! family = "example1"
//! s = 1.5
//! j = 0.1
//!
//! [window]
//! lo = 0
//! hi = 2
//! spins = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.5, 0.5, 0.1]]
//! left = [0.5, 0.0, 0.0]
//! right = [2.0, 0.0, 0.0]
//! ```
//!
//! `spins` defaults to the identity at every site. Without a `[window]`
//! section the window is the single site 0 with boundary at the identity.

use std::fmt;
use std::path::Path;

use heislab::model::{LatticeConfig, ModelSpec, Window};
use heislab::GroupElement;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub model: ModelSpec,
    #[serde(default)]
    pub window: Option<WindowSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub lo: i64,
    pub hi: i64,
    #[serde(default)]
    pub spins: Option<Vec<[f64; 3]>>,
    pub left: [f64; 3],
    pub right: [f64; 3],
}

#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn point(v: [f64; 3]) -> GroupElement {
    GroupElement::new(v[0], v[1], v[2])
}

impl ModelFile {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let err = |message: String| ConfigError {
            path: path.to_string(),
            message,
        };
        let file: ModelFile = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        // the model table is flattened into a tagged enum, which ignores
        // unknown keys; compare against the keys the family actually has
        let raw: toml::Table = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        let known = toml::Table::try_from(file.model).map_err(|e| err(e.to_string()))?;
        if let Some(toml::Value::Table(m)) = raw.get("model") {
            if let Some(k) = m.keys().find(|k| !known.contains_key(*k)) {
                return Err(err(format!(
                    "[model] unknown key `{k}` for family {}",
                    file.model.name()
                )));
            }
        }
        if file.schema_version != SCHEMA_VERSION {
            return Err(err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        file.model
            .validate()
            .map_err(|e| err(format!("[model] {e}")))?;
        file.config().map_err(|e| err(format!("[window] {e}")))?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn config(&self) -> heislab::Result<LatticeConfig> {
        let Some(w) = &self.window else {
            return Ok(LatticeConfig::uniform(
                Window::single(0),
                GroupElement::IDENTITY,
            ));
        };
        let window = Window::new(w.lo, w.hi)?;
        let spins = match &w.spins {
            Some(s) => {
                if s.len() != window.len() {
                    return Err(heislab::LabError::InvalidParameter(format!(
                        "{} spins given for a window of {} sites",
                        s.len(),
                        window.len()
                    )));
                }
                s.iter().map(|&v| point(v)).collect()
            }
            None => vec![GroupElement::IDENTITY; window.len()],
        };
        let cfg = LatticeConfig::new(window, spins, point(w.left), point(w.right))?;
        if cfg
            .spins()
            .iter()
            .chain([cfg.left_boundary(), cfg.right_boundary()].iter())
            .any(|x| !x.is_finite())
        {
            return Err(heislab::LabError::NonFinite("non-finite coordinate".into()));
        }
        Ok(cfg)
    }
}
