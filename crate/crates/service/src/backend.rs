use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use splatseg_core::decoder::{ExternalBackend, GeometricBackend, SegmentationBackend};

/// `baseline` or `external:<shell command>`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    #[default]
    Baseline,
    External(String),
}

impl BackendSpec {
    pub fn build(&self, growth_radius_m: f64) -> Result<Arc<dyn SegmentationBackend>, String> {
        Ok(match self {
            BackendSpec::Baseline => Arc::new(GeometricBackend::new(growth_radius_m).map_err(|e| e.to_string())?),
            BackendSpec::External(cmd) => Arc::new(ExternalBackend::new(cmd.clone())),
        })
    }
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s == "baseline" => Ok(BackendSpec::Baseline),
            Some(("external", cmd)) if !cmd.trim().is_empty() => Ok(BackendSpec::External(cmd.to_string())),
            _ => Err(format!("unknown backend `{s}` (expected `baseline` or `external:<cmd>`)")),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> Self {
        b.to_string()
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Baseline => f.write_str("baseline"),
            BackendSpec::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}
