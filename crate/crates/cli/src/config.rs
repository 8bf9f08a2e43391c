//! Run configuration shared by the subcommands, loadable from TOML.

use std::path::PathBuf;
use std::str::FromStr;

use clap::ValueEnum;
use pvariv::{InstrumentMode, McConfig, Normalization, VarianceMode};
use serde::{Deserialize, Deserializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Growth,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Lags {
    #[default]
    Auto,
    Fixed(usize),
}

impl FromStr for Lags {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Lags::Auto);
        }
        match s.parse::<usize>() {
            Ok(p) if p > 0 => Ok(Lags::Fixed(p)),
            _ => Err(format!("expected a positive lag order or `auto`, got `{s}`")),
        }
    }
}

impl<'de> Deserialize<'de> for Lags {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(p) => Lags::from_str(&p.to_string()),
            Raw::Text(s) => Lags::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub alpha: f64,
    pub horizon: usize,
    pub variance: VarianceMode,
    pub transform: Transform,
    pub growth_k: usize,
    /// Spending then output column.
    pub vars: Vec<String>,
    pub instrument: Option<String>,
    pub instrument_mode: InstrumentMode,
    pub lags: Lags,
    pub p_max: usize,
    pub normalization: Normalization,
    pub shock_size: Option<f64>,
    /// Monte Carlo design for `mc`.
    pub mc: Option<McConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            out: PathBuf::from("out"),
            alpha: 0.05,
            horizon: 10,
            variance: VarianceMode::Iid,
            transform: Transform::Growth,
            growth_k: 1,
            vars: vec!["exp".into(), "gdp".into()],
            instrument: None,
            instrument_mode: InstrumentMode::CommonAggregate,
            lags: Lags::Auto,
            p_max: 4,
            normalization: Normalization::Unit,
            shock_size: None,
            mc: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.growth_k == 0 {
            return Err("growth_k must be positive".into());
        }
        if self.p_max == 0 {
            return Err("p_max must be positive".into());
        }
        if self.vars.len() != 2 {
            return Err(format!("expected two variables (spending, output), got {}", self.vars.len()));
        }
        if let Some(s) = self.shock_size {
            if !s.is_finite() || s == 0.0 {
                return Err(format!("shock size must be finite and non-zero, got {s}"));
            }
        }
        Ok(())
    }
}
