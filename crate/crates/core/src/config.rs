//! TOML run and benchmark configuration.
//!
//! A run file names one scenario, algorithm and converter; a matrix file
//! names lists of each. Both share the optional `[sim]`, `[mppt]`, `[cost]`
//! tables. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::converter::{BidirectionalMode, ConverterSpec, Topology};
use crate::costing::CostModel;
use crate::error::{Error, Result};
use crate::mppt::{Algorithm, MpptTunables};
use crate::sim::SimConfig;

/// Default resampling step for trace CSVs, s.
pub const DEFAULT_RESAMPLE_DT: f64 = 1e-3;

/// Converter selection: a topology key plus optional overrides of its
/// defaults. Parameters that do not belong to the topology are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterConfig {
    pub topology: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_out: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<BidirectionalMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_switch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sc_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tank_gain: Option<f64>,
}

impl ConverterConfig {
    pub fn from_key(key: &str) -> Self {
        ConverterConfig {
            topology: key.to_string(),
            efficiency: None,
            v_out: None,
            d_min: None,
            d_max: None,
            mode: None,
            v_f: None,
            v_switch: None,
            levels: None,
            stages: None,
            turns: None,
            sc_gain: None,
            tank_gain: None,
        }
    }

    pub fn to_spec(&self) -> Result<ConverterSpec> {
        let mut topology: Topology = self.topology.parse()?;
        let mut used = 0;
        let mut take = |present: bool| {
            if present {
                used += 1;
            }
        };
        match &mut topology {
            Topology::BidirectionalBuckBoost { mode } => {
                take(self.mode.is_some());
                *mode = self.mode.unwrap_or(*mode);
            }
            Topology::Sepic { v_f, v_switch } => {
                take(self.v_f.is_some());
                take(self.v_switch.is_some());
                *v_f = self.v_f.unwrap_or(*v_f);
                *v_switch = self.v_switch.unwrap_or(*v_switch);
            }
            Topology::MultilevelBoost { levels } => {
                take(self.levels.is_some());
                *levels = self.levels.unwrap_or(*levels);
            }
            Topology::FibonacciSc { stages } => {
                take(self.stages.is_some());
                *stages = self.stages.unwrap_or(*stages);
            }
            Topology::InterleavedScHybrid { sc_gain } => {
                take(self.sc_gain.is_some());
                *sc_gain = self.sc_gain.unwrap_or(*sc_gain);
            }
            Topology::HighStepUpBoost { turns }
            | Topology::Flyback { turns }
            | Topology::Forward { turns }
            | Topology::PushPull { turns }
            | Topology::HalfBridge { turns }
            | Topology::FullBridge { turns } => {
                take(self.turns.is_some());
                *turns = self.turns.unwrap_or(*turns);
            }
            Topology::Resonant {
                turns_ratio,
                tank_gain,
            } => {
                take(self.turns.is_some());
                take(self.tank_gain.is_some());
                *turns_ratio = self.turns.unwrap_or(*turns_ratio);
                *tank_gain = self.tank_gain.unwrap_or(*tank_gain);
            }
            _ => {}
        }
        let given = [
            self.mode.is_some(),
            self.v_f.is_some(),
            self.v_switch.is_some(),
            self.levels.is_some(),
            self.stages.is_some(),
            self.turns.is_some(),
            self.sc_gain.is_some(),
            self.tank_gain.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if given != used {
            return Err(Error::Config(format!(
                "converter `{}` got parameters it does not take",
                self.topology
            )));
        }
        let mut spec = ConverterSpec::new(topology);
        spec.efficiency = self.efficiency.unwrap_or(spec.efficiency);
        spec.v_out = self.v_out.unwrap_or(spec.v_out);
        spec.d_min = self.d_min.unwrap_or(spec.d_min);
        spec.d_max = self.d_max.unwrap_or(spec.d_max);
        spec.validate()?;
        Ok(spec)
    }
}

/// Converters may be given as a bare key or as a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConverterEntry {
    Key(String),
    Table(ConverterConfig),
}

impl ConverterEntry {
    pub fn config(&self) -> ConverterConfig {
        match self {
            ConverterEntry::Key(k) => ConverterConfig::from_key(k),
            ConverterEntry::Table(c) => c.clone(),
        }
    }
}

impl Default for ConverterEntry {
    fn default() -> Self {
        ConverterEntry::Key("boost".into())
    }
}

/// Settings shared by run and matrix files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Common {
    pub sim: SimConfig,
    pub mppt: MpptTunables,
    /// Op-cost weight overrides, keyed by op kind.
    pub cost: BTreeMap<String, f64>,
    /// Resampling step for trace CSVs, s.
    pub resample_dt: Option<f64>,
}

impl Common {
    pub fn validate(&self) -> Result<()> {
        self.mppt.validate()?;
        self.cost_model()?;
        if let Some(dt) = self.resample_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("resample_dt must be > 0, got {dt}")));
            }
        }
        Ok(())
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        CostModel::with_overrides(self.cost.iter().map(|(k, v)| (k.as_str(), *v)))
    }

    pub fn resample_dt(&self) -> f64 {
        self.resample_dt.unwrap_or(DEFAULT_RESAMPLE_DT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub algorithm: String,
    #[serde(default)]
    pub converter: ConverterEntry,
    /// Steady-state window `[t0, t1]` in s; detected automatically if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub mppt: MpptTunables,
    /// Op-cost weight overrides, keyed by op kind.
    #[serde(default)]
    pub cost: BTreeMap<String, f64>,
    /// Resampling step for trace CSVs, s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample_dt: Option<f64>,
}

impl RunConfig {
    pub fn new(scenario: &str, algorithm: &str, converter: &str) -> Self {
        RunConfig {
            scenario: scenario.into(),
            algorithm: algorithm.into(),
            converter: ConverterEntry::Key(converter.into()),
            window: None,
            sim: SimConfig::default(),
            mppt: MpptTunables::default(),
            cost: BTreeMap::new(),
            resample_dt: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.algorithm.parse::<Algorithm>()?;
        self.converter.config().to_spec()?;
        self.common().validate()
    }

    pub fn common(&self) -> Common {
        Common {
            sim: self.sim,
            mppt: self.mppt,
            cost: self.cost.clone(),
            resample_dt: self.resample_dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub algorithms: Vec<String>,
    pub scenarios: Vec<String>,
    #[serde(default = "default_converters")]
    pub converters: Vec<ConverterEntry>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub mppt: MpptTunables,
    /// Op-cost weight overrides, keyed by op kind.
    #[serde(default)]
    pub cost: BTreeMap<String, f64>,
    /// Resampling step for trace CSVs, s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample_dt: Option<f64>,
}

fn default_converters() -> Vec<ConverterEntry> {
    vec![ConverterEntry::default()]
}

impl MatrixConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, n) in [
            ("algorithms", self.algorithms.len()),
            ("scenarios", self.scenarios.len()),
            ("converters", self.converters.len()),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("`{what}` must not be empty")));
            }
        }
        for a in &self.algorithms {
            a.parse::<Algorithm>()?;
        }
        for c in &self.converters {
            c.config().to_spec()?;
        }
        self.common().validate()
    }

    pub fn common(&self) -> Common {
        Common {
            sim: self.sim,
            mppt: self.mppt,
            cost: self.cost.clone(),
            resample_dt: self.resample_dt,
        }
    }
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl std::str::FromStr for RunConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = parse_toml(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for MatrixConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let cfg: MatrixConfig = parse_toml(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_run(path: &Path) -> Result<RunConfig> {
    read(path)?.parse()
}

pub fn load_matrix(path: &Path) -> Result<MatrixConfig> {
    read(path)?.parse()
}
