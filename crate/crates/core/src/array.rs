//! Series/parallel composition of devices into arrays with per-device
//! shading. Bypass diodes are ideal (0 V clamp) and parallel branches carry
//! ideal blocking diodes, so no branch ever sinks reverse current.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pv::{CellModel, CellParams, Device, Environment, IvCurve};
use crate::solve::newton_bracketed;

/// Slack allowed when a requested current sits on a short-circuit boundary.
const CURRENT_SLACK: f64 = 1e-12;
const VOLTAGE_TOL: f64 = 1e-12;
const CURRENT_TOL: f64 = 1e-14;
pub const MIN_TABLE_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayNode {
    Device(Device),
    Series(Vec<ArrayNode>),
    Parallel(Vec<ArrayNode>),
    Bypassed(Box<ArrayNode>),
}

/// Global operating conditions applied on top of each device's own
/// environment: irradiance is scaled by `irradiance / 1000`, and a present
/// `temperature` replaces every device temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditions {
    pub irradiance: f64,
    pub temperature: Option<f64>,
}

impl Conditions {
    pub const NOMINAL: Conditions = Conditions {
        irradiance: 1000.0,
        temperature: None,
    };

    fn apply(&self, env: &Environment) -> Environment {
        Environment {
            irradiance: env.irradiance * self.irradiance / 1000.0,
            temperature: self.temperature.unwrap_or(env.temperature),
        }
    }
}

impl ArrayNode {
    pub fn device(params: CellParams, irradiance: f64, temperature: f64) -> Self {
        ArrayNode::Device(Device::new(
            params,
            Environment::new(irradiance, temperature),
        ))
    }

    pub fn bypassed(self) -> Self {
        ArrayNode::Bypassed(Box::new(self))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ArrayNode::Device(d) => {
                d.params.validate()?;
                if !(d.env.irradiance >= 0.0) {
                    return Err(Error::Config(format!(
                        "device irradiance must be >= 0, got {}",
                        d.env.irradiance
                    )));
                }
                Ok(())
            }
            ArrayNode::Series(c) | ArrayNode::Parallel(c) => {
                if c.is_empty() {
                    return Err(Error::Config(
                        "series/parallel node needs at least one child".into(),
                    ));
                }
                c.iter().try_for_each(ArrayNode::validate)
            }
            ArrayNode::Bypassed(c) => c.validate(),
        }
    }

    pub fn devices(&self) -> Vec<&Device> {
        let mut out = Vec::new();
        self.collect_devices(&mut out);
        out
    }

    fn collect_devices<'a>(&'a self, out: &mut Vec<&'a Device>) {
        match self {
            ArrayNode::Device(d) => out.push(d),
            ArrayNode::Series(c) | ArrayNode::Parallel(c) => {
                c.iter().for_each(|n| n.collect_devices(out))
            }
            ArrayNode::Bypassed(c) => c.collect_devices(out),
        }
    }

    /// Same tree with every device moved to `env`.
    pub fn with_uniform_environment(&self, env: Environment) -> ArrayNode {
        match self {
            ArrayNode::Device(d) => ArrayNode::Device(Device::new(d.params, env)),
            ArrayNode::Series(c) => {
                ArrayNode::Series(c.iter().map(|n| n.with_uniform_environment(env)).collect())
            }
            ArrayNode::Parallel(c) => {
                ArrayNode::Parallel(c.iter().map(|n| n.with_uniform_environment(env)).collect())
            }
            ArrayNode::Bypassed(c) => {
                ArrayNode::Bypassed(Box::new(c.with_uniform_environment(env)))
            }
        }
    }

    /// Solvable form of the tree under `cond`.
    pub fn circuit(&self, cond: &Conditions) -> Result<Circuit> {
        Ok(match self {
            ArrayNode::Device(d) => {
                let model = CellModel::new(&d.params, &cond.apply(&d.env))?;
                let isc = model.short_circuit_current()?;
                let voc = model.voltage(0.0)?;
                Circuit::Cell { model, isc, voc }
            }
            ArrayNode::Series(c) => {
                let children = c
                    .iter()
                    .map(|n| n.circuit(cond))
                    .collect::<Result<Vec<_>>>()?;
                Circuit::series(children)?
            }
            ArrayNode::Parallel(c) => {
                let children = c
                    .iter()
                    .map(|n| n.circuit(cond))
                    .collect::<Result<Vec<_>>>()?;
                Circuit::parallel(children)
            }
            ArrayNode::Bypassed(c) => Circuit::Bypassed(Box::new(c.circuit(cond)?)),
        })
    }

    pub fn current_at(&self, v: f64) -> Result<f64> {
        self.circuit(&Conditions::NOMINAL)?.current_at(v)
    }

    pub fn voltage_at(&self, i: f64) -> Result<f64> {
        self.circuit(&Conditions::NOMINAL)?.voltage_at(i)
    }

    pub fn open_circuit_voltage(&self) -> Result<f64> {
        Ok(self.circuit(&Conditions::NOMINAL)?.open_circuit_voltage())
    }

    pub fn short_circuit_current(&self) -> Result<f64> {
        Ok(self.circuit(&Conditions::NOMINAL)?.short_circuit_current())
    }

    pub fn tabulate(&self, n_points: usize) -> Result<CurveTable> {
        self.circuit(&Conditions::NOMINAL)?
            .tabulate(n_points, Exec::default())
    }
}

impl IvCurve for ArrayNode {
    fn current_at(&self, v: f64) -> Result<f64> {
        ArrayNode::current_at(self, v)
    }
}

/// An [`ArrayNode`] with every device model evaluated at fixed conditions.
#[derive(Debug, Clone)]
pub enum Circuit {
    Cell {
        model: CellModel,
        isc: f64,
        voc: f64,
    },
    Series {
        children: Vec<Circuit>,
        isc: f64,
        voc: f64,
        bypassable: bool,
    },
    Parallel {
        children: Vec<Circuit>,
        isc: f64,
        voc: f64,
        bypassable: bool,
    },
    Bypassed(Box<Circuit>),
}

impl Circuit {
    fn series(children: Vec<Circuit>) -> Result<Circuit> {
        let bypassable = children.iter().all(Circuit::can_bypass);
        let isc = if bypassable {
            children
                .iter()
                .map(Circuit::short_circuit_current)
                .fold(0.0, f64::max)
        } else {
            children
                .iter()
                .filter(|c| !c.can_bypass())
                .map(Circuit::short_circuit_current)
                .fold(f64::INFINITY, f64::min)
        };
        let voc = children.iter().map(Circuit::open_circuit_voltage).sum();
        Ok(Circuit::Series {
            children,
            isc,
            voc,
            bypassable,
        })
    }

    fn parallel(children: Vec<Circuit>) -> Circuit {
        let bypassable = children.iter().any(Circuit::can_bypass);
        let isc = children.iter().map(Circuit::short_circuit_current).sum();
        let voc = children
            .iter()
            .map(Circuit::open_circuit_voltage)
            .fold(0.0, f64::max);
        Circuit::Parallel {
            children,
            isc,
            voc,
            bypassable,
        }
    }

    pub fn short_circuit_current(&self) -> f64 {
        match self {
            Circuit::Cell { isc, .. }
            | Circuit::Series { isc, .. }
            | Circuit::Parallel { isc, .. } => *isc,
            Circuit::Bypassed(c) => c.short_circuit_current(),
        }
    }

    pub fn open_circuit_voltage(&self) -> f64 {
        match self {
            Circuit::Cell { voc, .. }
            | Circuit::Series { voc, .. }
            | Circuit::Parallel { voc, .. } => *voc,
            Circuit::Bypassed(c) => c.open_circuit_voltage(),
        }
    }

    /// Whether the node can carry currents above its short-circuit current
    /// (at 0 V) through a bypass path.
    fn can_bypass(&self) -> bool {
        match self {
            Circuit::Cell { .. } => false,
            Circuit::Series { bypassable, .. } | Circuit::Parallel { bypassable, .. } => {
                *bypassable
            }
            Circuit::Bypassed(_) => true,
        }
    }

    /// Terminal current at `v` and `dI/dV`.
    fn current_and_slope(&self, v: f64) -> Result<(f64, f64)> {
        match self {
            Circuit::Cell { model, .. } => {
                let i = model.current(v)?;
                Ok((i, model.di_dv(v, i)))
            }
            Circuit::Bypassed(c) => c.current_and_slope(v.max(0.0)),
            Circuit::Parallel { children, .. } => {
                let mut total = (0.0, 0.0);
                for c in children {
                    let (i, s) = c.current_and_slope(v)?;
                    if i > 0.0 {
                        total.0 += i;
                        total.1 += s;
                    }
                }
                Ok(total)
            }
            Circuit::Series {
                children, isc, voc, ..
            } => {
                if v >= *voc {
                    return Ok((0.0, 0.0));
                }
                let sum_at = |i: f64| -> Result<(f64, f64)> {
                    let mut total = (0.0, 0.0);
                    for c in children {
                        let (cv, cs) = c.voltage_and_slope(i)?;
                        total.0 += cv;
                        total.1 += cs;
                    }
                    Ok(total)
                };
                let (v_cap, _) = sum_at(*isc)?;
                if v <= v_cap {
                    return Ok((*isc, 0.0));
                }
                let i = newton_bracketed(
                    |i| sum_at(i).map(|(s, ds)| (s - v, ds)),
                    0.0,
                    *isc,
                    0.5 * isc,
                    CURRENT_TOL,
                    0.0,
                    "series current",
                )?;
                let (_, dv_di) = sum_at(i)?;
                Ok((i, 1.0 / dv_di))
            }
        }
    }

    /// Terminal voltage carrying `i` and `dV/dI`. Currents above the
    /// short-circuit current are accepted only by bypassable nodes (at 0 V).
    fn voltage_and_slope(&self, i: f64) -> Result<(f64, f64)> {
        let isc = self.short_circuit_current();
        if i > isc {
            if self.can_bypass() {
                return Ok((0.0, 0.0));
            }
            if i > isc + CURRENT_SLACK {
                return Err(Error::OutOfRange {
                    what: "node current",
                    value: i,
                    lo: 0.0,
                    hi: isc,
                });
            }
            return Ok((0.0, 0.0));
        }
        match self {
            Circuit::Cell { model, .. } => {
                let v = model.voltage(i)?;
                Ok((v, model.dv_di(v, i)))
            }
            Circuit::Bypassed(c) => c.voltage_and_slope(i),
            Circuit::Series { children, .. } => {
                let mut total = (0.0, 0.0);
                for c in children {
                    let (v, s) = c.voltage_and_slope(i)?;
                    total.0 += v;
                    total.1 += s;
                }
                Ok(total)
            }
            Circuit::Parallel { voc, .. } => {
                if i <= 0.0 {
                    return Ok((*voc, f64::NEG_INFINITY));
                }
                let v = newton_bracketed(
                    |v| self.current_and_slope(v).map(|(c, s)| (c - i, s)),
                    0.0,
                    *voc,
                    0.5 * voc,
                    VOLTAGE_TOL,
                    0.0,
                    "parallel voltage",
                )?;
                let (_, di_dv) = self.current_and_slope(v)?;
                Ok((v, 1.0 / di_dv))
            }
        }
    }

    pub fn current_at(&self, v: f64) -> Result<f64> {
        if !(v >= 0.0) {
            return Err(Error::OutOfRange {
                what: "terminal voltage",
                value: v,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        Ok(self.current_and_slope(v)?.0)
    }

    pub fn voltage_at(&self, i: f64) -> Result<f64> {
        let isc = self.short_circuit_current();
        if !(i >= 0.0) || i > isc + CURRENT_SLACK {
            return Err(Error::OutOfRange {
                what: "node current",
                value: i,
                lo: 0.0,
                hi: isc,
            });
        }
        Ok(self.voltage_and_slope(i)?.0)
    }

    /// Uniform sweep over `[0, V_oc]`.
    pub fn tabulate(&self, n_points: usize, exec: Exec) -> Result<CurveTable> {
        if n_points < MIN_TABLE_POINTS {
            return Err(Error::Config(format!(
                "a curve table needs at least {MIN_TABLE_POINTS} points"
            )));
        }
        let voc = self.open_circuit_voltage();
        let step = voc / (n_points - 1) as f64;
        let points = exec
            .map_range(n_points, |j| {
                let v = step * j as f64;
                self.current_at(v).map(|i| (v, i))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(CurveTable { points })
    }
}

impl IvCurve for Circuit {
    fn current_at(&self, v: f64) -> Result<f64> {
        Circuit::current_at(self, v)
    }
}

/// Sampled terminal curve, voltages increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub points: Vec<(f64, f64)>,
}

impl CurveTable {
    pub fn powers(&self) -> Vec<f64> {
        self.points.iter().map(|(v, i)| v * i).collect()
    }

    /// Index of the largest sampled power.
    pub fn peak_index(&self) -> usize {
        let p = self.powers();
        (0..p.len()).fold(0, |best, j| if p[j] > p[best] { j } else { best })
    }

    /// Indices of strict interior local maxima of power.
    pub fn local_maxima(&self) -> Vec<usize> {
        local_maxima(&self.powers())
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].0 > w[0].0 && w[1].1 <= w[0].1 + slack)
    }
}

/// Strict local maxima of a sampled series, ignoring a relative ripple of
/// `1e-9` of the series maximum so that solver noise on flat stretches does
/// not count as a peak.
pub fn local_maxima(p: &[f64]) -> Vec<usize> {
    let scale = p.iter().cloned().fold(0.0, f64::max);
    let eps = 1e-9 * scale;
    let mut out = Vec::new();
    let mut j = 1;
    while j + 1 < p.len() {
        if p[j] > p[j - 1] + eps {
            // walk across a plateau
            let mut k = j;
            while k + 1 < p.len() && (p[k + 1] - p[j]).abs() <= eps {
                k += 1;
            }
            if k + 1 < p.len() && p[k + 1] < p[j] - eps {
                out.push(j);
            }
            j = k + 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Named array fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PscScenario {
    TwoPeaks,
    ThreePeaks,
    Moderate,
    Strong,
    Tct,
    Stc,
}

impl PscScenario {
    pub const ALL: [PscScenario; 6] = [
        PscScenario::TwoPeaks,
        PscScenario::ThreePeaks,
        PscScenario::Moderate,
        PscScenario::Strong,
        PscScenario::Tct,
        PscScenario::Stc,
    ];
    pub const SHADED: [PscScenario; 5] = [
        PscScenario::TwoPeaks,
        PscScenario::ThreePeaks,
        PscScenario::Moderate,
        PscScenario::Strong,
        PscScenario::Tct,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            PscScenario::TwoPeaks => "two_peaks",
            PscScenario::ThreePeaks => "three_peaks",
            PscScenario::Moderate => "moderate",
            PscScenario::Strong => "strong",
            PscScenario::Tct => "tct",
            PscScenario::Stc => "stc",
        }
    }

    /// Per-module irradiance of one series string, in string order.
    pub fn string_irradiance(&self) -> &'static [f64] {
        match self {
            PscScenario::TwoPeaks => &TWO_PEAKS_STRING,
            PscScenario::ThreePeaks => &THREE_PEAKS_STRING,
            PscScenario::Moderate => &MODERATE_STRING,
            PscScenario::Strong => &STRONG_STRING,
            PscScenario::Tct => &TCT_ROWS,
            PscScenario::Stc => &[1000.0],
        }
    }

    pub fn build(&self) -> ArrayNode {
        self.build_with(CellParams::reference())
    }

    /// Builds the fixture with `module` as every device.
    pub fn build_with(&self, module: CellParams) -> ArrayNode {
        let t = crate::pv::T_STC;
        let string = |g: &[f64]| {
            ArrayNode::Series(
                g.iter()
                    .map(|&g| ArrayNode::device(module, g, t).bypassed())
                    .collect(),
            )
        };
        match self {
            PscScenario::Stc => ArrayNode::device(module, 1000.0, t),
            PscScenario::TwoPeaks | PscScenario::ThreePeaks => string(self.string_irradiance()),
            PscScenario::Moderate | PscScenario::Strong => ArrayNode::Parallel(
                (0..PARALLEL_STRINGS)
                    .map(|_| string(self.string_irradiance()))
                    .collect(),
            ),
            PscScenario::Tct => ArrayNode::Series(
                TCT_ROWS
                    .iter()
                    .map(|&g| {
                        ArrayNode::Parallel(
                            (0..TCT_ROW_WIDTH)
                                .map(|_| ArrayNode::device(module, g, t))
                                .collect(),
                        )
                        .bypassed()
                    })
                    .collect(),
            ),
        }
    }
}

pub const PARALLEL_STRINGS: usize = 3;
pub const TCT_ROW_WIDTH: usize = 4;
pub const MODERATE_STRING: [f64; 5] = [700.0, 700.0, 300.0, 300.0, 100.0];
pub const STRONG_STRING: [f64; 5] = [750.0, 750.0, 150.0, 150.0, 100.0];
pub const TCT_ROWS: [f64; 5] = [500.0, 300.0, 100.0, 200.0, 25.0];
pub const TWO_PEAKS_STRING: [f64; 5] = [1000.0, 1000.0, 1000.0, 300.0, 300.0];
pub const THREE_PEAKS_STRING: [f64; 5] = [1000.0, 650.0, 650.0, 300.0, 300.0];

impl fmt::Display for PscScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for PscScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match norm.as_str() {
            "twopeaks" => PscScenario::TwoPeaks,
            "threepeaks" => PscScenario::ThreePeaks,
            "moderate" => PscScenario::Moderate,
            "strong" => PscScenario::Strong,
            "tct" => PscScenario::Tct,
            "stc" => PscScenario::Stc,
            _ => return Err(Error::UnknownScenario(s.to_string())),
        })
    }
}

pub fn build_scenario(name: &str) -> Result<ArrayNode> {
    Ok(name.parse::<PscScenario>()?.build())
}
