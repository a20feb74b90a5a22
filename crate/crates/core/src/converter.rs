//! Quasi-static DC-DC converter models. The output is held at a fixed rail
//! voltage, so the duty cycle sets the PV terminal voltage through the ideal
//! CCM gain of the topology.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gains whose denominator falls below this are undefined.
pub const GAIN_EPS: f64 = 1e-6;
pub const DEFAULT_V_OUT: f64 = 4.2;
pub const DEFAULT_D_MIN: f64 = 0.05;
pub const DEFAULT_D_MAX: f64 = 0.95;
pub const SEPIC_V_F: f64 = 0.3;
pub const SEPIC_V_SWITCH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BidirectionalMode {
    Boost,
    Buck,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Boost,
    BuckBoost,
    BidirectionalBuckBoost { mode: BidirectionalMode },
    Cuk,
    Sepic { v_f: f64, v_switch: f64 },
    Zeta,
    QuadraticBoost,
    MultilevelBoost { levels: u32 },
    HighStepUpBoost { turns: f64 },
    FibonacciSc { stages: u32 },
    InterleavedScHybrid { sc_gain: f64 },
    InterleavedBoost2Phase,
    Flyback { turns: f64 },
    Forward { turns: f64 },
    PushPull { turns: f64 },
    HalfBridge { turns: f64 },
    FullBridge { turns: f64 },
    Resonant { turns_ratio: f64, tank_gain: f64 },
}

impl Topology {
    pub const KEYS: [&'static str; 18] = [
        "boost",
        "buck_boost",
        "bidirectional_buck_boost",
        "cuk",
        "sepic",
        "zeta",
        "quadratic_boost",
        "multilevel_boost",
        "high_step_up_boost",
        "fibonacci_sc",
        "interleaved_sc_hybrid",
        "interleaved_boost_2ph",
        "flyback",
        "forward",
        "push_pull",
        "half_bridge",
        "full_bridge",
        "resonant",
    ];

    pub fn key(&self) -> &'static str {
        match self {
            Topology::Boost => "boost",
            Topology::BuckBoost => "buck_boost",
            Topology::BidirectionalBuckBoost { .. } => "bidirectional_buck_boost",
            Topology::Cuk => "cuk",
            Topology::Sepic { .. } => "sepic",
            Topology::Zeta => "zeta",
            Topology::QuadraticBoost => "quadratic_boost",
            Topology::MultilevelBoost { .. } => "multilevel_boost",
            Topology::HighStepUpBoost { .. } => "high_step_up_boost",
            Topology::FibonacciSc { .. } => "fibonacci_sc",
            Topology::InterleavedScHybrid { .. } => "interleaved_sc_hybrid",
            Topology::InterleavedBoost2Phase => "interleaved_boost_2ph",
            Topology::Flyback { .. } => "flyback",
            Topology::Forward { .. } => "forward",
            Topology::PushPull { .. } => "push_pull",
            Topology::HalfBridge { .. } => "half_bridge",
            Topology::FullBridge { .. } => "full_bridge",
            Topology::Resonant { .. } => "resonant",
        }
    }

    /// Converter efficiency listed for the topology; the buck-boost range
    /// 91.02–91.32 % is taken at its midpoint.
    pub fn nominal_efficiency(&self) -> f64 {
        match self {
            Topology::Boost => 0.9316,
            Topology::BuckBoost => 0.9117,
            Topology::BidirectionalBuckBoost { .. } => 0.9411,
            Topology::Cuk => 0.8944,
            Topology::Sepic { .. } => 0.9252,
            Topology::Zeta => 0.9168,
            Topology::QuadraticBoost => 0.8964,
            Topology::MultilevelBoost { .. } => 0.9211,
            Topology::HighStepUpBoost { .. } => 0.9375,
            Topology::FibonacciSc { .. } => 0.9575,
            Topology::InterleavedScHybrid { .. } => 0.9408,
            Topology::InterleavedBoost2Phase => 0.9643,
            Topology::Flyback { .. } => 0.9276,
            Topology::Forward { .. } => 0.9023,
            Topology::PushPull { .. } => 0.9364,
            Topology::HalfBridge { .. } => 0.9580,
            Topology::FullBridge { .. } => 0.8656,
            Topology::Resonant { .. } => 0.9713,
        }
    }

    /// True when the gain does not depend on the duty cycle.
    pub fn is_duty_independent(&self) -> bool {
        matches!(
            self,
            Topology::FibonacciSc { .. } | Topology::Resonant { .. }
        )
    }

    /// Sign of `dV_pv/dD`: −1 for step-up style maps, +1 for the buck branch.
    pub fn voltage_sign(&self) -> f64 {
        match self {
            Topology::BidirectionalBuckBoost {
                mode: BidirectionalMode::Buck,
            } => 1.0,
            _ => -1.0,
        }
    }
}

impl FromStr for Topology {
    type Err = Error;

    /// Default parameters per key: turns ratios put the 0.65 V → 4.2 V
    /// operating point well inside the duty range.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "boost" => Topology::Boost,
            "buck_boost" => Topology::BuckBoost,
            "bidirectional_buck_boost" => Topology::BidirectionalBuckBoost {
                mode: BidirectionalMode::Boost,
            },
            "cuk" => Topology::Cuk,
            "sepic" => Topology::Sepic {
                v_f: SEPIC_V_F,
                v_switch: SEPIC_V_SWITCH,
            },
            "zeta" => Topology::Zeta,
            "quadratic_boost" => Topology::QuadraticBoost,
            "multilevel_boost" => Topology::MultilevelBoost { levels: 2 },
            "high_step_up_boost" => Topology::HighStepUpBoost { turns: 1.0 },
            "fibonacci_sc" => Topology::FibonacciSc { stages: 4 },
            "interleaved_sc_hybrid" => Topology::InterleavedScHybrid { sc_gain: 1.0 },
            "interleaved_boost_2ph" => Topology::InterleavedBoost2Phase,
            "flyback" => Topology::Flyback { turns: 2.0 },
            "forward" => Topology::Forward { turns: 10.0 },
            "push_pull" => Topology::PushPull { turns: 5.0 },
            "half_bridge" => Topology::HalfBridge { turns: 10.0 },
            "full_bridge" => Topology::FullBridge { turns: 5.0 },
            "resonant" => Topology::Resonant {
                turns_ratio: 6.46,
                tank_gain: 1.0,
            },
            other => return Err(Error::UnknownTopology(other.to_string())),
        })
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterSpec {
    pub topology: Topology,
    pub efficiency: f64,
    pub v_out: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl ConverterSpec {
    /// Topology defaults with its nominal efficiency on a 4.2 V rail.
    pub fn new(topology: Topology) -> Self {
        ConverterSpec {
            topology,
            efficiency: topology.nominal_efficiency(),
            v_out: DEFAULT_V_OUT,
            d_min: DEFAULT_D_MIN,
            d_max: DEFAULT_D_MAX,
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        Ok(Self::new(key.parse()?))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.d_min && self.d_min < self.d_max && self.d_max < 1.0) {
            return Err(Error::Config(format!(
                "duty limits must satisfy 0 < d_min < d_max < 1, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::Config(format!(
                "efficiency must lie in (0, 1], got {}",
                self.efficiency
            )));
        }
        if !(self.v_out > 0.0) {
            return Err(Error::Config(format!(
                "v_out must be > 0, got {}",
                self.v_out
            )));
        }
        Ok(())
    }

    pub fn is_actuatable(&self) -> bool {
        !self.topology.is_duty_independent()
    }

    pub fn ensure_actuatable(&self) -> Result<()> {
        if self.is_actuatable() {
            Ok(())
        } else {
            Err(Error::NonActuatable(self.topology.key().to_string()))
        }
    }
}

fn check_denominator(duty: f64, denominator: f64) -> Result<f64> {
    if denominator < GAIN_EPS {
        Err(Error::GainUndefined { duty, denominator })
    } else {
        Ok(denominator)
    }
}

/// `F_j` by Binet's formula, rounded.
pub fn fibonacci(j: u32) -> f64 {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    ((phi.powi(j as i32) - (1.0 - phi).powi(j as i32)) / 5f64.sqrt()).round()
}

/// Magnitude of the ideal CCM voltage gain `V_out/V_in` at duty `d`. For
/// SEPIC the diode and switch drops are referred to the output rail.
pub fn ideal_gain(spec: &ConverterSpec, d: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::OutOfRange {
            what: "duty cycle",
            value: d,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let one_minus = 1.0 - d;
    Ok(match spec.topology {
        Topology::Boost | Topology::InterleavedBoost2Phase => {
            1.0 / check_denominator(d, one_minus)?
        }
        Topology::BuckBoost | Topology::Cuk | Topology::Zeta => {
            d / check_denominator(d, one_minus)?
        }
        Topology::BidirectionalBuckBoost { mode } => match mode {
            BidirectionalMode::Boost => 1.0 / check_denominator(d, one_minus)?,
            BidirectionalMode::Buck => 1.0 / check_denominator(d, d)?,
        },
        Topology::Sepic { v_f, v_switch } => {
            let ratio = d / check_denominator(d, one_minus)?;
            ratio * spec.v_out / (spec.v_out + v_f + v_switch)
        }
        Topology::QuadraticBoost => 1.0 / check_denominator(d, one_minus * one_minus)?,
        Topology::MultilevelBoost { levels } => levels as f64 / check_denominator(d, one_minus)?,
        Topology::HighStepUpBoost { turns } => 1.0 + turns / check_denominator(d, one_minus)?,
        Topology::InterleavedScHybrid { sc_gain } => {
            1.0 / check_denominator(d, one_minus)? + sc_gain
        }
        Topology::FibonacciSc { stages } => fibonacci(stages + 1),
        Topology::Flyback { turns } => turns * d / check_denominator(d, one_minus)?,
        Topology::Forward { turns } | Topology::HalfBridge { turns } => turns * d,
        Topology::PushPull { turns } | Topology::FullBridge { turns } => 2.0 * turns * d,
        Topology::Resonant {
            turns_ratio,
            tank_gain,
        } => turns_ratio * tank_gain,
    })
}

/// PV terminal voltage imposed by duty `d`, clamped to `[0, v_oc]`.
pub fn pv_voltage_for_duty(spec: &ConverterSpec, d: f64, v_oc: f64) -> Result<f64> {
    spec.ensure_actuatable()?;
    let gain = ideal_gain(spec, d)?;
    let v = if gain > 0.0 {
        spec.v_out / gain
    } else {
        f64::INFINITY
    };
    Ok(v.clamp(0.0, v_oc.max(0.0)))
}

/// Duty that imposes PV voltage `v`, by inverting the gain map with
/// bisection on `[d_min, d_max]`. Saturates at the duty limits.
pub fn duty_for_pv_voltage(spec: &ConverterSpec, v: f64) -> Result<f64> {
    spec.ensure_actuatable()?;
    let unclamped = |d: f64| -> Result<f64> {
        let g = ideal_gain(spec, d)?;
        Ok(if g > 0.0 {
            spec.v_out / g
        } else {
            f64::INFINITY
        })
    };
    let sign = spec.topology.voltage_sign();
    let (mut lo, mut hi) = (spec.d_min, spec.d_max);
    // orient so that voltage increases from lo to hi
    if sign < 0.0 {
        std::mem::swap(&mut lo, &mut hi);
    }
    if unclamped(lo)? >= v {
        return Ok(lo);
    }
    if unclamped(hi)? <= v {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if unclamped(mid)? < v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn delivered_power(p_pv: f64, spec: &ConverterSpec) -> f64 {
    p_pv * spec.efficiency
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingSide {
    #[default]
    PvSide,
    LoadSide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SensingConfig {
    pub side: SensingSide,
}
