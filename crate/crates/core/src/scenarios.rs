//! Irradiance and temperature schedules, external trace loading, and the
//! named stimulus catalogue used by the simulator and the CLI.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::{ArrayNode, PscScenario};
use crate::error::{Error, Result};

/// Sample times past the end of a profile by less than this are accepted.
const END_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Irradiance,
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Hold,
    Ramp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub kind: SegmentKind,
    pub start_value: f64,
    pub end_value: f64,
}

impl Segment {
    fn value_at(&self, t: f64) -> f64 {
        match self.kind {
            SegmentKind::Hold => self.start_value,
            SegmentKind::Ramp => {
                if t >= self.t_end {
                    self.end_value
                } else {
                    let frac = (t - self.t_start) / (self.t_end - self.t_start);
                    self.start_value + frac * (self.end_value - self.start_value)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub quantity: Quantity,
    pub segments: Vec<Segment>,
}

impl Profile {
    pub fn new(
        name: impl Into<String>,
        quantity: Quantity,
        segments: Vec<Segment>,
    ) -> Result<Self> {
        let p = Profile {
            name: name.into(),
            quantity,
            segments,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn constant(
        name: impl Into<String>,
        quantity: Quantity,
        value: f64,
        duration: f64,
    ) -> Result<Self> {
        ProfileBuilder::new(name, quantity, value)
            .hold(duration)
            .build()
    }

    fn validate(&self) -> Result<()> {
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::Config(format!("profile `{}` has no segments", self.name)))?;
        if first.t_start != 0.0 {
            return Err(Error::Config(format!(
                "profile `{}` must start at t = 0",
                self.name
            )));
        }
        for (k, s) in self.segments.iter().enumerate() {
            if !(s.t_end > s.t_start) {
                return Err(Error::Config(format!(
                    "profile `{}` segment {k} has non-positive duration",
                    self.name
                )));
            }
            if k > 0 && s.t_start != self.segments[k - 1].t_end {
                return Err(Error::Config(format!(
                    "profile `{}` segment {k} is not contiguous",
                    self.name
                )));
            }
            if s.kind == SegmentKind::Hold && s.start_value != s.end_value {
                return Err(Error::Config(format!(
                    "profile `{}` hold segment {k} changes value",
                    self.name
                )));
            }
            if !(s.start_value.is_finite() && s.end_value.is_finite()) {
                return Err(Error::Config(format!(
                    "profile `{}` segment {k} has a non-finite value",
                    self.name
                )));
            }
            if self.quantity == Quantity::Irradiance && (s.start_value < 0.0 || s.end_value < 0.0) {
                return Err(Error::Config(format!(
                    "profile `{}` has negative irradiance",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    /// Value at `t`. Boundaries belong to the later segment.
    pub fn sample(&self, t: f64) -> Result<f64> {
        let end = self.duration();
        if !(t >= 0.0 && t <= end + END_SLACK) {
            return Err(Error::OutOfRange {
                what: "profile time",
                value: t,
                lo: 0.0,
                hi: end,
            });
        }
        let k = self
            .segments
            .partition_point(|s| s.t_start <= t)
            .saturating_sub(1);
        Ok(self.segments[k].value_at(t))
    }

    /// Start times of every segment after the first.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.t_start).collect()
    }

    /// Times where the value jumps, with the value before and after.
    pub fn steps(&self) -> Vec<(f64, f64, f64)> {
        self.segments
            .windows(2)
            .filter(|w| w[0].end_value != w[1].start_value)
            .map(|w| (w[1].t_start, w[0].end_value, w[1].start_value))
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| [s.start_value, s.end_value])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| [s.start_value, s.end_value])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Builds contiguous schedules. Boundary times are rounded to the nanosecond
/// so that sums of decimal durations land on exact totals.
#[derive(Debug, Clone)]
pub struct ProfileBuilder {
    name: String,
    quantity: Quantity,
    t: f64,
    value: f64,
    segments: Vec<Segment>,
}

fn round_ns(t: f64) -> f64 {
    (t * 1e9).round() / 1e9
}

impl ProfileBuilder {
    pub fn new(name: impl Into<String>, quantity: Quantity, initial: f64) -> Self {
        ProfileBuilder {
            name: name.into(),
            quantity,
            t: 0.0,
            value: initial,
            segments: Vec::new(),
        }
    }

    /// Jump to `value` instantly.
    pub fn set(mut self, value: f64) -> Self {
        self.value = value;
        self
    }

    pub fn hold(mut self, duration: f64) -> Self {
        let t_end = round_ns(self.t + duration);
        self.segments.push(Segment {
            t_start: self.t,
            t_end,
            kind: SegmentKind::Hold,
            start_value: self.value,
            end_value: self.value,
        });
        self.t = t_end;
        self
    }

    pub fn ramp(mut self, duration: f64, to: f64) -> Self {
        let t_end = round_ns(self.t + duration);
        self.segments.push(Segment {
            t_start: self.t,
            t_end,
            kind: SegmentKind::Ramp,
            start_value: self.value,
            end_value: to,
        });
        self.t = t_end;
        self.value = to;
        self
    }

    pub fn build(self) -> Result<Profile> {
        Profile::new(self.name, self.quantity, self.segments)
    }
}

pub const PROFILE1_DURATION: f64 = 0.16;
pub const PROFILE2_DURATION: f64 = 0.4;
/// Time of the dark-to-full step in profile 1.
pub const PROFILE1_STEP_UP: f64 = 0.02;
pub const THERMAL_RAMP_DURATION: f64 = 0.1;
pub const THERMAL_HOLD: f64 = 0.025;
pub const STATIC_DURATION: f64 = 0.05;
pub const STATIC_TEMPERATURES: [f64; 4] = [0.0, 25.0, 50.0, 75.0];
pub const TEMPERATURE_RAMPS: [(f64, f64); 2] = [(20.0, 50.0), (25.0, 45.0)];

/// Worst-case schedule: darkness, an abrupt step to full sun and back, then
/// 25/50/75 % holds.
pub fn profile1() -> Profile {
    ProfileBuilder::new("profile1", Quantity::Irradiance, 0.0)
        .hold(0.02)
        .set(1000.0)
        .hold(0.04)
        .set(0.0)
        .hold(0.02)
        .set(250.0)
        .hold(0.02)
        .set(500.0)
        .hold(0.02)
        .set(750.0)
        .hold(0.04)
        .build()
        .expect("profile1 fixture is valid")
}

/// EN50530 ramps at 10–50 % and 30–100 % of 1000 W/m².
pub fn profile2() -> Profile {
    ProfileBuilder::new("profile2", Quantity::Irradiance, 100.0)
        .hold(0.025)
        .ramp(0.050, 500.0)
        .hold(0.025)
        .ramp(0.050, 100.0)
        .hold(0.025)
        .set(300.0)
        .hold(0.025)
        .ramp(0.075, 1000.0)
        .hold(0.025)
        .ramp(0.075, 300.0)
        .hold(0.025)
        .build()
        .expect("profile2 fixture is valid")
}

pub fn thermal_scenarios() -> Vec<(String, Profile)> {
    let mut out = Vec::new();
    for t in STATIC_TEMPERATURES {
        let name = format!("temp_static_{t}");
        let p = Profile::constant(name.clone(), Quantity::Temperature, t, STATIC_DURATION)
            .expect("static fixture");
        out.push((name, p));
    }
    for (a, b) in TEMPERATURE_RAMPS {
        let name = format!("temp_ramp_{a}_{b}");
        let p = ProfileBuilder::new(name.clone(), Quantity::Temperature, a)
            .hold(THERMAL_HOLD)
            .ramp(THERMAL_RAMP_DURATION, b)
            .hold(THERMAL_HOLD)
            .build()
            .expect("ramp fixture");
        out.push((name, p));
    }
    out
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    time_s: f64,
    irradiance_wm2: f64,
}

pub const TRACE_HEADER: [&str; 2] = ["time_s", "irradiance_wm2"];

/// Parses a `time_s,irradiance_wm2` trace into `(t, G)` rows, shifting time
/// so the first row sits at 0.
pub fn parse_trace<R: Read>(reader: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(Error::Parse(format!(
            "expected header `{}`",
            TRACE_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.deserialize::<TraceRow>().enumerate() {
        let row = k + 1;
        let r = rec.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        if !(r.time_s.is_finite() && r.irradiance_wm2.is_finite()) {
            return Err(Error::Parse(format!("row {row}: non-finite value")));
        }
        if r.irradiance_wm2 < 0.0 {
            return Err(Error::NegativeIrradiance {
                row,
                value: r.irradiance_wm2,
            });
        }
        if let Some(&(t_prev, _)) = rows.last() {
            if r.time_s <= t_prev {
                return Err(Error::NonMonotoneTime { row });
            }
        }
        rows.push((r.time_s, r.irradiance_wm2));
    }
    if rows.len() < 2 {
        return Err(Error::Parse("a trace needs at least two rows".into()));
    }
    let t0 = rows[0].0;
    Ok(rows.into_iter().map(|(t, g)| (t - t0, g)).collect())
}

/// Piecewise-linear profile through `rows`, with extra breakpoints on a
/// uniform `resample_dt` grid. Original timestamps stay breakpoints, so the
/// profile reproduces every row exactly.
pub fn trace_profile(
    name: impl Into<String>,
    rows: &[(f64, f64)],
    resample_dt: f64,
) -> Result<Profile> {
    if !(resample_dt > 0.0) {
        return Err(Error::Config(format!(
            "resample_dt must be > 0, got {resample_dt}"
        )));
    }
    let end = rows.last().map_or(0.0, |r| r.0);
    let interp = |t: f64| -> f64 {
        let k = rows.partition_point(|r| r.0 <= t).clamp(1, rows.len() - 1);
        let (a, b) = (rows[k - 1], rows[k]);
        if t >= b.0 {
            b.1
        } else {
            a.1 + (t - a.0) / (b.0 - a.0) * (b.1 - a.1)
        }
    };
    let mut knots: Vec<(f64, f64)> = rows.to_vec();
    let n_grid = (end / resample_dt).floor() as usize;
    for j in 1..=n_grid {
        let t = j as f64 * resample_dt;
        if t < end {
            knots.push((t, interp(t)));
        }
    }
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    knots.dedup_by(|b, a| (b.0 - a.0).abs() <= 1e-15);

    let mut segments: Vec<Segment> = Vec::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let kind = if a.1 == b.1 {
            SegmentKind::Hold
        } else {
            SegmentKind::Ramp
        };
        match segments.last_mut() {
            Some(last)
                if kind == SegmentKind::Hold
                    && last.kind == SegmentKind::Hold
                    && last.end_value == a.1 =>
            {
                last.t_end = b.0;
            }
            _ => segments.push(Segment {
                t_start: a.0,
                t_end: b.0,
                kind,
                start_value: a.1,
                end_value: b.1,
            }),
        }
    }
    Profile::new(name, Quantity::Irradiance, segments)
}

pub fn load_trace(path: &Path, resample_dt: f64) -> Result<Profile> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_trace(std::io::BufReader::new(file))?;
    let name = path
        .file_stem()
        .map_or_else(|| "trace".to_string(), |s| s.to_string_lossy().into_owned());
    trace_profile(name, &rows, resample_dt)
}

/// Profiles addressable by name.
pub fn builtin_profile_names() -> Vec<String> {
    let mut names = vec![
        "profile1".to_string(),
        "profile2".to_string(),
        "stc".to_string(),
    ];
    names.extend(thermal_scenarios().into_iter().map(|(n, _)| n));
    names
}

pub fn builtin_profile(name: &str) -> Result<Profile> {
    match name {
        "profile1" => Ok(profile1()),
        "profile2" => Ok(profile2()),
        "stc" => Profile::constant("stc", Quantity::Irradiance, 1000.0, STATIC_DURATION),
        _ => thermal_scenarios()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::UnknownScenario(name.to_string())),
    }
}

/// Time-varying conditions applied to an array. Missing irradiance means a
/// constant 1000 W/m² scale; missing temperature keeps device temperatures.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub irradiance: Option<Profile>,
    pub temperature: Option<Profile>,
    pub duration: f64,
}

impl Stimulus {
    pub fn constant(duration: f64) -> Self {
        Stimulus {
            irradiance: None,
            temperature: None,
            duration,
        }
    }

    pub fn from_profile(p: Profile) -> Self {
        let duration = p.duration();
        match p.quantity {
            Quantity::Irradiance => Stimulus {
                irradiance: Some(p),
                temperature: None,
                duration,
            },
            Quantity::Temperature => Stimulus {
                irradiance: None,
                temperature: Some(p),
                duration,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config(format!(
                "stimulus duration must be > 0, got {}",
                self.duration
            )));
        }
        for p in self.irradiance.iter().chain(self.temperature.iter()) {
            if p.duration() + END_SLACK < self.duration {
                return Err(Error::Config(format!(
                    "profile `{}` lasts {} s, shorter than the {} s run",
                    p.name,
                    p.duration(),
                    self.duration
                )));
            }
        }
        Ok(())
    }

    /// `(irradiance, temperature override)` at `t`.
    pub fn at(&self, t: f64) -> Result<(f64, Option<f64>)> {
        let g = match &self.irradiance {
            Some(p) => p.sample(t)?,
            None => 1000.0,
        };
        let temp = match &self.temperature {
            Some(p) => Some(p.sample(t)?),
            None => None,
        };
        Ok((g, temp))
    }

    /// Times at which the stimulus changes abruptly or starts ramping.
    pub fn events(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = Vec::new();
        for p in self.irradiance.iter().chain(self.temperature.iter()) {
            ev.extend(p.breakpoints());
        }
        ev.sort_by(f64::total_cmp);
        ev.dedup();
        ev.retain(|&t| t < self.duration);
        ev
    }
}

/// An array together with the conditions it is run under.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub array: ArrayNode,
    pub stimulus: Stimulus,
}

/// Resolves a scenario name: a shading fixture (run at constant STC for
/// [`STATIC_DURATION`]), a built-in profile on the reference cell, or a path
/// to a trace CSV resampled at `resample_dt`.
pub fn resolve_scenario(name: &str, resample_dt: f64) -> Result<Scenario> {
    if let Ok(psc) = name.parse::<PscScenario>() {
        return Ok(Scenario {
            name: psc.key().to_string(),
            array: psc.build(),
            stimulus: Stimulus::constant(STATIC_DURATION),
        });
    }
    let cell = PscScenario::Stc.build();
    if let Ok(p) = builtin_profile(name) {
        return Ok(Scenario {
            name: name.to_string(),
            array: cell,
            stimulus: Stimulus::from_profile(p),
        });
    }
    let path = Path::new(name);
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        let p = load_trace(path, resample_dt)?;
        return Ok(Scenario {
            name: p.name.clone(),
            array: cell,
            stimulus: Stimulus::from_profile(p),
        });
    }
    Err(Error::UnknownScenario(name.to_string()))
}

pub fn scenario_names() -> Vec<String> {
    let mut names: Vec<String> = PscScenario::ALL
        .iter()
        .map(|s| s.key().to_string())
        .collect();
    names.extend(builtin_profile_names().into_iter().filter(|n| n != "stc"));
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile1_shape() {
        let p = profile1();
        assert_eq!(p.duration(), PROFILE1_DURATION);
        let total: f64 = p.segments.iter().map(|s| s.t_end - s.t_start).sum();
        assert!((total - PROFILE1_DURATION).abs() < 1e-15);
        assert_eq!(p.min_value(), 0.0);
        assert_eq!(p.max_value(), 1000.0);
        let steps = p.steps();
        assert!(steps.contains(&(0.02, 0.0, 1000.0)));
        assert!(steps.contains(&(0.06, 1000.0, 0.0)));
    }

    #[test]
    fn profile2_shape() {
        let p = profile2();
        assert_eq!(p.duration(), PROFILE2_DURATION);
        assert!((p.sample(0.05).unwrap() - 300.0).abs() < 1e-9);
        assert_eq!(p.sample(0.075).unwrap(), 500.0);
        assert_eq!(p.sample(0.099).unwrap(), 500.0);
        assert_eq!(p.sample(0.175).unwrap(), 300.0);
        assert_eq!(p.sample(0.275).unwrap(), 1000.0);
        assert_eq!(p.sample(0.4).unwrap(), 300.0);
    }

    #[test]
    fn thermal_fixtures() {
        let t = thermal_scenarios();
        let statics: Vec<f64> = t
            .iter()
            .filter(|(n, _)| n.starts_with("temp_static"))
            .map(|(_, p)| p.sample(0.0).unwrap())
            .collect();
        assert_eq!(statics, vec![0.0, 25.0, 50.0, 75.0]);
        let ramp = &t.iter().find(|(n, _)| n == "temp_ramp_20_50").unwrap().1;
        assert_eq!(ramp.sample(0.0).unwrap(), 20.0);
        assert_eq!(ramp.sample(ramp.duration()).unwrap(), 50.0);
        let ramp = &t.iter().find(|(n, _)| n == "temp_ramp_25_45").unwrap().1;
        assert_eq!((ramp.min_value(), ramp.max_value()), (25.0, 45.0));
        assert!(t.iter().all(|(_, p)| p.quantity == Quantity::Temperature));
    }

    #[test]
    fn sampling_is_right_continuous() {
        let p = ProfileBuilder::new("x", Quantity::Irradiance, 100.0)
            .hold(1.0)
            .ramp(1.0, 300.0)
            .set(50.0)
            .hold(1.0)
            .build()
            .unwrap();
        assert_eq!(p.sample(0.5).unwrap(), 100.0);
        assert_eq!(p.sample(1.0).unwrap(), 100.0);
        assert_eq!(p.sample(1.5).unwrap(), 200.0);
        assert_eq!(p.sample(2.0).unwrap(), 50.0);
        assert!(p.sample(3.5).is_err());
        assert!(p.sample(-0.1).is_err());
    }

    #[test]
    fn trace_examples() {
        let rows = parse_trace("time_s,irradiance_wm2\n0,100\n1,100\n".as_bytes()).unwrap();
        let p = trace_profile("c", &rows, 0.1).unwrap();
        assert_eq!(p.segments.len(), 1);
        assert_eq!(p.segments[0].kind, SegmentKind::Hold);
        assert_eq!(p.sample(0.73).unwrap(), 100.0);

        let rows = parse_trace("time_s,irradiance_wm2\n0,0\n1,1000\n".as_bytes()).unwrap();
        let p = trace_profile("r", &rows, 0.25).unwrap();
        let vals: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&t| p.sample(t).unwrap())
            .collect();
        assert_eq!(vals, vec![0.0, 250.0, 500.0, 750.0, 1000.0]);
    }

    #[test]
    fn trace_errors() {
        assert!(matches!(
            parse_trace("time_s,irradiance_wm2\n0,1\n0.5,2\n0.2,3\n".as_bytes()),
            Err(Error::NonMonotoneTime { row: 3 })
        ));
        assert!(matches!(
            parse_trace("time_s,irradiance_wm2\n0,1\n1,-2\n".as_bytes()),
            Err(Error::NegativeIrradiance { row: 2, .. })
        ));
        assert!(matches!(
            parse_trace("t,g\n0,1\n1,2\n".as_bytes()),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            parse_trace("time_s,irradiance_wm2\n0,abc\n".as_bytes()),
            Err(Error::Parse(_))
        ));
        assert!(matches!(parse_trace("".as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn trace_time_is_shifted() {
        let rows = parse_trace("time_s,irradiance_wm2\n5,10\n5.5,20\n".as_bytes()).unwrap();
        assert_eq!(rows, vec![(0.0, 10.0), (0.5, 20.0)]);
    }

    #[test]
    fn resolve_names() {
        assert_eq!(resolve_scenario("tct", 1e-3).unwrap().name, "tct");
        assert_eq!(
            resolve_scenario("profile2", 1e-3)
                .unwrap()
                .stimulus
                .duration,
            0.4
        );
        let thermal = resolve_scenario("temp_static_75", 1e-3).unwrap();
        assert_eq!(thermal.stimulus.at(0.01).unwrap(), (1000.0, Some(75.0)));
        assert!(matches!(
            resolve_scenario("nowhere", 1e-3),
            Err(Error::UnknownScenario(_))
        ));
        for n in scenario_names() {
            assert!(resolve_scenario(&n, 1e-3).is_ok(), "{n}");
        }
    }

    #[test]
    fn stimulus_events() {
        let s = Stimulus::from_profile(profile1());
        assert_eq!(s.events(), vec![0.02, 0.06, 0.08, 0.1, 0.12]);
    }
}
