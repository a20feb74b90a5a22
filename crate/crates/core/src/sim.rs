//! Quasi-static closed-loop executor. Each controller period samples the
//! stimulus, maps the duty to a PV voltage, solves the array current, logs the
//! sample next to the instantaneous global maximum, and advances the
//! controller.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::array::{ArrayNode, Circuit, Conditions};
use crate::converter::{
    ideal_gain, pv_voltage_for_duty, ConverterSpec, SensingConfig, SensingSide,
};
use crate::costing::{cost, CostModel, OpProfile};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mppt::{DutyController, Measurement, Mode};
use crate::pv::mpp_oracle_with;
use crate::scenarios::Stimulus;

pub const DEFAULT_DT_MPPT: f64 = 2e-6;
/// W/m² per irradiance quantum of the environment cache.
pub const IRRADIANCE_QUANTUM: f64 = 0.1;
/// °C per temperature quantum of the environment cache.
pub const TEMPERATURE_QUANTUM: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// s
    pub dt_mppt: f64,
    /// s; `None` runs for the whole stimulus.
    pub duration: Option<f64>,
    pub sensing: SensingConfig,
    pub record_decimation: usize,
    /// First-order settling time constant of the PV voltage, s. Zero means
    /// the commanded voltage applies instantly.
    pub lag_tau: f64,
    /// Uniform ADC resolution applied to the measurement, if any.
    pub adc_bits: Option<u32>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_mppt: DEFAULT_DT_MPPT,
            duration: None,
            sensing: SensingConfig::default(),
            record_decimation: 1,
            lag_tau: 0.0,
            adc_bits: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, stimulus: &Stimulus) -> Result<f64> {
        if !(self.dt_mppt > 0.0 && self.dt_mppt.is_finite()) {
            return Err(Error::Config(format!(
                "dt_mppt must be > 0, got {}",
                self.dt_mppt
            )));
        }
        let duration = self.duration.unwrap_or(stimulus.duration);
        if !(duration >= self.dt_mppt) {
            return Err(Error::Config(format!(
                "duration {duration} is shorter than dt_mppt {}",
                self.dt_mppt
            )));
        }
        if duration > stimulus.duration + 1e-12 {
            return Err(Error::Config(format!(
                "duration {duration} exceeds the stimulus length {}",
                stimulus.duration
            )));
        }
        if self.record_decimation == 0 {
            return Err(Error::Config("record_decimation must be >= 1".into()));
        }
        if !(self.lag_tau >= 0.0) {
            return Err(Error::Config(format!(
                "lag_tau must be >= 0, got {}",
                self.lag_tau
            )));
        }
        if let Some(b) = self.adc_bits {
            if !(2..=32).contains(&b) {
                return Err(Error::Config(format!(
                    "adc_bits must lie in [2, 32], got {b}"
                )));
            }
        }
        Ok(duration)
    }

    /// Number of controller invocations.
    pub fn steps(&self, duration: f64) -> usize {
        (duration / self.dt_mppt * (1.0 + 1e-12)).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub duty: f64,
    pub v_pv: f64,
    pub i_pv: f64,
    pub p_pv: f64,
    pub p_max: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeta {
    pub scenario: String,
    pub algorithm: String,
    pub converter: String,
    pub dt_mppt: f64,
    pub duration: f64,
    pub steps: usize,
    pub record_decimation: usize,
    pub sensing: SensingSide,
    /// Stimulus breakpoints inside the run.
    pub events: Vec<f64>,
    /// Most expensive iteration observed, under default weights.
    pub worst_step_ops: OpProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLog {
    pub meta: RunMeta,
    pub samples: Vec<Sample>,
}

pub const RUNLOG_HEADER: [&str; 7] = [
    "t_s", "duty", "v_pv_V", "i_pv_A", "p_pv_W", "p_max_W", "mode",
];

impl RunLog {
    /// Sample spacing in seconds.
    pub fn dt(&self) -> f64 {
        self.meta.dt_mppt * self.meta.record_decimation as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Parse(e.to_string());
        out.write_record(RUNLOG_HEADER).map_err(err)?;
        for s in &self.samples {
            out.write_record([
                format!("{:.9}", s.t),
                format!("{:.9}", s.duty),
                format!("{:.9e}", s.v_pv),
                format!("{:.9e}", s.i_pv),
                format!("{:.9e}", s.p_pv),
                format!("{:.9e}", s.p_max),
                s.mode.key().to_string(),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Quantized environment: irradiance scale in [`IRRADIANCE_QUANTUM`] units
/// and temperature override in [`TEMPERATURE_QUANTUM`] units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnvKey {
    g: i64,
    t: Option<i64>,
}

impl EnvKey {
    pub fn quantize(irradiance: f64, temperature: Option<f64>) -> Self {
        EnvKey {
            g: (irradiance / IRRADIANCE_QUANTUM).round() as i64,
            t: temperature.map(|t| (t / TEMPERATURE_QUANTUM).round() as i64),
        }
    }

    pub fn conditions(&self) -> Conditions {
        Conditions {
            irradiance: self.g as f64 * IRRADIANCE_QUANTUM,
            temperature: self.t.map(|t| t as f64 * TEMPERATURE_QUANTUM),
        }
    }
}

/// A solved environment: the circuit, its open-circuit voltage and its
/// global maximum power.
#[derive(Debug, Clone)]
pub struct EnvEntry {
    pub circuit: Circuit,
    pub v_oc: f64,
    pub p_max: f64,
    pub v_mp: f64,
}

impl EnvEntry {
    pub fn solve(array: &ArrayNode, key: EnvKey) -> Result<Self> {
        let circuit = array.circuit(&key.conditions())?;
        let v_oc = circuit.open_circuit_voltage();
        let mpp = mpp_oracle_with(&circuit, v_oc, Exec::Sequential)?;
        Ok(EnvEntry {
            circuit,
            v_oc,
            p_max: mpp.power.max(0.0),
            v_mp: mpp.voltage,
        })
    }
}

/// Snaps a grid time to the nanosecond so it meets schedule breakpoints
/// exactly.
pub fn grid_time(k: usize, dt: f64) -> f64 {
    (k as f64 * dt * 1e9).round() / 1e9
}

/// Per-step environment keys and the solved entry of each distinct key, in
/// order of first appearance. Entries are solved through `exec`.
pub fn solve_environments(
    array: &ArrayNode,
    stimulus: &Stimulus,
    dt: f64,
    steps: usize,
    exec: Exec,
) -> Result<(Vec<usize>, Vec<EnvEntry>)> {
    let mut index: HashMap<EnvKey, usize> = HashMap::new();
    let mut keys = Vec::new();
    let mut per_step = Vec::with_capacity(steps);
    for k in 0..steps {
        let (g, temp) = stimulus.at(grid_time(k, dt)).map_err(|e| e.at_step(k))?;
        let key = EnvKey::quantize(g, temp);
        let next = keys.len();
        let j = *index.entry(key).or_insert_with(|| {
            keys.push(key);
            next
        });
        per_step.push(j);
    }
    let entries = exec
        .map(&keys, |key| EnvEntry::solve(array, *key))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((per_step, entries))
}

/// `(t, p_max)` at every controller step.
pub fn oracle_power_series(
    array: &ArrayNode,
    stimulus: &Stimulus,
    cfg: &SimConfig,
    exec: Exec,
) -> Result<Vec<(f64, f64)>> {
    let duration = cfg.validate(stimulus)?;
    let steps = cfg.steps(duration);
    let (per_step, entries) = solve_environments(array, stimulus, cfg.dt_mppt, steps, exec)?;
    Ok(per_step
        .iter()
        .enumerate()
        .map(|(k, &j)| (grid_time(k, cfg.dt_mppt), entries[j].p_max))
        .collect())
}

fn quantize(x: f64, full_scale: f64, bits: u32) -> f64 {
    let levels = ((1u64 << bits) - 1) as f64;
    let lsb = full_scale / levels;
    ((x / lsb).round() * lsb).clamp(0.0, full_scale)
}

/// Identifiers recorded in the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLabels {
    pub scenario: String,
    pub algorithm: String,
}

/// Runs the closed loop.
pub fn run(
    array: &ArrayNode,
    stimulus: &Stimulus,
    converter: &ConverterSpec,
    controller: &mut dyn DutyController,
    cfg: &SimConfig,
    labels: &RunLabels,
    exec: Exec,
) -> Result<RunLog> {
    stimulus.validate()?;
    array.validate()?;
    converter.validate()?;
    converter.ensure_actuatable()?;
    let duration = cfg.validate(stimulus)?;
    let steps = cfg.steps(duration);
    let (per_step, entries) = solve_environments(array, stimulus, cfg.dt_mppt, steps, exec)?;

    let adc = match cfg.adc_bits {
        Some(bits) => {
            let v_fs = entries
                .iter()
                .map(|e| e.v_oc)
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE);
            let i_fs = entries
                .iter()
                .map(|e| e.circuit.short_circuit_current())
                .fold(0.0, f64::max)
                * 1.2;
            Some((bits, v_fs, i_fs.max(f64::MIN_POSITIVE)))
        }
        None => None,
    };
    let lag = if cfg.lag_tau > 0.0 {
        1.0 - (-cfg.dt_mppt / cfg.lag_tau).exp()
    } else {
        1.0
    };
    let model = CostModel::default();

    // operating points revisit the same voltages, especially while frozen
    let mut currents: HashMap<(usize, u64), f64> = HashMap::new();
    let mut samples = Vec::with_capacity(steps / cfg.record_decimation + 1);
    let mut worst = OpProfile::EMPTY;
    let mut worst_cost = -1.0;
    let mut v_prev: Option<f64> = None;
    for (k, &j) in per_step.iter().enumerate() {
        let t = grid_time(k, cfg.dt_mppt);
        let env = &entries[j];
        let d = controller.duty();
        let v_cmd = pv_voltage_for_duty(converter, d, env.v_oc).map_err(|e| e.at_step(k))?;
        let v = match v_prev {
            Some(vp) if lag < 1.0 => (vp + lag * (v_cmd - vp)).clamp(0.0, env.v_oc),
            _ => v_cmd,
        };
        v_prev = Some(v);
        let i = match currents.get(&(j, v.to_bits())) {
            Some(&i) => i,
            None => {
                let i = env.circuit.current_at(v).map_err(|e| e.at_step(k))?;
                currents.insert((j, v.to_bits()), i);
                i
            }
        };
        let p = v * i;
        if k % cfg.record_decimation == 0 {
            samples.push(Sample {
                t,
                duty: d,
                v_pv: v,
                i_pv: i,
                p_pv: p,
                p_max: env.p_max,
                mode: controller.mode(),
            });
        }

        let (mut vm, mut im) = match cfg.sensing.side {
            SensingSide::PvSide => (v, i),
            SensingSide::LoadSide => {
                // the converter's own duty-to-gain map turns output-side power
                // into input-side quantities
                let gain = ideal_gain(converter, d).map_err(|e| e.at_step(k))?;
                let v_est = converter.v_out / gain;
                let p_out = converter.efficiency * p;
                (v_est, if v_est > 0.0 { p_out / v_est } else { 0.0 })
            }
        };
        if let Some((bits, v_fs, i_fs)) = adc {
            vm = quantize(vm, v_fs, bits);
            im = quantize(im, i_fs, bits);
        }
        let out = controller.step(&Measurement { v: vm, i: im, t });
        let c = cost(&out.op_counts, &model);
        if c > worst_cost {
            worst_cost = c;
            worst = out.op_counts;
        }
    }

    Ok(RunLog {
        meta: RunMeta {
            scenario: labels.scenario.clone(),
            algorithm: labels.algorithm.clone(),
            converter: converter.topology.key().to_string(),
            dt_mppt: cfg.dt_mppt,
            duration,
            steps,
            record_decimation: cfg.record_decimation,
            sensing: cfg.sensing.side,
            events: stimulus
                .events()
                .into_iter()
                .filter(|&e| e < duration)
                .collect(),
            worst_step_ops: worst,
        },
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::PscScenario;
    use crate::converter::{duty_for_pv_voltage, Topology};
    use crate::mppt::FixedDuty;
    use crate::scenarios::{Profile, Quantity};

    fn labels() -> RunLabels {
        RunLabels {
            scenario: "t".into(),
            algorithm: "fixed".into(),
        }
    }

    #[test]
    fn step_count_is_exact() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.steps(0.05), 25_000);
        assert_eq!(cfg.steps(0.16), 80_000);
        assert_eq!(cfg.steps(0.4), 200_000);
        assert_eq!(cfg.steps(3e-6), 1);
    }

    #[test]
    fn config_rejects_bad_values() {
        let stim = Stimulus::constant(0.01);
        let bad = [
            SimConfig {
                dt_mppt: 0.0,
                ..Default::default()
            },
            SimConfig {
                duration: Some(1e-7),
                ..Default::default()
            },
            SimConfig {
                duration: Some(0.02),
                ..Default::default()
            },
            SimConfig {
                record_decimation: 0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(&stim), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn pinned_at_oracle_duty_is_fully_efficient() {
        let array = PscScenario::Stc.build();
        let spec = ConverterSpec::new(Topology::Boost);
        let stim = Stimulus::constant(1e-3);
        let entry = EnvEntry::solve(&array, EnvKey::quantize(1000.0, None)).unwrap();
        let d = duty_for_pv_voltage(&spec, entry.v_mp).unwrap();
        let log = run(
            &array,
            &stim,
            &spec,
            &mut FixedDuty(d),
            &SimConfig::default(),
            &labels(),
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(log.samples.len(), 500);
        for s in &log.samples {
            assert!((s.p_pv - s.p_max).abs() / s.p_max < 1e-4);
            assert!(s.p_pv <= s.p_max + 1e-9);
            assert_eq!(
                s.v_pv,
                pv_voltage_for_duty(&spec, s.duty, entry.v_oc).unwrap()
            );
        }
    }

    #[test]
    fn darkness_yields_zero_power() {
        let array = PscScenario::Stc.build();
        let spec = ConverterSpec::new(Topology::Boost);
        let dark = Profile::constant("dark", Quantity::Irradiance, 0.0, 1e-4).unwrap();
        let log = run(
            &array,
            &Stimulus::from_profile(dark),
            &spec,
            &mut FixedDuty(0.8),
            &SimConfig::default(),
            &labels(),
            Exec::Sequential,
        )
        .unwrap();
        assert!(log.samples.iter().all(|s| s.p_pv == 0.0 && s.p_max == 0.0));
    }

    #[test]
    fn non_actuatable_converter_is_rejected() {
        let array = PscScenario::Stc.build();
        let spec = ConverterSpec::new(Topology::FibonacciSc { stages: 4 });
        let err = run(
            &array,
            &Stimulus::constant(1e-4),
            &spec,
            &mut FixedDuty(0.5),
            &SimConfig::default(),
            &labels(),
            Exec::Sequential,
        );
        assert!(matches!(err, Err(Error::NonActuatable(_))));
    }

    #[test]
    fn halved_irradiance_lowers_maximum() {
        let array = PscScenario::Stc.build();
        let full = EnvEntry::solve(&array, EnvKey::quantize(1000.0, None)).unwrap();
        let half = EnvEntry::solve(&array, EnvKey::quantize(500.0, None)).unwrap();
        assert!((full.p_max - 0.0933).abs() < 1e-3);
        assert!(half.p_max < full.p_max);
    }

    #[test]
    fn quantized_oracle_is_transparent() {
        let array = PscScenario::Stc.build();
        // deterministic spread of environments
        let mut x = 0x2545F4914F6CDD1Du64;
        for _ in 0..100 {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            let g = 200.0 + (x % 80_000) as f64 / 100.0;
            let t = (x >> 20) as f64 % 7500.0 / 100.0;
            let exact = array
                .circuit(&Conditions {
                    irradiance: g,
                    temperature: Some(t),
                })
                .unwrap();
            let p_exact = mpp_oracle_with(&exact, exact.open_circuit_voltage(), Exec::Sequential)
                .unwrap()
                .power;
            let p_q = EnvEntry::solve(&array, EnvKey::quantize(g, Some(t)))
                .unwrap()
                .p_max;
            assert!(
                (p_q - p_exact).abs() / p_exact < 5e-4,
                "g={g} t={t}: {p_q} vs {p_exact}"
            );
        }
    }
}
