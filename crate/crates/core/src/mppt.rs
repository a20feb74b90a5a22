//! Stepwise duty-cycle controllers: fixed-step perturb and observe, the
//! adaptive gradient controller with steady-state freeze (optionally preceded
//! by a coarse duty scan), incremental conductance and hill climbing.
//!
//! Every controller reasons in PV-voltage space and converts a voltage
//! direction into a duty direction through the converter's `dV/dD` sign, so
//! the same code drives step-up and step-down maps.
//!
//! Each step returns the operations it executed, tallied as in
//! [`crate::costing`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::array::{ArrayNode, Conditions};
use crate::converter::ConverterSpec;
use crate::costing::{profiles, OpKind, OpProfile};
use crate::error::{Error, Result};
use crate::pv::{mpp_oracle, Environment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Po,
    AdaptiveGd,
    AdaptiveGdInit,
    Ic,
    Hc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Po,
        Algorithm::AdaptiveGd,
        Algorithm::AdaptiveGdInit,
        Algorithm::Ic,
        Algorithm::Hc,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            Algorithm::Po => "po",
            Algorithm::AdaptiveGd => "adaptive_gd",
            Algorithm::AdaptiveGdInit => "adaptive_gd_init",
            Algorithm::Ic => "ic",
            Algorithm::Hc => "hc",
        }
    }

    /// Worst-case operation counts of one iteration.
    pub fn op_profile(&self) -> OpProfile {
        match self {
            Algorithm::Po => profiles::PO,
            Algorithm::AdaptiveGd => profiles::ADAPTIVE_GD,
            Algorithm::AdaptiveGdInit => profiles::ADAPTIVE_GD_INIT,
            Algorithm::Ic => profiles::IC,
            Algorithm::Hc => profiles::HC,
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .iter()
            .copied()
            .find(|a| a.key() == s)
            .ok_or_else(|| Error::UnknownAlgorithm(s.to_string()))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Worst-case operation counts for an algorithm key.
pub fn count_algorithm(key: &str) -> Result<OpProfile> {
    Ok(key.parse::<Algorithm>()?.op_profile())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpptTunables {
    /// Duty change per unit of `dP/dV` normalized by `P_rated / V_mp`.
    pub beta: f64,
    /// Steady-state threshold as a fraction of the measured power.
    pub alpha_ss: f64,
    pub d_init: f64,
    pub d_step_fixed: f64,
    pub d_step_min: f64,
    pub d_step_max: f64,
    pub init_scan_points: u32,
    pub init_dwell: u32,
    /// V
    pub eps_v: f64,
    /// Relative tolerance on `dI/dV + I/V` for incremental conductance.
    pub eps_ic: f64,
}

impl Default for MpptTunables {
    fn default() -> Self {
        MpptTunables {
            beta: 0.005,
            alpha_ss: 1.0 / 8192.0,
            d_init: 0.95,
            d_step_fixed: 0.01,
            d_step_min: 1e-4,
            d_step_max: 0.05,
            init_scan_points: 16,
            init_dwell: 3,
            eps_v: 1e-6,
            eps_ic: 0.05,
        }
    }
}

impl MpptTunables {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.beta > 0.0) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if !(self.alpha_ss > 0.0 && self.alpha_ss <= 0.1) {
            return bad(format!(
                "alpha_ss must lie in (0, 0.1], got {}",
                self.alpha_ss
            ));
        }
        if !(0.0 < self.d_step_min && self.d_step_min <= self.d_step_max && self.d_step_max < 1.0) {
            return bad(format!(
                "need 0 < d_step_min <= d_step_max < 1, got {} and {}",
                self.d_step_min, self.d_step_max
            ));
        }
        if !(self.d_step_fixed > 0.0 && self.d_step_fixed < 1.0) {
            return bad(format!(
                "d_step_fixed must lie in (0, 1), got {}",
                self.d_step_fixed
            ));
        }
        if self.init_scan_points < 8 {
            return bad(format!(
                "init_scan_points must be >= 8, got {}",
                self.init_scan_points
            ));
        }
        if self.init_dwell == 0 {
            return bad("init_dwell must be >= 1".into());
        }
        if !(self.eps_v >= 0.0) || !(self.eps_ic >= 0.0) {
            return bad("eps_v and eps_ic must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.d_init) {
            return bad(format!("d_init must lie in [0, 1], got {}", self.d_init));
        }
        Ok(())
    }
}

/// Duty limits, the sign of `dV_pv/dD`, and the slope normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyAxis {
    pub d_min: f64,
    pub d_max: f64,
    pub voltage_sign: f64,
    /// `P_rated / V_mp` in W/V.
    pub slope_scale: f64,
}

impl DutyAxis {
    pub fn new(spec: &ConverterSpec, slope_scale: f64) -> Result<Self> {
        spec.validate()?;
        if !(slope_scale > 0.0 && slope_scale.is_finite()) {
            return Err(Error::Config(format!(
                "slope scale must be finite and > 0, got {slope_scale}"
            )));
        }
        Ok(DutyAxis {
            d_min: spec.d_min,
            d_max: spec.d_max,
            voltage_sign: spec.topology.voltage_sign(),
            slope_scale,
        })
    }

    /// Axis normalized by the array's rated MPP with every device at STC.
    pub fn for_array(array: &ArrayNode, spec: &ConverterSpec) -> Result<Self> {
        let rated = array
            .with_uniform_environment(Environment::STC)
            .circuit(&Conditions::NOMINAL)?;
        let mpp = mpp_oracle(&rated, rated.open_circuit_voltage())?;
        if !(mpp.voltage > 0.0) {
            return Err(Error::Config("array delivers no power at STC".into()));
        }
        DutyAxis::new(spec, mpp.power / mpp.voltage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Initializing,
    Tracking,
    Frozen,
}

impl Mode {
    pub fn key(&self) -> &'static str {
        match self {
            Mode::Initializing => "initializing",
            Mode::Tracking => "tracking",
            Mode::Frozen => "frozen",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initializing" => Ok(Mode::Initializing),
            "tracking" => Ok(Mode::Tracking),
            "frozen" => Ok(Mode::Frozen),
            _ => Err(Error::Parse(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub v: f64,
    pub i: f64,
    pub t: f64,
}

/// Controller memory. Fixed size: a handful of scalars and flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpptState {
    pub d: f64,
    pub p_prev: f64,
    pub v_prev: f64,
    pub i_prev: f64,
    pub dp_prev: f64,
    pub mode: Mode,
    pub best_d: f64,
    pub best_p: f64,
    pub scan_index: u32,
    pub dwell: u32,
    /// Direction of the last voltage move, ±1.
    pub dir: f64,
    /// A reference sample is stored.
    pub primed: bool,
    /// The last command was a probe, so the next sample carries no slope
    /// history.
    pub probing: bool,
}

impl MpptState {
    pub fn new(d: f64, mode: Mode) -> Self {
        MpptState {
            d,
            p_prev: 0.0,
            v_prev: 0.0,
            i_prev: 0.0,
            dp_prev: 0.0,
            mode,
            best_d: d,
            best_p: f64::NEG_INFINITY,
            scan_index: 0,
            dwell: 0,
            dir: 1.0,
            primed: false,
            probing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerStep {
    pub d_next: f64,
    pub op_counts: OpProfile,
}

/// Clamps `d` to the duty limits; reports whether it was clipped.
fn saturate(d: f64, ax: &DutyAxis, ops: &mut OpProfile) -> (f64, bool) {
    ops.compare(1);
    if d < ax.d_min {
        return (ax.d_min, true);
    }
    ops.compare(1);
    if d > ax.d_max {
        return (ax.d_max, true);
    }
    (d, false)
}

/// Moves the duty by `step` in voltage direction `vdir`.
fn move_voltage(
    st: &mut MpptState,
    vdir: f64,
    step: f64,
    ax: &DutyAxis,
    ops: &mut OpProfile,
) -> bool {
    ops.tick(OpKind::BitandOr, 1);
    ops.tick(OpKind::Add, 1);
    let (d, clipped) = saturate(st.d + ax.voltage_sign * vdir * step, ax, ops);
    st.d = d;
    st.dir = vdir;
    clipped
}

/// Stores the sample and perturbs by `step` in the stored direction,
/// reversing the direction when a limit blocks the move. A `fresh` probe
/// exempts the next sample from the steady test.
fn probe(
    st: &mut MpptState,
    p: f64,
    m: &Measurement,
    step: f64,
    fresh: bool,
    ax: &DutyAxis,
    ops: &mut OpProfile,
) {
    st.p_prev = p;
    st.v_prev = m.v;
    st.i_prev = m.i;
    st.primed = true;
    st.probing = fresh;
    if move_voltage(st, st.dir, step, ax, ops) {
        ops.tick(OpKind::BitandOr, 1);
        st.dir = -st.dir;
    }
}

fn done(st: &MpptState, ops: OpProfile) -> ControllerStep {
    ControllerStep {
        d_next: st.d,
        op_counts: ops,
    }
}

/// Conventional fixed-step perturb and observe (four-quadrant rule on the
/// signs of ΔP and ΔV).
pub fn po_step(
    st: &mut MpptState,
    m: &Measurement,
    tun: &MpptTunables,
    ax: &DutyAxis,
) -> ControllerStep {
    let mut ops = OpProfile::EMPTY;
    ops.tick(OpKind::Mul, 1);
    let p = m.v * m.i;
    ops.test_eq(1);
    if !st.primed {
        probe(st, p, m, tun.d_step_fixed, true, ax, &mut ops);
        return done(st, ops);
    }
    ops.tick(OpKind::Sub, 2);
    let dp = p - st.p_prev;
    let dv = m.v - st.v_prev;
    ops.compare(1);
    let mut vdir = if dv > 0.0 {
        1.0
    } else {
        ops.compare(1);
        if dv < 0.0 {
            -1.0
        } else {
            st.dir
        }
    };
    ops.compare(1);
    if dp <= 0.0 {
        ops.tick(OpKind::BitandOr, 1);
        vdir = -vdir;
    }
    st.p_prev = p;
    st.v_prev = m.v;
    st.i_prev = m.i;
    move_voltage(st, vdir, tun.d_step_fixed, ax, &mut ops);
    done(st, ops)
}

/// Hill climbing: raises the duty when `ΔP·ΔD > 0`, lowers it when
/// `ΔP·ΔD < 0`, and reverses the last move when the product vanishes.
pub fn hc_step(
    st: &mut MpptState,
    m: &Measurement,
    tun: &MpptTunables,
    ax: &DutyAxis,
) -> ControllerStep {
    let mut ops = OpProfile::EMPTY;
    ops.tick(OpKind::Mul, 1);
    let p = m.v * m.i;
    ops.test_eq(1);
    if !st.primed {
        st.best_d = st.d;
        probe(st, p, m, tun.d_step_fixed, true, ax, &mut ops);
        return done(st, ops);
    }
    ops.tick(OpKind::Sub, 2);
    let dp = p - st.p_prev;
    // best_d holds the duty before the last move
    let dd = st.d - st.best_d;
    ops.tick(OpKind::Mul, 1);
    let slope = dp * dd;
    ops.compare(1);
    let ddir = if slope > 0.0 {
        1.0
    } else {
        ops.compare(1);
        if slope < 0.0 {
            -1.0
        } else {
            // no information, e.g. a move blocked at a limit: reverse
            ops.tick(OpKind::BitandOr, 1);
            -(ax.voltage_sign * st.dir)
        }
    };
    st.p_prev = p;
    st.v_prev = m.v;
    st.i_prev = m.i;
    st.best_d = st.d;
    move_voltage(st, ax.voltage_sign * ddir, tun.d_step_fixed, ax, &mut ops);
    done(st, ops)
}

/// Incremental conductance with a relative tolerance on `dI/dV + I/V`.
pub fn ic_step(
    st: &mut MpptState,
    m: &Measurement,
    tun: &MpptTunables,
    ax: &DutyAxis,
) -> ControllerStep {
    let mut ops = OpProfile::EMPTY;
    ops.test_eq(1);
    if !st.primed {
        ops.tick(OpKind::Mul, 1);
        probe(st, m.v * m.i, m, tun.d_step_fixed, true, ax, &mut ops);
        return done(st, ops);
    }
    ops.tick(OpKind::Sub, 2);
    let dv = m.v - st.v_prev;
    let di = m.i - st.i_prev;
    st.v_prev = m.v;
    st.i_prev = m.i;
    ops.test_eq(1);
    let vdir = if dv == 0.0 {
        ops.test_eq(1);
        if di == 0.0 {
            return done(st, ops);
        }
        ops.compare(1);
        if di > 0.0 {
            1.0
        } else {
            -1.0
        }
    } else {
        // dI/dV + I/V, compared against eps·I/V
        ops.tick(OpKind::Div, 2);
        ops.tick(OpKind::Add, 1);
        let g = m.i / m.v;
        let x = di / dv + g;
        ops.tick(OpKind::Mul, 1);
        ops.tick(OpKind::BitandOr, 2);
        ops.compare(1);
        if x.abs() <= tun.eps_ic * g.abs() {
            return done(st, ops);
        }
        ops.compare(1);
        if x > 0.0 {
            1.0
        } else {
            -1.0
        }
    };
    move_voltage(st, vdir, tun.d_step_fixed, ax, &mut ops);
    done(st, ops)
}

/// Adaptive gradient step with steady-state freeze. Outside a probe the
/// steady test `|ΔP − ΔP_prev| ≤ α·P` together with `|ΔP| ≤ α·P` freezes the
/// duty and stored reference; while frozen the stored values are kept, and
/// a failed test drops back to tracking. Otherwise the duty moves by
/// `β·(dP/dV)/(P_rated/V_mp)`, magnitude clamped to
/// `[d_step_min, d_step_max]`, toward higher power.
pub fn adaptive_gd_step(
    st: &mut MpptState,
    m: &Measurement,
    tun: &MpptTunables,
    ax: &DutyAxis,
) -> ControllerStep {
    let mut ops = OpProfile::EMPTY;
    ops.tick(OpKind::Mul, 1);
    let p = m.v * m.i;
    ops.test_eq(1);
    if !st.primed {
        st.dp_prev = 0.0;
        st.mode = Mode::Tracking;
        probe(st, p, m, tun.d_step_min, true, ax, &mut ops);
        return done(st, ops);
    }
    ops.tick(OpKind::Sub, 1);
    let dp = p - st.p_prev;

    ops.test_eq(1);
    if !st.probing {
        // a power-of-two alpha is a shift
        if is_power_of_two(tun.alpha_ss) {
            ops.tick(OpKind::Shift, 1);
        } else {
            ops.tick(OpKind::Mul, 1);
        }
        let thr = tun.alpha_ss * p;
        ops.tick(OpKind::Sub, 1);
        ops.tick(OpKind::BitandOr, 1);
        ops.compare(1);
        let mut steady = (dp - st.dp_prev).abs() <= thr;
        if steady {
            ops.tick(OpKind::BitandOr, 1);
            ops.compare(1);
            steady = dp.abs() <= thr;
        }
        if steady {
            ops.test_eq(1);
            if st.mode == Mode::Frozen {
                // no current at a positive voltage: open circuit, back off
                ops.compare(1);
                if m.i <= 0.0 {
                    ops.compare(1);
                    if m.v > tun.eps_v {
                        st.mode = Mode::Tracking;
                        st.dp_prev = dp;
                        st.dir = -1.0;
                        probe(st, p, m, tun.d_step_max, true, ax, &mut ops);
                    }
                }
            } else {
                st.mode = Mode::Frozen;
                st.p_prev = p;
                st.v_prev = m.v;
                st.dp_prev = dp;
            }
            return done(st, ops);
        }
        // a frozen controller wakes here; its duty still sits on the stored
        // reference, so the zero-ΔV branch below probes
        st.mode = Mode::Tracking;
    }

    ops.tick(OpKind::Sub, 1);
    ops.tick(OpKind::BitandOr, 1);
    ops.compare(1);
    let dv = m.v - st.v_prev;
    st.dp_prev = dp;
    if dv.abs() <= tun.eps_v {
        // pinned at open circuit: back off at the largest step
        ops.compare(1);
        let step = if m.i <= 0.0 {
            st.dir = -1.0;
            tun.d_step_max
        } else {
            tun.d_step_min
        };
        probe(st, p, m, step, false, ax, &mut ops);
        return done(st, ops);
    }
    ops.tick(OpKind::Div, 1);
    let g = dp / dv;
    // beta / slope_scale is folded at configuration time
    ops.tick(OpKind::Mul, 1);
    ops.tick(OpKind::BitandOr, 1);
    let mut step = tun.beta / ax.slope_scale * g.abs();
    ops.compare(1);
    if step < tun.d_step_min {
        step = tun.d_step_min;
    } else {
        ops.compare(1);
        if step > tun.d_step_max {
            step = tun.d_step_max;
        }
    }
    st.p_prev = p;
    st.v_prev = m.v;
    st.i_prev = m.i;
    st.probing = false;
    move_voltage(st, g.signum(), step, ax, &mut ops);
    done(st, ops)
}

fn is_power_of_two(x: f64) -> bool {
    x > 0.0 && x.is_finite() && x.log2().fract() == 0.0
}

/// One iteration of the coarse duty scan: dwells on each of
/// `init_scan_points` evenly spaced duties, keeps the first-seen best power,
/// and hands over to tracking at the best duty.
pub fn init_routine_step(
    st: &mut MpptState,
    m: &Measurement,
    tun: &MpptTunables,
    ax: &DutyAxis,
) -> ControllerStep {
    let mut ops = OpProfile::EMPTY;
    ops.tick(OpKind::Add, 1);
    st.dwell += 1;
    ops.compare(1);
    if st.dwell < tun.init_dwell {
        return done(st, ops);
    }
    st.dwell = 0;
    ops.tick(OpKind::Mul, 1);
    let p = m.v * m.i;
    ops.compare(1);
    if p > st.best_p {
        st.best_p = p;
        st.best_d = st.d;
    }
    ops.tick(OpKind::Add, 1);
    st.scan_index += 1;
    ops.compare(1);
    if st.scan_index >= tun.init_scan_points {
        st.scan_index = tun.init_scan_points - 1;
        st.d = st.best_d;
        st.mode = Mode::Tracking;
        st.primed = false;
        return done(st, ops);
    }
    ops.tick(OpKind::Mul, 1);
    ops.tick(OpKind::Add, 1);
    st.d = scan_duty(st.scan_index, tun, ax);
    done(st, ops)
}

/// `scan_index`-th duty of the initialization grid.
pub fn scan_duty(j: u32, tun: &MpptTunables, ax: &DutyAxis) -> f64 {
    let n = tun.init_scan_points.max(2) - 1;
    ax.d_min + j as f64 * ((ax.d_max - ax.d_min) / n as f64)
}

/// Anything that turns measurements into duty commands.
pub trait DutyController {
    fn duty(&self) -> f64;
    fn mode(&self) -> Mode;
    fn step(&mut self, m: &Measurement) -> ControllerStep;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    algorithm: Algorithm,
    tunables: MpptTunables,
    axis: DutyAxis,
    state: MpptState,
}

impl Controller {
    pub fn new(algorithm: Algorithm, tunables: MpptTunables, axis: DutyAxis) -> Result<Self> {
        tunables.validate()?;
        let state = if algorithm == Algorithm::AdaptiveGdInit {
            let mut s = MpptState::new(scan_duty(0, &tunables, &axis), Mode::Initializing);
            s.best_d = s.d;
            s
        } else {
            let d = tunables.d_init.clamp(axis.d_min, axis.d_max);
            MpptState::new(d, Mode::Tracking)
        };
        Ok(Controller {
            algorithm,
            tunables,
            axis,
            state,
        })
    }

    /// Resumes from an arbitrary state.
    pub fn with_state(
        algorithm: Algorithm,
        tunables: MpptTunables,
        axis: DutyAxis,
        state: MpptState,
    ) -> Result<Self> {
        tunables.validate()?;
        Ok(Controller {
            algorithm,
            tunables,
            axis,
            state,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn state(&self) -> &MpptState {
        &self.state
    }
}

impl DutyController for Controller {
    fn duty(&self) -> f64 {
        self.state.d
    }

    fn mode(&self) -> Mode {
        self.state.mode
    }

    fn step(&mut self, m: &Measurement) -> ControllerStep {
        let (st, tun, ax) = (&mut self.state, &self.tunables, &self.axis);
        match self.algorithm {
            Algorithm::Po => po_step(st, m, tun, ax),
            Algorithm::Hc => hc_step(st, m, tun, ax),
            Algorithm::Ic => ic_step(st, m, tun, ax),
            Algorithm::AdaptiveGd => adaptive_gd_step(st, m, tun, ax),
            Algorithm::AdaptiveGdInit => {
                let initializing = st.mode == Mode::Initializing;
                let mut out = if initializing {
                    init_routine_step(st, m, tun, ax)
                } else {
                    adaptive_gd_step(st, m, tun, ax)
                };
                out.op_counts.test_eq(1);
                out
            }
        }
    }
}

/// Holds a constant duty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedDuty(pub f64);

impl DutyController for FixedDuty {
    fn duty(&self) -> f64 {
        self.0
    }

    fn mode(&self) -> Mode {
        Mode::Tracking
    }

    fn step(&mut self, _m: &Measurement) -> ControllerStep {
        ControllerStep {
            d_next: self.0,
            op_counts: OpProfile::EMPTY,
        }
    }
}
