//! Normalized gate-level cost model, per-iteration operation profiles of the
//! implemented controllers, the figure of merit, and an auditor for
//! published comparison tables.
//!
//! Counting convention, applied to the worst-case path of one controller
//! iteration:
//! - every `+`/`-` is one `add`/`sub`, every `*` one `mul`, every `/` one `div`;
//! - every magnitude comparison is one `gt` plus one `branch`, every equality
//!   test one `eq` plus one `branch`;
//! - `abs` and sign flips are one `bitand_or` (sign-bit manipulation);
//! - controller state lives in registers, so loads and stores are free;
//! - products of configuration constants are folded at configuration time.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Shift,
    BitandOr,
    Eq,
    Gt,
    Branch,
    Lut,
    Ram,
    Exp,
    Log,
}

impl OpKind {
    pub const ALL: [OpKind; 13] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Shift,
        OpKind::BitandOr,
        OpKind::Eq,
        OpKind::Gt,
        OpKind::Branch,
        OpKind::Lut,
        OpKind::Ram,
        OpKind::Exp,
        OpKind::Log,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Shift => "shift",
            OpKind::BitandOr => "bitand_or",
            OpKind::Eq => "eq",
            OpKind::Gt => "gt",
            OpKind::Branch => "branch",
            OpKind::Lut => "lut",
            OpKind::Ram => "ram",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
        }
    }

    /// Midpoint of the normalized cost range, in X (one 10-bit addition).
    pub fn default_weight(&self) -> f64 {
        match self {
            OpKind::Add | OpKind::Sub => 1.0,
            OpKind::Mul => 9.0,
            OpKind::Div => 35.0,
            OpKind::Shift => 0.2,
            OpKind::BitandOr => 0.1,
            OpKind::Eq => 0.5,
            OpKind::Gt => 1.5,
            OpKind::Branch => 2.0,
            OpKind::Lut => 2.0,
            OpKind::Ram => 3.0,
            OpKind::Exp | OpKind::Log => 30.0,
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.key() == s)
            .ok_or_else(|| Error::UnknownOpKind(s.to_string()))
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Operation counts of one controller iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct OpProfile {
    counts: [u32; 13],
}

impl OpProfile {
    pub const EMPTY: OpProfile = OpProfile { counts: [0; 13] };

    pub fn get(&self, kind: OpKind) -> u32 {
        self.counts[kind.index()]
    }

    pub fn with(mut self, kind: OpKind, n: u32) -> Self {
        self.counts[kind.index()] += n;
        self
    }

    #[inline]
    pub(crate) fn tick(&mut self, kind: OpKind, n: u32) {
        self.counts[kind.index()] += n;
    }

    /// One magnitude comparison with its branch.
    #[inline]
    pub(crate) fn compare(&mut self, n: u32) {
        self.tick(OpKind::Gt, n);
        self.tick(OpKind::Branch, n);
    }

    /// One equality test with its branch.
    #[inline]
    pub(crate) fn test_eq(&mut self, n: u32) {
        self.tick(OpKind::Eq, n);
        self.tick(OpKind::Branch, n);
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn to_map(&self) -> BTreeMap<String, u32> {
        OpKind::ALL
            .iter()
            .filter(|k| self.get(**k) > 0)
            .map(|k| (k.key().to_string(), self.get(*k)))
            .collect()
    }

    pub fn from_map<'a, I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, u32)>,
    {
        let mut p = OpProfile::EMPTY;
        for (k, n) in entries {
            p.tick(k.parse()?, n);
        }
        Ok(p)
    }
}

impl Serialize for OpProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for OpProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, u32>::deserialize(d)?;
        OpProfile::from_map(map.iter().map(|(k, v)| (k.as_str(), *v)))
            .map_err(serde::de::Error::custom)
    }
}

/// Weight per operation kind in X.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    weights: [f64; 13],
}

impl Default for CostModel {
    fn default() -> Self {
        let mut weights = [0.0; 13];
        for k in OpKind::ALL {
            weights[k.index()] = k.default_weight();
        }
        CostModel { weights }
    }
}

impl CostModel {
    pub fn weight(&self, kind: OpKind) -> f64 {
        self.weights[kind.index()]
    }

    /// Defaults with the given weights replaced.
    pub fn with_overrides<'a, I>(overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        let mut m = CostModel::default();
        for (k, w) in overrides {
            let kind: OpKind = k.parse()?;
            if !(w > 0.0) {
                return Err(Error::Config(format!(
                    "weight for `{k}` must be > 0, got {w}"
                )));
            }
            m.weights[kind.index()] = w;
        }
        if m.weight(OpKind::Add) != 1.0 || m.weight(OpKind::Sub) != 1.0 {
            return Err(Error::Config(
                "add and sub define the unit and must weigh 1".into(),
            ));
        }
        Ok(m)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        OpKind::ALL
            .iter()
            .map(|k| (k.key().to_string(), self.weight(*k)))
            .collect()
    }
}

pub fn cost(profile: &OpProfile, model: &CostModel) -> f64 {
    OpKind::ALL
        .iter()
        .map(|k| profile.get(*k) as f64 * model.weight(*k))
        .sum()
}

/// Costs a profile given by op names, rejecting unknown names.
pub fn cost_named<'a, I>(entries: I, model: &CostModel) -> Result<f64>
where
    I: IntoIterator<Item = (&'a str, u32)>,
{
    Ok(cost(&OpProfile::from_map(entries)?, model))
}

/// Worst-case-path operation counts per iteration of each controller, read
/// off the branch structure in [`crate::mppt`].
pub mod profiles {
    use super::OpKind::*;
    use super::OpProfile;

    /// Power product, two deltas, two sign tests, power sign test,
    /// reversal, one add, saturation.
    pub const PO: OpProfile = OpProfile {
        counts: counts(&[
            (Add, 1),
            (Sub, 2),
            (Mul, 1),
            (BitandOr, 2),
            (Eq, 1),
            (Gt, 5),
            (Branch, 6),
        ]),
    };
    /// Power product, delta, duty delta, product of deltas, two sign tests,
    /// reversal, one add, saturation.
    pub const HC: OpProfile = OpProfile {
        counts: counts(&[
            (Add, 1),
            (Sub, 2),
            (Mul, 2),
            (BitandOr, 2),
            (Eq, 1),
            (Gt, 4),
            (Branch, 5),
        ]),
    };
    /// Two deltas, conductance and its increment, tolerance test, direction,
    /// one add, saturation.
    pub const IC: OpProfile = OpProfile {
        counts: counts(&[
            (Add, 2),
            (Sub, 2),
            (Mul, 1),
            (Div, 2),
            (BitandOr, 3),
            (Eq, 2),
            (Gt, 4),
            (Branch, 6),
        ]),
    };
    /// Gradient step: power, deltas, steady test, slope division, scaling,
    /// magnitude clamp, saturation.
    pub const ADAPTIVE_GD: OpProfile = OpProfile {
        counts: counts(&[
            (Add, 1),
            (Sub, 3),
            (Mul, 2),
            (Div, 1),
            (Shift, 1),
            (BitandOr, 5),
            (Eq, 2),
            (Gt, 7),
            (Branch, 9),
        ]),
    };
    /// Gradient step plus the mode dispatch.
    pub const ADAPTIVE_GD_INIT: OpProfile = OpProfile {
        counts: counts(&[
            (Add, 1),
            (Sub, 3),
            (Mul, 2),
            (Div, 1),
            (Shift, 1),
            (BitandOr, 5),
            (Eq, 3),
            (Gt, 7),
            (Branch, 10),
        ]),
    };
    /// Hold while frozen: power, delta, steady test, current check.
    pub const ADAPTIVE_GD_FROZEN: OpProfile = OpProfile {
        counts: counts(&[
            (Sub, 2),
            (Mul, 1),
            (Shift, 1),
            (BitandOr, 2),
            (Eq, 3),
            (Gt, 3),
            (Branch, 6),
        ]),
    };

    const fn counts(entries: &[(super::OpKind, u32)]) -> [u32; 13] {
        let mut out = [0u32; 13];
        let mut k = 0;
        while k < entries.len() {
            out[entries[k].0 as usize] += entries[k].1;
            k += 1;
        }
        out
    }
}

/// Inputs of the figure of merit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FomInputs {
    /// percent
    pub eta: f64,
    /// s
    pub t_track: f64,
    /// X
    pub x_comp: f64,
    /// percent
    pub dp_ss: f64,
}

impl FomInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 100.0) {
            return Err(Error::Config(format!(
                "eta must lie in (0, 100], got {}",
                self.eta
            )));
        }
        if !(self.t_track > 0.0) || !(self.x_comp > 0.0) || !(self.dp_ss >= 0.0) {
            return Err(Error::Config(format!(
                "figure of merit needs t_track > 0, x_comp > 0, dp_ss >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `η / (T · X · (1 + ΔP/100))`, in %/(s·X).
pub fn fom(inp: &FomInputs) -> f64 {
    inp.eta / (inp.t_track * inp.x_comp * (1.0 + inp.dp_ss / 100.0))
}

/// Tracking time that reconciles `published` with the other inputs.
pub fn implied_t_track(inp: &FomInputs, published: f64) -> f64 {
    inp.eta / (published * inp.x_comp * (1.0 + inp.dp_ss / 100.0))
}

/// Relative tolerance of the audit.
pub const AUDIT_TOLERANCE: f64 = 0.005;

/// Tracking-time cell of a published table: a value, a range `a-b`, or an
/// upper bound `<x` (evaluated at `x`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackCell {
    Value { t: f64 },
    Range { lo: f64, hi: f64 },
    Below { t: f64 },
}

impl TrackCell {
    pub fn candidates(&self) -> Vec<f64> {
        match *self {
            TrackCell::Value { t } | TrackCell::Below { t } => vec![t],
            TrackCell::Range { lo, hi } => vec![lo, hi],
        }
    }
}

impl FromStr for TrackCell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |x: &str| -> Result<f64> {
            let v: f64 = x
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad tracking time `{s}`")))?;
            if v > 0.0 {
                Ok(v)
            } else {
                Err(Error::Parse(format!("tracking time must be > 0 in `{s}`")))
            }
        };
        if let Some(rest) = s.strip_prefix('<') {
            return Ok(TrackCell::Below { t: num(rest)? });
        }
        if let Some((a, b)) = s.split_once('-') {
            return Ok(TrackCell::Range {
                lo: num(a)?,
                hi: num(b)?,
            });
        }
        Ok(TrackCell::Value { t: num(s)? })
    }
}

#[derive(Debug, Deserialize)]
struct AuditCsvRow {
    #[serde(rename = "ref")]
    reference: String,
    algorithm: String,
    eta_pct: f64,
    osc_pct: f64,
    power_w: String,
    t_track_s: String,
    x_comp: f64,
    fom_published: f64,
}

pub const AUDIT_HEADER: [&str; 8] = [
    "ref",
    "algorithm",
    "eta_pct",
    "osc_pct",
    "power_w",
    "t_track_s",
    "x_comp",
    "fom_published",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    #[serde(rename = "ref")]
    pub reference: String,
    pub algorithm: String,
    pub eta_pct: f64,
    pub osc_pct: f64,
    pub power_w: String,
    pub t_track: TrackCell,
    pub x_comp: f64,
    pub fom_published: f64,
    /// Recomputed value at each tracking-time candidate.
    pub fom_recomputed: Vec<f64>,
    /// Candidate that best matches the published value.
    pub t_track_used: f64,
    pub relative_error: f64,
    pub consistent: bool,
    /// Whether the best recomputed value rounds to the published one at
    /// three decimals.
    pub matches_at_3dp: bool,
    /// Tracking time reconciling the published value, for flagged rows.
    pub implied_t_track: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub tolerance: f64,
    pub n_rows: usize,
    pub n_consistent: usize,
    pub flagged: Vec<String>,
    pub rows: Vec<AuditRow>,
}

/// Recomputes the figure of merit of every row and flags rows whose
/// published value deviates by more than [`AUDIT_TOLERANCE`].
pub fn audit_table<R: Read>(reader: R) -> Result<AuditReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != AUDIT_HEADER {
        return Err(Error::Parse(format!(
            "expected header `{}`",
            AUDIT_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.deserialize::<AuditCsvRow>().enumerate() {
        let r = rec.map_err(|e| Error::Parse(format!("row {}: {e}", k + 1)))?;
        rows.push(audit_row(r).map_err(|e| Error::Parse(format!("row {}: {e}", k + 1)))?);
    }
    if rows.is_empty() {
        return Err(Error::Parse("audit table has no rows".into()));
    }
    let flagged = rows
        .iter()
        .filter(|r| !r.consistent)
        .map(|r| format!("{} / {}", r.reference, r.algorithm))
        .collect::<Vec<_>>();
    Ok(AuditReport {
        tolerance: AUDIT_TOLERANCE,
        n_rows: rows.len(),
        n_consistent: rows.len() - flagged.len(),
        flagged,
        rows,
    })
}

fn audit_row(r: AuditCsvRow) -> Result<AuditRow> {
    let t_track: TrackCell = r.t_track_s.parse()?;
    if !(r.fom_published > 0.0) {
        return Err(Error::Parse(format!(
            "published figure of merit must be > 0, got {}",
            r.fom_published
        )));
    }
    let inputs = |t: f64| FomInputs {
        eta: r.eta_pct,
        t_track: t,
        x_comp: r.x_comp,
        dp_ss: r.osc_pct,
    };
    inputs(1.0)
        .validate()
        .map_err(|e| Error::Parse(e.to_string()))?;
    let candidates = t_track.candidates();
    let recomputed: Vec<f64> = candidates.iter().map(|&t| fom(&inputs(t))).collect();
    let rel = |f: f64| (f - r.fom_published).abs() / r.fom_published;
    let best = (0..recomputed.len())
        .min_by(|&a, &b| rel(recomputed[a]).total_cmp(&rel(recomputed[b])))
        .expect("at least one candidate");
    let relative_error = rel(recomputed[best]);
    let consistent = relative_error <= AUDIT_TOLERANCE;
    let rounded = (recomputed[best] * 1000.0).round() / 1000.0;
    Ok(AuditRow {
        implied_t_track: (!consistent).then(|| implied_t_track(&inputs(1.0), r.fom_published)),
        matches_at_3dp: (rounded - r.fom_published).abs() < 5e-7,
        reference: r.reference,
        algorithm: r.algorithm,
        eta_pct: r.eta_pct,
        osc_pct: r.osc_pct,
        power_w: r.power_w,
        t_track,
        x_comp: r.x_comp,
        fom_published: r.fom_published,
        fom_recomputed: recomputed,
        t_track_used: candidates[best],
        relative_error,
        consistent,
    })
}

/// The comparison table shipped with the crate.
pub const LITERATURE_FOM_CSV: &str = include_str!("../fixtures/literature_fom.csv");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_and_examples() {
        let m = CostModel::default();
        assert_eq!(cost(&OpProfile::EMPTY.with(OpKind::Add, 1), &m), 1.0);
        assert_eq!(
            cost(
                &OpProfile::EMPTY.with(OpKind::Mul, 2).with(OpKind::Div, 1),
                &m
            ),
            53.0
        );
        assert_eq!(cost(&OpProfile::EMPTY, &m), 0.0);
        for n in [0u32, 1, 7, 1000] {
            assert_eq!(cost(&OpProfile::EMPTY.with(OpKind::Add, n), &m), n as f64);
        }
    }

    #[test]
    fn unknown_kinds_are_rejected() {
        assert!(matches!(
            cost_named([("fma", 1)], &CostModel::default()),
            Err(Error::UnknownOpKind(_))
        ));
        assert!(matches!(
            CostModel::with_overrides([("sqrt", 3.0)]),
            Err(Error::UnknownOpKind(_))
        ));
        assert_eq!(
            cost_named([("mul", 2), ("div", 1)], &CostModel::default()).unwrap(),
            53.0
        );
    }

    #[test]
    fn overrides_keep_unit() {
        let m = CostModel::with_overrides([("div", 40.0)]).unwrap();
        assert_eq!(m.weight(OpKind::Div), 40.0);
        assert!(CostModel::with_overrides([("add", 2.0)]).is_err());
    }

    #[test]
    fn profile_serde_round_trip() {
        let p = profiles::ADAPTIVE_GD;
        let json = serde_json::to_string(&p).unwrap();
        let back: OpProfile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn static_costs_are_ordered() {
        let m = CostModel::default();
        let gd = cost(&profiles::ADAPTIVE_GD, &m);
        assert!((59.0..=99.0).contains(&gd), "{gd}");
        assert!(cost(&profiles::PO, &m) < gd);
        assert!(cost(&profiles::ADAPTIVE_GD_FROZEN, &m) < gd);
    }

    #[test]
    fn fom_examples() {
        let f = |eta, t, x, dp| {
            fom(&FomInputs {
                eta,
                t_track: t,
                x_comp: x,
                dp_ss: dp,
            })
        };
        assert!((f(95.2, 0.02, 47.5, 0.5) - 99.712).abs() < 5e-4);
        assert!((f(99.82, 0.002, 1713.0, 0.18) - 29.084).abs() < 5e-4);
        assert!((f(99.98, 0.213, 75.5, 0.02) - 6.216).abs() < 5e-4);
        assert_eq!(f(100.0, 1.0, 1.0, 0.0), 100.0);
    }

    #[test]
    fn track_cells() {
        assert_eq!(
            "0.2".parse::<TrackCell>().unwrap(),
            TrackCell::Value { t: 0.2 }
        );
        assert_eq!(
            "0.05-0.1".parse::<TrackCell>().unwrap(),
            TrackCell::Range { lo: 0.05, hi: 0.1 }
        );
        assert_eq!(
            "< 0.002".parse::<TrackCell>().unwrap(),
            TrackCell::Below { t: 0.002 }
        );
        assert!("abc".parse::<TrackCell>().is_err());
        assert!("0".parse::<TrackCell>().is_err());
    }

    #[test]
    fn audit_parse_errors() {
        assert!(matches!(audit_table("".as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(
            audit_table(AUDIT_HEADER.join(",").as_bytes()),
            Err(Error::Parse(_))
        ));
        let bad = format!("{}\nx,y,abc,0,1,0.1,10,1\n", AUDIT_HEADER.join(","));
        assert!(matches!(audit_table(bad.as_bytes()), Err(Error::Parse(_))));
    }
}
