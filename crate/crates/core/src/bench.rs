//! Single runs and the algorithm × scenario × converter benchmark matrix.

use serde::Serialize;

use crate::config::{Common, ConverterConfig, MatrixConfig, RunConfig};
use crate::converter::ConverterSpec;
use crate::costing::{cost, fom, CostModel, FomInputs};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{evaluate_with_window, MetricReport};
use crate::mppt::{Algorithm, Controller, DutyAxis};
use crate::scenarios::{resolve_scenario, Scenario};
use crate::sim::{run, RunLabels, RunLog};

/// Everything a single closed-loop run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub log: RunLog,
    pub metrics: MetricReport,
    /// Static worst-case cost of the algorithm, X.
    pub x_comp: f64,
    /// `None` when the run never settles or settles instantly.
    pub fom: Option<f64>,
}

pub fn run_one(
    scenario: &Scenario,
    algorithm: Algorithm,
    converter: &ConverterSpec,
    common: &Common,
    window: Option<(f64, f64)>,
    exec: Exec,
) -> Result<RunOutcome> {
    let model = common.cost_model()?;
    let axis = DutyAxis::for_array(&scenario.array, converter)?;
    let mut controller = Controller::new(algorithm, common.mppt, axis)?;
    let labels = RunLabels {
        scenario: scenario.name.clone(),
        algorithm: algorithm.key().to_string(),
    };
    let log = run(
        &scenario.array,
        &scenario.stimulus,
        converter,
        &mut controller,
        &common.sim,
        &labels,
        exec,
    )?;
    let metrics = evaluate_with_window(&log, window).map_err(|e| match (e, &log.samples[..]) {
        (Error::WindowInvalid(t0, t1), [first, .., last]) if window.is_some() => {
            Error::Config(format!(
                "steady-state window [{t0}, {t1}] must lie inside the recorded run [{}, {}]",
                first.t, last.t
            ))
        }
        (e, _) => e,
    })?;
    let x_comp = cost(&algorithm.op_profile(), &model);
    let fom = figure_of_merit(&metrics, x_comp);
    Ok(RunOutcome {
        log,
        metrics,
        x_comp,
        fom,
    })
}

fn figure_of_merit(m: &MetricReport, x_comp: f64) -> Option<f64> {
    let inputs = FomInputs {
        eta: m.eta_mppt,
        t_track: m.worst_tracking_time()?,
        x_comp,
        dp_ss: m.ss_oscillation,
    };
    inputs.validate().ok().map(|_| fom(&inputs))
}

/// Resolves and runs a run file.
pub fn run_config(cfg: &RunConfig, exec: Exec) -> Result<RunOutcome> {
    let common = cfg.common();
    let scenario = resolve_scenario(&cfg.scenario, common.resample_dt())?;
    let spec = cfg.converter.config().to_spec()?;
    run_one(
        &scenario,
        cfg.algorithm.parse()?,
        &spec,
        &common,
        cfg.window,
        exec,
    )
}

/// One row of the long-form benchmark table. Metric fields are empty when
/// the cell failed; `error` then says why.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub algorithm: String,
    pub scenario: String,
    pub converter: String,
    pub eta_pct: Option<f64>,
    pub startup_time_s: Option<f64>,
    /// Longest tracking time over all events.
    pub tracking_time_s: Option<f64>,
    pub ss_oscillation_pct: Option<f64>,
    pub x_comp: f64,
    pub fom: Option<f64>,
    pub error: Option<String>,
}

pub const BENCH_HEADER: [&str; 10] = [
    "algorithm",
    "scenario",
    "converter",
    "eta_pct",
    "startup_time_s",
    "tracking_time_s",
    "ss_oscillation_pct",
    "x_comp",
    "fom",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub cost_weights: std::collections::BTreeMap<String, f64>,
    pub rows: Vec<BenchRow>,
}

struct Cell<'a> {
    algorithm: Algorithm,
    scenario: &'a str,
    converter: ConverterConfig,
}

/// Runs every cell, ordered by algorithm, then scenario, then converter, in
/// the order the matrix lists them. Cells run on the worker pool; a failing
/// cell is reported in its row and does not stop the others.
pub fn run_matrix(m: &MatrixConfig, exec: Exec) -> Result<BenchReport> {
    m.validate()?;
    let common = m.common();
    let model: CostModel = common.cost_model()?;
    let mut cells = Vec::new();
    for a in &m.algorithms {
        let algorithm: Algorithm = a.parse()?;
        for s in &m.scenarios {
            for c in &m.converters {
                cells.push(Cell {
                    algorithm,
                    scenario: s,
                    converter: c.config(),
                });
            }
        }
    }
    let rows = exec.map(&cells, |cell| {
        let x_comp = cost(&cell.algorithm.op_profile(), &model);
        let mut row = BenchRow {
            algorithm: cell.algorithm.key().to_string(),
            scenario: cell.scenario.to_string(),
            converter: cell.converter.topology.clone(),
            eta_pct: None,
            startup_time_s: None,
            tracking_time_s: None,
            ss_oscillation_pct: None,
            x_comp,
            fom: None,
            error: None,
        };
        let outcome = resolve_scenario(cell.scenario, common.resample_dt()).and_then(|sc| {
            let spec = cell.converter.to_spec()?;
            // cells already occupy the pool
            run_one(&sc, cell.algorithm, &spec, &common, None, Exec::Sequential)
        });
        match outcome {
            Ok(o) => {
                row.eta_pct = Some(o.metrics.eta_mppt);
                row.startup_time_s = o.metrics.startup_time();
                row.tracking_time_s = o.metrics.worst_tracking_time();
                row.ss_oscillation_pct = Some(o.metrics.ss_oscillation);
                row.fom = o.fom;
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    });
    Ok(BenchReport {
        cost_weights: model.to_map(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rows_are_ordered_and_errors_are_kept() {
        let m: MatrixConfig = r#"
algorithms = ["po", "adaptive_gd"]
scenarios = ["stc", "no_such_scenario"]
converters = ["boost", "resonant"]
[sim]
duration = 0.002
"#
        .parse()
        .unwrap();
        let r = run_matrix(&m, Exec::Sequential).unwrap();
        assert_eq!(r.rows.len(), 8);
        let keys: Vec<(&str, &str, &str)> = r
            .rows
            .iter()
            .map(|r| {
                (
                    r.algorithm.as_str(),
                    r.scenario.as_str(),
                    r.converter.as_str(),
                )
            })
            .collect();
        assert_eq!(keys[0], ("po", "stc", "boost"));
        assert_eq!(keys[1], ("po", "stc", "resonant"));
        assert_eq!(keys[2], ("po", "no_such_scenario", "boost"));
        assert_eq!(keys[4], ("adaptive_gd", "stc", "boost"));
        assert!(r.rows[0].error.is_none() && r.rows[0].eta_pct.is_some());
        assert!(r.rows[1].error.as_deref().unwrap().contains("resonant"));
        assert!(r.rows[2]
            .error
            .as_deref()
            .unwrap()
            .contains("no_such_scenario"));
        let par = run_matrix(&m, Exec::Parallel).unwrap();
        assert_eq!(par, r);
    }
}
