use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use mpptbench::array::{Circuit, Conditions, CurveTable};
use mpptbench::bench::{run_config, run_matrix, BenchReport, RunOutcome};
use mpptbench::config::{
    load_matrix, load_run, ConverterEntry, MatrixConfig, RunConfig, DEFAULT_RESAMPLE_DT,
};
use mpptbench::costing::{audit_table, cost, CostModel, OpKind, LITERATURE_FOM_CSV};
use mpptbench::exec::configure_threads;
use mpptbench::mppt::Algorithm;
use mpptbench::plot::{heatmap, render, Marker, Panel, Series};
use mpptbench::pv::{mpp_oracle, OperatingPoint};
use mpptbench::report::{
    to_bytes, to_json, write_bench_csv, write_curve_csv, write_file, write_profile_csv,
};
use mpptbench::scenarios::{builtin_profile, resolve_scenario, scenario_names};
use mpptbench::{Error, Exec};

const THREADS_ENV: &str = "MPPTBENCH_THREADS";

/// `println!` that ignores a closed stdout instead of panicking.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

fn say_raw(s: &[u8]) {
    let _ = std::io::stdout().write_all(s);
}

#[derive(Parser)]
#[command(
    name = "mpptbench",
    version,
    about = "Deterministic MPPT simulation and benchmarking"
)]
struct Cli {
    /// Run every sweep on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the I-V and P-V curve of a scenario array (CSV + SVG).
    Curve {
        scenario: String,
        #[command(flatten)]
        cond: CondArgs,
        /// Number of voltage points.
        #[arg(long, default_value_t = 1001)]
        points: usize,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
    /// Print the global maximum power point of a scenario array.
    Mpp {
        scenario: String,
        #[command(flatten)]
        cond: CondArgs,
        #[arg(long)]
        json: bool,
    },
    /// Run one closed-loop simulation from a TOML run file.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        converter: Option<String>,
        /// Run length in s.
        #[arg(long)]
        duration: Option<f64>,
        /// Controller period in s.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
        /// Skip the SVG plot.
        #[arg(long)]
        no_plot: bool,
    },
    /// Run an algorithm x scenario x converter matrix from a TOML file.
    Bench {
        matrix: PathBuf,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
        /// Skip the SVG heatmap.
        #[arg(long)]
        no_plot: bool,
    },
    /// Print worst-case op counts and normalized cost per algorithm.
    Cost {
        /// Restrict to these algorithms.
        #[arg(long = "algorithm")]
        algorithms: Vec<String>,
        /// Weight override, e.g. `mul=8`.
        #[arg(long = "weight", value_parser = parse_weight)]
        weights: Vec<(String, f64)>,
        #[arg(long)]
        json: bool,
    },
    /// Recompute a published figure-of-merit table.
    FomAudit {
        /// Audit CSV; the bundled literature table when omitted.
        csv: Option<PathBuf>,
        #[arg(short, long, default_value = "fom_audit.json")]
        out: PathBuf,
    },
    /// Built-in irradiance and temperature profiles.
    Profiles {
        #[command(subcommand)]
        action: ProfilesAction,
    },
}

#[derive(Args)]
struct CondArgs {
    /// Irradiance scale in W/m² (1000 keeps the scenario as defined).
    #[arg(long, default_value_t = 1000.0)]
    irradiance: f64,
    /// Override every device temperature, °C.
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Subcommand)]
enum ProfilesAction {
    /// List scenario and profile names.
    List,
    /// Sample a built-in profile to CSV.
    Dump {
        name: String,
        /// Sampling step in s.
        #[arg(long, default_value_t = DEFAULT_RESAMPLE_DT)]
        dt: f64,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn parse_weight(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected kind=weight, got `{s}`"))?;
    let w: f64 = v.trim().parse().map_err(|_| format!("bad weight `{v}`"))?;
    Ok((k.trim().to_string(), w))
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
            .into()),
        },
        Err(_) => Ok(None),
    }
}

/// File-name friendly form of a scenario, algorithm or converter label.
fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn circuit_for(scenario: &str, cond: &CondArgs) -> Result<(String, Circuit)> {
    let sc = resolve_scenario(scenario, DEFAULT_RESAMPLE_DT)?;
    let conditions = Conditions {
        irradiance: cond.irradiance,
        temperature: cond.temperature,
    };
    if !(cond.irradiance >= 0.0 && cond.irradiance.is_finite()) {
        return Err(
            Error::Config(format!("irradiance must be >= 0, got {}", cond.irradiance)).into(),
        );
    }
    Ok((sc.name, sc.array.circuit(&conditions)?))
}

fn curve_panels(name: &str, table: &CurveTable, mpp: &OperatingPoint) -> Vec<Panel> {
    let peaks = table.local_maxima();
    let markers: Vec<Marker> = peaks
        .iter()
        .map(|&j| {
            let (v, i) = table.points[j];
            Marker {
                x: v,
                y: v * i,
                label: format!("{:.2} mW", v * i * 1e3),
            }
        })
        .chain(std::iter::once(Marker {
            x: mpp.voltage,
            y: mpp.power,
            label: "GMPP".into(),
        }))
        .collect();
    vec![
        Panel {
            title: format!("{name}: P-V"),
            x_label: "voltage (V)".into(),
            y_label: "power (W)".into(),
            series: vec![Series::new(
                "P",
                table.points.iter().map(|&(v, i)| (v, v * i)).collect(),
            )],
            markers,
        },
        Panel {
            title: format!("{name}: I-V"),
            x_label: "voltage (V)".into(),
            y_label: "current (A)".into(),
            series: vec![Series::new("I", table.points.clone())],
            markers: vec![],
        },
    ]
}

fn cmd_curve(scenario: &str, cond: &CondArgs, points: usize, out: &Path, exec: Exec) -> Result<()> {
    let (name, circuit) = circuit_for(scenario, cond)?;
    let table = circuit.tabulate(points, exec)?;
    let mpp = mpp_oracle(&circuit, circuit.open_circuit_voltage())?;
    let stem = out.join(format!("{}_curve", slug(&name)));
    let csv_path = stem.with_extension("csv");
    write_file(&csv_path, &to_bytes(|b| write_curve_csv(&table, b))?)?;
    let svg_path = stem.with_extension("svg");
    write_file(
        &svg_path,
        render(&curve_panels(&name, &table, &mpp)).as_bytes(),
    )?;
    say!(
        "{name}: {} local maxima, GMPP {:.6} W at {:.6} V",
        table.local_maxima().len(),
        mpp.power,
        mpp.voltage
    );
    say!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

fn cmd_mpp(scenario: &str, cond: &CondArgs, json: bool) -> Result<()> {
    let (name, circuit) = circuit_for(scenario, cond)?;
    let v_oc = circuit.open_circuit_voltage();
    let mpp = mpp_oracle(&circuit, v_oc)?;
    let report = serde_json::json!({
        "scenario": name,
        "irradiance": cond.irradiance,
        "temperature": cond.temperature,
        "v_oc": v_oc,
        "i_sc": circuit.short_circuit_current(),
        "v_mp": mpp.voltage,
        "i_mp": mpp.current,
        "p_max": mpp.power,
    });
    if json {
        say_raw(to_json(&report)?.as_bytes());
    } else {
        say!(
            "{name}: P_max {:.6} W at V_mp {:.6} V, I_mp {:.6} A (V_oc {:.6} V, I_sc {:.6} A)",
            mpp.power,
            mpp.voltage,
            mpp.current,
            v_oc,
            circuit.short_circuit_current()
        );
    }
    Ok(())
}

fn run_panels(o: &RunOutcome) -> Vec<Panel> {
    let s = &o.log.samples;
    let title = format!(
        "{} / {} / {}",
        o.log.meta.scenario, o.log.meta.algorithm, o.log.meta.converter
    );
    vec![
        Panel {
            title: title.clone(),
            x_label: "time (s)".into(),
            y_label: "power (W)".into(),
            series: vec![
                Series::new("p_max", s.iter().map(|x| (x.t, x.p_max)).collect()).dashed(),
                Series::new("p_pv", s.iter().map(|x| (x.t, x.p_pv)).collect()),
            ],
            markers: vec![],
        },
        Panel {
            title,
            x_label: "time (s)".into(),
            y_label: "duty".into(),
            series: vec![Series::new(
                "duty",
                s.iter().map(|x| (x.t, x.duty)).collect(),
            )],
            markers: vec![],
        },
    ]
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &Path,
    scenario: Option<String>,
    algorithm: Option<String>,
    converter: Option<String>,
    duration: Option<f64>,
    dt: Option<f64>,
    out: &Path,
    no_plot: bool,
    exec: Exec,
) -> Result<()> {
    let mut cfg: RunConfig = load_run(config)?;
    if let Some(s) = scenario {
        cfg.scenario = s;
    }
    if let Some(a) = algorithm {
        cfg.algorithm = a;
    }
    if let Some(c) = converter {
        cfg.converter = ConverterEntry::Key(c);
    }
    if duration.is_some() {
        cfg.sim.duration = duration;
    }
    if let Some(dt) = dt {
        cfg.sim.dt_mppt = dt;
    }
    cfg.validate()?;
    let o = run_config(&cfg, exec)?;
    let meta = &o.log.meta;
    let stem = out.join(format!(
        "{}_{}_{}",
        slug(&meta.scenario),
        slug(&meta.algorithm),
        slug(&meta.converter)
    ));
    let with = |ext: &str| PathBuf::from(format!("{}{ext}", stem.display()));
    write_file(&with(".csv"), &to_bytes(|b| o.log.write_csv(b))?)?;
    write_file(&with(".json"), to_json(&o.log)?.as_bytes())?;
    let metrics = serde_json::json!({
        "scenario": meta.scenario,
        "algorithm": meta.algorithm,
        "converter": meta.converter,
        "metrics": o.metrics,
        "x_comp": o.x_comp,
        "fom": o.fom,
    });
    write_file(&with("_metrics.json"), to_json(&metrics)?.as_bytes())?;
    if !no_plot {
        write_file(&with(".svg"), render(&run_panels(&o)).as_bytes())?;
    }
    let t = |v: Option<f64>| v.map_or("never".to_string(), |x| format!("{:.1} us", x * 1e6));
    say!(
        "{} / {} / {}: eta {:.3} %, startup {}, worst tracking {}, oscillation {:.3} %, X {:.1}, FoM {}",
        meta.scenario,
        meta.algorithm,
        meta.converter,
        o.metrics.eta_mppt,
        t(o.metrics.startup_time()),
        t(o.metrics.worst_tracking_time()),
        o.metrics.ss_oscillation,
        o.x_comp,
        o.fom.map_or("n/a".to_string(), |f| format!("{f:.3}"))
    );
    say!(
        "wrote {}{{.csv,.json,_metrics.json{}}}",
        stem.display(),
        if no_plot { "" } else { ",.svg" }
    );
    Ok(())
}

fn bench_heatmap(r: &BenchReport, m: &MatrixConfig) -> String {
    let rows: Vec<String> = m.algorithms.clone();
    let mut cols = Vec::new();
    for s in &m.scenarios {
        for c in &m.converters {
            cols.push(format!("{s} / {}", c.config().topology));
        }
    }
    let values: Vec<Vec<Option<f64>>> = r
        .rows
        .chunks(cols.len())
        .map(|chunk| chunk.iter().map(|row| row.eta_pct).collect())
        .collect();
    heatmap("MPPT efficiency (%)", &rows, &cols, &values)
}

fn cmd_bench(matrix: &Path, out: &Path, no_plot: bool, exec: Exec) -> Result<()> {
    let m = load_matrix(matrix)?;
    let r = run_matrix(&m, exec)?;
    let csv_path = out.join("bench.csv");
    write_file(&csv_path, &to_bytes(|b| write_bench_csv(&r, b))?)?;
    write_file(&out.join("bench.json"), to_json(&r)?.as_bytes())?;
    if !no_plot {
        write_file(&out.join("bench_eta.svg"), bench_heatmap(&r, &m).as_bytes())?;
    }
    let failed = r.rows.iter().filter(|row| row.error.is_some()).count();
    say!(
        "{} cells, {failed} failed; wrote {}",
        r.rows.len(),
        csv_path.display()
    );
    for row in r.rows.iter().filter(|row| row.error.is_some()) {
        eprintln!(
            "  {} / {} / {}: {}",
            row.algorithm,
            row.scenario,
            row.converter,
            row.error.as_deref().unwrap_or_default()
        );
    }
    Ok(())
}

fn cmd_cost(algorithms: &[String], weights: &[(String, f64)], json: bool) -> Result<()> {
    let model = CostModel::with_overrides(weights.iter().map(|(k, w)| (k.as_str(), *w)))?;
    let selected: Vec<Algorithm> = if algorithms.is_empty() {
        Algorithm::ALL.to_vec()
    } else {
        algorithms
            .iter()
            .map(|a| a.parse())
            .collect::<mpptbench::Result<_>>()?
    };
    let rows: Vec<serde_json::Value> = selected
        .iter()
        .map(|a| {
            let p = a.op_profile();
            serde_json::json!({ "algorithm": a.key(), "ops": p, "x_comp": cost(&p, &model) })
        })
        .collect();
    if json {
        say_raw(
            to_json(&serde_json::json!({ "weights": model.to_map(), "algorithms": rows }))?
                .as_bytes(),
        );
        return Ok(());
    }
    let mut table = format!("{:<18}", "algorithm");
    for k in OpKind::ALL {
        table += &format!("{:>10}", k.key());
    }
    table += &format!("{:>10}\n", "X");
    for a in &selected {
        let p = a.op_profile();
        table += &format!("{:<18}", a.key());
        for k in OpKind::ALL {
            table += &format!("{:>10}", p.get(k));
        }
        table += &format!("{:>10.1}\n", cost(&p, &model));
    }
    say_raw(table.as_bytes());
    Ok(())
}

fn cmd_fom_audit(csv: Option<&Path>, out: &Path) -> Result<()> {
    let report = match csv {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            audit_table(std::io::BufReader::new(f))?
        }
        None => audit_table(LITERATURE_FOM_CSV.as_bytes())?,
    };
    write_file(out, to_json(&report)?.as_bytes())?;
    say!(
        "{} of {} rows consistent within {:.1} %",
        report.n_consistent,
        report.n_rows,
        report.tolerance * 100.0
    );
    for row in report.rows.iter().filter(|r| !r.consistent) {
        say!(
            "  flagged {} ({}): published {}, recomputed {:.3}{}",
            row.reference,
            row.algorithm,
            row.fom_published,
            row.fom_recomputed.iter().copied().fold(f64::NAN, f64::max),
            row.implied_t_track
                .map_or(String::new(), |t| format!(", implied t_track {t:.4} s"))
        );
    }
    say!("wrote {}", out.display());
    Ok(())
}

fn cmd_profiles(action: ProfilesAction) -> Result<()> {
    match action {
        ProfilesAction::List => {
            for n in scenario_names() {
                say!("{n}");
            }
            Ok(())
        }
        ProfilesAction::Dump { name, dt, out } => {
            let p = builtin_profile(&name)?;
            let bytes = to_bytes(|b| write_profile_csv(&p, dt, b))?;
            match out {
                Some(path) => write_file(&path, &bytes)?,
                None => say_raw(&bytes),
            }
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads(threads_from_env()?);
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::Curve {
            scenario,
            cond,
            points,
            out,
        } => cmd_curve(&scenario, &cond, points, &out, exec),
        Command::Mpp {
            scenario,
            cond,
            json,
        } => cmd_mpp(&scenario, &cond, json),
        Command::Simulate {
            config,
            scenario,
            algorithm,
            converter,
            duration,
            dt,
            out,
            no_plot,
        } => cmd_simulate(
            &config, scenario, algorithm, converter, duration, dt, &out, no_plot, exec,
        ),
        Command::Bench {
            matrix,
            out,
            no_plot,
        } => cmd_bench(&matrix, &out, no_plot, exec),
        Command::Cost {
            algorithms,
            weights,
            json,
        } => cmd_cost(&algorithms, &weights, json),
        Command::FomAudit { csv, out } => cmd_fom_audit(csv.as_deref(), &out),
        Command::Profiles { action } => cmd_profiles(action),
    }
}

/// 1 for numerical failures inside the library, 2 for everything caused by
/// input: names, files, configs, parse errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if !e.is_usage() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
