use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mpptbench"));
    c.env_remove("MPPTBENCH_THREADS");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn curve_marks_every_peak() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["curve", "three_peaks", "-o", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("3 local maxima"));
    let svg = fs::read_to_string(dir.path().join("out/three_peaks_curve.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 4);
    let csv = fs::read_to_string(dir.path().join("out/three_peaks_curve.csv")).unwrap();
    assert!(csv.starts_with("voltage_V,current_A,power_W\n"));
    assert_eq!(csv.lines().count(), 1002);

    assert_eq!(
        code(&run(&["curve", "stc", "--points", "100"], dir.path())),
        2
    );
    let o = run(&["curve", "stc", "--points", "600"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("1 local maxima"), "{}", stdout(&o));
}

#[test]
fn mpp_of_reference_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["mpp", "stc", "--json"], dir.path());
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["p_max"].as_f64().unwrap() - 0.0933).abs() < 1e-3);
    assert!((v["v_mp"].as_f64().unwrap() - 0.650).abs() < 6.5e-3);
    let hot = run(&["mpp", "stc", "--temperature", "75", "--json"], dir.path());
    let h: serde_json::Value = serde_json::from_slice(&hot.stdout).unwrap();
    assert!(h["v_mp"].as_f64().unwrap() < v["v_mp"].as_f64().unwrap());
}

#[test]
fn usage_failures_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&run(&["mpp", "nowhere"], p)), 2);
    assert_eq!(code(&run(&["curve", "nowhere"], p)), 2);
    assert_eq!(code(&run(&["simulate", "missing.toml"], p)), 2);
    let bad = write(
        p,
        "bad.toml",
        "scenario = \"stc\"\nalgorithm = \"teleport\"\n",
    );
    assert_eq!(code(&run(&["simulate", &bad], p)), 2);
    let late = write(
        p,
        "late.toml",
        "scenario = \"stc\"\nalgorithm = \"po\"\nwindow = [0.04, 0.06]\n",
    );
    let o = run(&["simulate", &late], p);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("recorded run"));
    let garbage = write(p, "garbage.toml", "[[[");
    assert_eq!(code(&run(&["simulate", &garbage], p)), 2);
    assert_eq!(code(&run(&["cost", "--algorithm", "nope"], p)), 2);
    assert_eq!(code(&run(&["cost", "--weight", "add=2"], p)), 2);
    assert_eq!(code(&run(&["profiles", "dump", "nothing"], p)), 2);
    assert_eq!(code(&run(&["frobnicate"], p)), 2);
    let empty = write(p, "empty.csv", "");
    assert_eq!(code(&run(&["fom-audit", &empty], p)), 2);
    let o = bin()
        .args(["cost"])
        .env("MPPTBENCH_THREADS", "zero")
        .current_dir(p)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["--help"], p)), 0);
}

#[test]
fn simulation_failures_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "fixed.toml",
        "scenario = \"stc\"\nalgorithm = \"po\"\nconverter = \"resonant\"\n",
    );
    let o = run(&["simulate", &cfg], dir.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_profile1_proposed_beats_po() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = write(
        p,
        "run.toml",
        "scenario = \"profile1\"\nalgorithm = \"adaptive_gd\"\n",
    );
    let o = run(&["simulate", &cfg, "-o", "gd"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(
        &[
            "simulate",
            &cfg,
            "--algorithm",
            "po",
            "-o",
            "po",
            "--no-plot",
        ],
        p,
    );
    assert_eq!(code(&o), 0);
    let read = |f: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(p.join(f)).unwrap()).unwrap()
    };
    let gd = read("gd/profile1_adaptive_gd_boost_metrics.json");
    let po = read("po/profile1_po_boost_metrics.json");
    assert_eq!(gd["metrics"]["ss_oscillation"].as_f64().unwrap(), 0.0);
    assert!(
        gd["metrics"]["eta_mppt"].as_f64().unwrap() > po["metrics"]["eta_mppt"].as_f64().unwrap()
    );
    assert!(p.join("gd/profile1_adaptive_gd_boost.svg").exists());
    assert!(!p.join("po/profile1_po_boost.svg").exists());
    let csv = fs::read_to_string(p.join("gd/profile1_adaptive_gd_boost.csv")).unwrap();
    assert!(csv.starts_with("t_s,duty,v_pv_V,i_pv_A,p_pv_W,p_max_W,mode\n"));
    let log = read("gd/profile1_adaptive_gd_boost.json");
    assert_eq!(log["meta"]["algorithm"], "adaptive_gd");
    assert_eq!(
        log["samples"].as_array().unwrap().len(),
        csv.lines().count() - 1
    );
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = write(
        p,
        "run.toml",
        "scenario = \"stc\"\nalgorithm = \"po\"\n[sim]\nduration = 0.01\n",
    );
    let o = run(
        &[
            "simulate",
            &cfg,
            "--scenario",
            "two_peaks",
            "--algorithm",
            "hc",
            "--converter",
            "cuk",
            "--duration",
            "0.002",
            "--no-plot",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(p.join("two_peaks_hc_cuk.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 1000);
}

const MATRIX: &str = r#"
algorithms = ["po", "adaptive_gd"]
scenarios = ["stc", "two_peaks"]
converters = ["boost"]
[sim]
duration = 0.01
"#;

#[test]
fn bench_rows_and_byte_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let m = write(p, "matrix.toml", MATRIX);
    let runs: [(&str, Option<&str>, bool); 3] = [
        ("a", None, false),
        ("b", Some("1"), false),
        ("c", Some("2"), true),
    ];
    for (out, threads, sequential) in runs {
        let mut c = bin();
        c.args(["bench", &m, "-o", out]).current_dir(p);
        if sequential {
            c.arg("--sequential");
        }
        if let Some(t) = threads {
            c.env("MPPTBENCH_THREADS", t);
        }
        let o = c.output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read_to_string(p.join("a/bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(
        lines[0],
        "algorithm,scenario,converter,eta_pct,startup_time_s,tracking_time_s,ss_oscillation_pct,x_comp,fom,error"
    );
    assert!(lines[1].starts_with("po,stc,boost,"));
    assert!(lines[2].starts_with("po,two_peaks,boost,"));
    assert!(lines[3].starts_with("adaptive_gd,stc,boost,"));
    for f in ["bench.csv", "bench.json", "bench_eta.svg"] {
        let a = fs::read(p.join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(p.join("b").join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(p.join("c").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = write(
        p,
        "run.toml",
        "scenario = \"profile2\"\nalgorithm = \"adaptive_gd_init\"\n[sim]\nduration = 0.03\n",
    );
    for out in ["x", "y"] {
        assert_eq!(code(&run(&["simulate", &cfg, "-o", out], p)), 0);
    }
    for f in ["csv", "json", "svg"] {
        let name = format!("profile2_adaptive_gd_init_boost.{f}");
        assert_eq!(
            fs::read(p.join("x").join(&name)).unwrap(),
            fs::read(p.join("y").join(&name)).unwrap()
        );
    }
    let name = "profile2_adaptive_gd_init_boost_metrics.json";
    assert_eq!(
        fs::read(p.join("x").join(name)).unwrap(),
        fs::read(p.join("y").join(name)).unwrap()
    );
}

#[test]
fn fom_audit_of_bundled_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["fom-audit", "-o", "audit.json"], dir.path());
    assert_eq!(code(&o), 0);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("audit.json")).unwrap()).unwrap();
    assert_eq!(v["n_rows"], 35);
    assert_eq!(v["n_consistent"], 32);
    let flagged: Vec<&str> = v["flagged"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap())
        .collect();
    assert!(flagged.iter().any(|f| f.contains("Proposed")));
}

#[test]
fn cost_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["cost", "--json"], dir.path());
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let algos = v["algorithms"].as_array().unwrap();
    assert_eq!(algos.len(), 5);
    let x = |k: &str| {
        algos.iter().find(|a| a["algorithm"] == k).unwrap()["x_comp"]
            .as_f64()
            .unwrap()
    };
    assert!(x("po") < x("adaptive_gd"));
    assert!((59.0..=99.0).contains(&x("adaptive_gd")));
    let o = run(
        &[
            "cost",
            "--algorithm",
            "adaptive_gd",
            "--weight",
            "mul=8",
            "--json",
        ],
        dir.path(),
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(
        v["algorithms"][0]["x_comp"].as_f64().unwrap(),
        x("adaptive_gd") - 2.0
    );
}

#[test]
fn dumped_profile_runs_as_trace() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = run(&["profiles", "list"], p);
    let names = stdout(&o);
    for n in [
        "profile1",
        "profile2",
        "three_peaks",
        "temp_static_75",
        "temp_ramp_20_50",
    ] {
        assert!(names.lines().any(|l| l == n), "{n}");
    }
    assert_eq!(
        code(&run(
            &[
                "profiles",
                "dump",
                "profile1",
                "--dt",
                "0.0005",
                "-o",
                "trace.csv"
            ],
            p
        )),
        0
    );
    let cfg = write(
        p,
        "run.toml",
        "scenario = \"trace.csv\"\nalgorithm = \"adaptive_gd\"\nresample_dt = 0.0005\n",
    );
    let o = run(&["simulate", &cfg, "--no-plot"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(p.join("trace_adaptive_gd_boost_metrics.json").exists());
    let o = run(&["profiles", "dump", "temp_static_50"], p);
    assert!(stdout(&o).starts_with("time_s,temperature_c\n"));
}
