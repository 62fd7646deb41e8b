mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{two_bus, two_bus_oracle, Leg};
use feedersched::gmm::GmmModel;
use feedersched::pipeline::{
    alpha_sweep, emit_reports, load_inputs, run_pipeline, run_with_inputs, Beta, Inputs, RunConfig,
    RunSettings, Stage,
};
use feedersched::scheduler::{DemandSeries, PriceSchedule};

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

/// Two-bus case on disk with the given load and a zero-error history.
fn toy_case(dir: &Path, load_kw: f64) -> RunConfig {
    write(
        dir,
        "toy.feeder",
        &format!(
            "base_mva = 1\nbase_kv = 4.16\nbus 0 root p=0 q=0 vmin=0.9 vmax=1.1\nbus 1 p={load_kw} q=0 vmin=0.8 vmax=1.1\nbranch 0 1 r=0.01 x=0.02 lmax=10\n"
        ),
    );
    write(
        dir,
        "prices.csv",
        &format!("hour,c_da,c_rt,c_pv,c_s,g_dl,g_pv_forecast\n1,0.05,0.3,0.03,0.02,{load_kw},0\n"),
    );
    let history: String = std::iter::once("timestamp,forecast,actual\n".to_string())
        .chain((0..30).map(|d| format!("2024-01-01 {:02}:00,100,100\n", d % 24)))
        .collect();
    write(dir, "history.csv", &history);
    write(
        dir,
        "run.cfg",
        "[data]\nfeeder = toy.feeder\nprices = prices.csv\nhistory = history.csv\n[schedule]\nalpha = 0.9\nhorizon = 1\nmc_samples = 1000\n",
    );
    RunConfig::load(&dir.join("run.cfg")).unwrap()
}

#[test]
fn zero_demand_costs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&toy_case(dir.path(), 0.0)).unwrap();
    assert_eq!(report.total_cost, 0.0);
    assert_eq!(report.f1, 0.0);
    assert_eq!(report.f2_kwh, 0.0);
}

#[test]
fn two_bus_cost_composes_module_oracles() {
    let net = two_bus(Leg {
        r: 0.01,
        x: 0.02,
        p: 0.4,
        q: 0.1,
    });
    let prices = PriceSchedule::uniform(1, 0.06, 0.4, 0.03, 0.02).unwrap();
    let inputs = Inputs {
        network: net,
        prices,
        demand: DemandSeries::new(vec![400.0], vec![0.0]).unwrap(),
        errors: vec![GmmModel::point_mass(0.0)],
    };
    let settings = RunSettings {
        horizon: 1,
        beta: Beta::Fixed(0.1),
        mc_samples: 500,
        ..RunSettings::default()
    };
    let report = run_with_inputs(&settings, &inputs).unwrap();
    let oracle = two_bus_oracle(
        1.0,
        Leg {
            r: 0.01,
            x: 0.02,
            p: 0.4,
            q: 0.1,
        },
    );
    let loss_kwh = 0.01 * oracle.l * 1000.0;
    let expected = 0.06 * 400.0 + 0.1 * loss_kwh;
    assert!(
        (report.total_cost - expected).abs() < 1e-6,
        "{} vs {expected}",
        report.total_cost
    );
    assert_eq!(report.total_cost, report.f1 + report.beta * report.f2_kwh);
}

#[test]
fn single_alpha_sweep_equals_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_case(dir.path(), 250.0);
    let inputs = load_inputs(&cfg).unwrap();
    let run = run_with_inputs(&cfg.settings, &inputs).unwrap();
    let table = alpha_sweep(&cfg.settings, &inputs, &[cfg.settings.alpha]).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].total_cost, run.total_cost);
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn default_case_reports_are_consistent() {
    let cfg = RunConfig::load(&common::data_dir().join("default.cfg")).unwrap();
    let report = run_pipeline(&cfg).unwrap();
    let out = tempfile::tempdir().unwrap();
    emit_reports(&report, out.path()).unwrap();

    let residual_files = fs::read_dir(out.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("residuals_hour_")
        })
        .count();
    assert_eq!(residual_files, 24);

    // C from the per-hour table.
    let (header, rows) = read_csv(&out.path().join("schedule.csv"));
    let (ec, lk) = (
        column(&header, "expected_cost"),
        column(&header, "loss_kwh"),
    );
    let f1: f64 = rows.iter().map(|r| r[ec]).sum();
    let f2: f64 = rows.iter().map(|r| r[lk]).sum();
    let summary = fs::read_to_string(out.path().join("summary.txt")).unwrap();
    let value = |key: &str| -> f64 {
        summary
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((f1 + value("beta") * f2 - value("C")).abs() <= 1e-9);

    // Per-hour loss from the branch tables.
    for (t, row) in rows.iter().enumerate() {
        let (h, branches) = read_csv(&out.path().join(format!("opf_hour_{}.csv", t + 1)));
        let loss: f64 = branches.iter().map(|b| b[column(&h, "loss")]).sum();
        assert!(
            (loss - row[lk]).abs() <= 1e-9 * row[lk].max(1.0),
            "hour {}",
            t + 1
        );
    }

    // Re-emitting the same report leaves identical bytes.
    let before = fs::read(out.path().join("schedule.csv")).unwrap();
    emit_reports(&report, out.path()).unwrap();
    assert_eq!(before, fs::read(out.path().join("schedule.csv")).unwrap());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_feedersched"))
}

#[test]
fn cli_runs_each_subcommand() {
    let data = common::data_dir();
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let status = |args: &[&str]| cli().args(args).output().unwrap();

    let fit = status(&[
        "fit-errors",
        "--history",
        data.join("error_history.csv").to_str().unwrap(),
        "--nmax",
        "3",
        "--out",
        o,
    ]);
    assert!(
        fit.status.success(),
        "{}",
        String::from_utf8_lossy(&fit.stderr)
    );
    assert!(out.path().join("mdl.csv").is_file());
    assert!(out.path().join("error_model.txt").is_file());

    let opf = status(&[
        "opf",
        "--feeder",
        data.join("ieee123.feeder").to_str().unwrap(),
        "--hour",
        "13",
        "--pv-kw",
        "1200",
        "--out",
        o,
    ]);
    assert!(
        opf.status.success(),
        "{}",
        String::from_utf8_lossy(&opf.stderr)
    );
    assert!(out.path().join("residuals_hour_13.csv").is_file());

    let dir = tempfile::tempdir().unwrap();
    toy_case(dir.path(), 300.0);
    let cfg = dir.path().join("run.cfg");
    let sweep = status(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--alphas",
        "0.6,0.8",
        "--out",
        o,
    ]);
    assert!(
        sweep.status.success(),
        "{}",
        String::from_utf8_lossy(&sweep.stderr)
    );
    assert_eq!(
        fs::read_to_string(out.path().join("alpha_sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let schedule = status(&["schedule", "--config", cfg.to_str().unwrap(), "--out", o]);
    assert!(
        schedule.status.success(),
        "{}",
        String::from_utf8_lossy(&schedule.stderr)
    );
    assert!(out.path().join("summary.txt").is_file());
}

#[test]
fn cli_failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    toy_case(dir.path(), 300.0);
    let bad = dir.path().join("bad.cfg");
    fs::write(
        &bad,
        fs::read_to_string(dir.path().join("run.cfg"))
            .unwrap()
            .replace("alpha = 0.9", "alpha = 1.2"),
    )
    .unwrap();
    let out = cli()
        .args(["schedule", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config:"));

    write(
        dir.path(),
        "prices.csv",
        "hour,c_da,c_rt,c_pv,c_s,g_dl,g_pv_forecast\n1,0.5,0.3,0.03,0.02,100,0\n",
    );
    let out = cli()
        .args([
            "schedule",
            "--config",
            dir.path().join("run.cfg").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("ingest:"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = cli()
        .args(["opf", "--feeder", "/nonexistent.feeder", "--hour", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn config_errors_carry_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "a.cfg",
        "[data]\nfeeder = missing.feeder\nprices = p.csv\nhistory = h.csv\n",
    );
    assert_eq!(
        RunConfig::load(&dir.path().join("a.cfg"))
            .unwrap_err()
            .stage,
        Stage::Config
    );
}
