//! End-to-end tests of the command-line interface: exit codes, output
//! shapes, and byte-level determinism.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cvaropt"))
}

/// Synthetic monthly percent-format CSV: `months` rows from 1979-01.
fn monthly_csv(months: usize, assets: usize) -> String {
    let mut out = String::from("Date");
    for i in 0..assets {
        out.push_str(&format!(",S{i}"));
    }
    out.push('\n');
    let mut year = 1979;
    let mut month = 1;
    for t in 0..months {
        out.push_str(&format!("{year:04}{month:02}"));
        for i in 0..assets {
            // Deterministic pseudo-returns in percent, alternating structure.
            let v = 0.8 * (((t * 7 + i * 3) % 13) as f64 - 6.0) / 6.0 + 0.4;
            out.push_str(&format!(",{v:.4}"));
        }
        out.push('\n');
        month += 1;
        if month > 12 {
            month = 1;
            year += 1;
        }
    }
    out
}

/// Synthetic daily percent-format CSV covering `days` calendar days.
fn daily_csv(days: usize, assets: usize, start: chrono::NaiveDate) -> String {
    use chrono::Datelike;
    let mut out = String::from("Date");
    for i in 0..assets {
        out.push_str(&format!(",S{i}"));
    }
    out.push('\n');
    for t in 0..days {
        let d = start + chrono::Days::new(t as u64);
        out.push_str(&format!("{:04}{:02}{:02}", d.year(), d.month(), d.day()));
        for i in 0..assets {
            let v = 0.25 * (((t * 5 + i * 11) % 17) as f64 - 8.0) / 8.0 + 0.03;
            out.push_str(&format!(",{v:.4}"));
        }
        out.push('\n');
    }
    out
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("eval.csv"),
            monthly_csv(30, 3),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("est.csv"),
            daily_csv(950, 3, chrono::NaiveDate::from_ymd_opt(1979, 1, 1).unwrap()),
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_config(&self, name: &str, body: serde_json::Value) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, serde_json::to_string_pretty(&body).unwrap()).unwrap();
        p
    }

    fn base_config(&self) -> serde_json::Value {
        serde_json::json!({
            "data": {
                "estimation_panel": self.path("est.csv"),
                "evaluation_panel": self.path("eval.csv"),
                "layout": "percent",
                "missing": "error"
            },
            "strategies": [
                {"name": "EW"},
                {"name": "mean-CVaR", "beta": 0.9}
            ],
            "backtest": {
                "start": "1980-06-01",
                "end": "1981-06-01",
                "estimation_span": {"days": 360},
                "on_solver_failure": "abort"
            },
            "optimize": {
                "as_of": "1980-05-31",
                "estimation_span": {"days": 360}
            },
            "output_dir": self.path("out"),
            "seed": 42
        })
    }
}

#[test]
fn validate_data_summarizes_and_exits_zero() {
    let fx = Fixture::new();
    let cfg = fx.write_config("cfg.json", fx.base_config());
    let out = bin()
        .args(["validate-data", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("estimation: 950 rows x 3 assets"));
    assert!(text.contains("evaluation: 30 rows x 3 assets"));
    assert!(text.contains("sha256"));
}

#[test]
fn validate_data_exits_four_on_bad_panel() {
    let fx = Fixture::new();
    std::fs::write(fx.path("eval.csv"), "Date,A\n198101,abc\n").unwrap();
    let cfg = fx.write_config("cfg.json", fx.base_config());
    let out = bin()
        .args(["validate-data", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn missing_panel_is_validation_error_before_compute() {
    let fx = Fixture::new();
    let mut body = fx.base_config();
    body["data"]["evaluation_panel"] = serde_json::json!(fx.path("nope.csv"));
    let cfg = fx.write_config("cfg.json", body);
    let out = bin()
        .args(["backtest", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn backtest_writes_metrics_and_is_deterministic() {
    let fx = Fixture::new();
    let cfg = fx.write_config("cfg.json", fx.base_config());
    let run = || {
        let out = bin().args(["backtest", "--config"]).arg(&cfg).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(fx.path("out/backtest-metrics.csv")).unwrap()
    };
    let first = run();
    let second = run();
    assert_eq!(first, second, "repeated runs must be byte-identical");
    let text = String::from_utf8(first).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "strategy,TO,AR,RISK,R/R,MaxDD,CR");
    assert!(lines.next().unwrap().starts_with("EW,"));
    assert!(lines.next().unwrap().starts_with("mean-CVaR-0.9,"));
    // Full reports with provenance exist per strategy.
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fx.path("out/backtest-EW.json")).unwrap(),
    )
    .unwrap();
    assert!(report["provenance"]["inputs"][0]["sha256"].is_string());
    assert!(report["report"]["metrics"]["annualized_return"].is_number());
}

#[test]
fn optimize_writes_weights_summing_to_one() {
    let fx = Fixture::new();
    let cfg = fx.write_config("cfg.json", fx.base_config());
    let out = bin().args(["optimize", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // EW output has no solver section.
    let ew: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fx.path("out/optimize-EW.json")).unwrap(),
    )
    .unwrap();
    assert!(ew["solver"].is_null());
    // mean-CVaR output: weights sum to one, solver status optimal, baseline
    // for its beta included.
    let mc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fx.path("out/optimize-mean-CVaR-0.9.json")).unwrap(),
    )
    .unwrap();
    let w: Vec<f64> = mc["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let sum: f64 = w.iter().sum();
    assert!((sum - 1.0).abs() < 1e-8, "sum {sum}");
    assert_eq!(mc["solver"]["status"], "optimal");
}

#[test]
fn optimize_trace_writes_jsonl() {
    let fx = Fixture::new();
    let cfg = fx.write_config("cfg.json", fx.base_config());
    let out = bin()
        .args(["optimize", "--trace", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let trace =
        std::fs::read_to_string(fx.path("out/optimize-mean-CVaR-0.9.trace.jsonl")).unwrap();
    assert!(trace.lines().count() > 3);
    for line in trace.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["mu"].is_number());
    }
}

#[test]
fn optimize_exits_three_on_solver_failure() {
    let fx = Fixture::new();
    let mut body = fx.base_config();
    body["solver"] = serde_json::json!({"max_iterations": 0});
    let cfg = fx.write_config("cfg.json", body);
    let out = bin().args(["optimize", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    // Status still recorded in the output file.
    let mc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fx.path("out/optimize-mean-CVaR-0.9.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(mc["solver"]["status"], "max_iter");
}

#[test]
fn theory_csv_deterministic_and_shaped() {
    let fx = Fixture::new();
    let mut body = fx.base_config();
    body["theory"] = serde_json::json!({
        "mu": [0.05, 0.0485, 0.047],
        "sigma": {"diagonal": [0.01, 0.01, 0.01]},
        "q_grid": [50, 200],
        "trials": 30,
        "variant": "simplex"
    });
    let cfg = fx.write_config("cfg.json", body);
    let run = || {
        let out = bin().args(["theory", "--config"]).arg(&cfg).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(fx.path("out/theory.csv")).unwrap()
    };
    let first = run();
    let second = run();
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("Q,excess,bound,trials_used,trials_dropped"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn theory_invalid_grid_is_validation_error() {
    let fx = Fixture::new();
    let mut body = fx.base_config();
    body["theory"] = serde_json::json!({
        "mu": [0.05, 0.04],
        "sigma": {"diagonal": [0.01, 0.01]},
        "q_grid": [200, 200],
        "trials": 5
    });
    let cfg = fx.write_config("cfg.json", body);
    let out = bin().args(["theory", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

