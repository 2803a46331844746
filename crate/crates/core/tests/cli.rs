use std::path::Path;
use std::process::{Command, Output};

use delegation::config::ExperimentConfig;
use delegation::sweep::CSV_HEADER;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_delegation"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("config.toml");
    let text = format!(
        "map = \"builtin:open5\"\ncompositions = [\"1N-2N\", \"1H-3N\"]\nseeds = [0, 1]\neval_episodes = 100\n{extra}\n[agent]\nepisodes = 3000\n[manager]\nepisodes = 3000\n"
    );
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["default.toml", "quick.toml"] {
        let config = ExperimentConfig::load(&dir.join(name)).unwrap();
        config.load_map().unwrap();
    }
    let default = ExperimentConfig::load(&dir.join("default.toml")).unwrap();
    assert_eq!(default.compositions.len(), 48);
}

#[test]
fn sweep_writes_the_csv_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let o = run(&["--config", &config, "sweep", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 2 * 2 * 2);
    for row in &rows {
        assert_eq!(row.len(), 12);
        assert!(["trained", "random"].contains(&row[3]));
        let util: f64 = row[8].parse::<f64>().unwrap() + row[9].parse::<f64>().unwrap();
        assert!((util - 1.0).abs() < 1e-9);
        for i in [6, 7] {
            let rate: f64 = row[i].parse().unwrap();
            assert!((0.0..=1.0).contains(&rate));
        }
    }
    for name in [
        "results.json",
        "summary.json",
        "comparison.json",
        "metadata.json",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn agents_manager_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let agents = tmp.path().join("agents");
    let table = tmp.path().join("manager.json");
    let team = ["--composition", "1L-2N", "--regime", "7-4-1", "--seed", "2"];

    let o = run(&[
        &["--config", &config, "train-agents"],
        &team[..],
        &["--out", agents.to_str().unwrap()],
    ]
    .concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(agents.join("agent_0.json").exists() && agents.join("agent_1.json").exists());

    let with_agents = ["--agents", agents.to_str().unwrap()];
    let o = run(&[
        &["--config", &config, "train-manager"],
        &team[..],
        &with_agents,
        &["--out", table.to_str().unwrap()],
    ]
    .concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = run(&[
        &["--config", &config, "evaluate"],
        &team[..],
        &with_agents,
        &["--manager", table.to_str().unwrap()],
    ]
    .concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["trained"]["episodes"], 100);
    let trained = report["trained"]["mean_reward"].as_f64().unwrap();
    let random = report["random"]["mean_reward"].as_f64().unwrap();
    assert!(trained > random, "{trained} vs {random}");

    // Agents saved under one label cannot be loaded as another.
    let o = run(&[
        "--config",
        &config,
        "evaluate",
        "--composition",
        "1H-2N",
        "--agents",
        agents.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "mapp = \"builtin:open5\"\n").unwrap();
    let o = run(&["--config", bad.to_str().unwrap(), "sweep"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mapp"));

    let config = write_config(tmp.path(), "");
    let o = run(&["--config", &config, "evaluate", "--composition", "9Z-1N"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["--config", &config, "sweep", "--seeds", "1,1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "--config",
        tmp.path().join("missing.toml").to_str().unwrap(),
        "sweep",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn oracle_check_reports_and_gates() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let out = tmp.path().join("ok");
    let o = run(&[
        "--config",
        &config,
        "oracle-check",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("oracle_report.json")).unwrap())
            .unwrap();
    assert!(!report["convergence"]["trace"]
        .as_array()
        .unwrap()
        .is_empty());
    assert_eq!(report["fixed_points"].as_array().unwrap().len(), 4);

    // A learner with too few episodes cannot meet the convergence threshold.
    let strict = write_config(
        tmp.path(),
        "[oracle.convergence]\nmax_error = 1e-6\n[oracle.convergence.learner]\nepisodes = 50",
    );
    let out = tmp.path().join("strict");
    let o = run(&[
        "--config",
        &strict,
        "oracle-check",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL convergence"));
    assert!(out.join("oracle_report.json").exists());
}
