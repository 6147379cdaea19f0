//! Command-line contract: exit codes, output files, determinism.

mod common;

use common::{demo_config, run, write_demo_data};

fn setup(seed: u64) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let (equity, bond) = write_demo_data(dir.path());
    let config_path = dir.path().join("run.json");
    std::fs::write(&config_path, demo_config(dir.path(), &equity, &bond, seed)).unwrap();
    (dir, config_path)
}

#[test]
fn label_happy_path_writes_outputs() {
    let (dir, config) = setup(1);
    let before: std::collections::BTreeSet<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    let output = run("label", &config);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(dir.path().join("out/labels.csv").exists());
    assert!(dir.path().join("out/episodes.csv").exists());
    // Nothing appears outside the configured output directory.
    let after: std::collections::BTreeSet<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    let new_entries: Vec<_> = after.difference(&before).collect();
    assert_eq!(new_entries, vec![&std::ffi::OsString::from("out")]);
    // stdout is a single JSON status line.
    let stdout = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1);
    let status: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(status["status"], "ok");
    assert_eq!(status["command"], "label");
}

#[test]
fn missing_data_file_exits_one_with_path() {
    let (dir, _) = setup(1);
    let config_path = dir.path().join("missing.json");
    let bond = dir.path().join("bond.csv");
    let ghost = dir.path().join("nonexistent.csv");
    std::fs::write(
        &config_path,
        demo_config(dir.path(), &ghost, &bond, 1),
    )
    .unwrap();
    let output = run("label", &config_path);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("nonexistent.csv"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_two_naming_it() {
    let (dir, config) = setup(1);
    let text = std::fs::read_to_string(&config).unwrap();
    let broken = text.replacen("\"seed\"", "\"sead\"", 1);
    let broken_path = dir.path().join("broken.json");
    std::fs::write(&broken_path, broken).unwrap();
    let output = run("label", &broken_path);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("sead"), "stderr: {stderr}");
}

#[test]
fn train_twice_is_byte_identical() {
    let (dir, config) = setup(7);
    let output = run("train", &config);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let first = std::fs::read(dir.path().join("out/model.json")).unwrap();
    let output = run("train", &config);
    assert!(output.status.success());
    let second = std::fs::read(dir.path().join("out/model.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn divergent_learning_rate_exits_one() {
    let (dir, config) = setup(1);
    let text = std::fs::read_to_string(&config).unwrap();
    let broken = text.replace("\"learning_rate\": 0.1", "\"learning_rate\": 1e9");
    let broken_path = dir.path().join("diverge.json");
    std::fs::write(&broken_path, broken).unwrap();
    let output = run("train", &broken_path);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("diverged"), "stderr: {stderr}");
}

#[test]
fn classification_with_mse_loss_exits_two() {
    let (dir, config) = setup(1);
    let text = std::fs::read_to_string(&config).unwrap();
    let broken = text.replace("\"loss\": \"cross_entropy\"", "\"loss\": \"mse\"");
    let broken_path = dir.path().join("mismatch.json");
    std::fs::write(&broken_path, broken).unwrap();
    let output = run("train", &broken_path);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn tune_grid_over_three_binary_axes_gives_eight_rows() {
    let (dir, config) = setup(3);
    let text = std::fs::read_to_string(&config).unwrap();
    let grid_search = r#""strategy": "grid",
    "metric": "accuracy",
    "dimensions": [
      {"discrete": {"name": "learning_rate", "values": [0.05, 0.1]}},
      {"discrete": {"name": "batch_size", "values": [8, 16]}},
      {"discrete": {"name": "lambda", "values": [0.0, 0.001]}}
    ]"#;
    let start = text.find("\"search\"").unwrap();
    let open = text[start..].find('{').unwrap() + start;
    let mut depth = 0usize;
    let mut end = open;
    for (i, ch) in text[open..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    end = open + i;
                    break;
                }
            }
            _ => {}
        }
    }
    let replaced = format!(
        "{}{{\n    {}\n  }}{}",
        &text[..open],
        grid_search,
        &text[end + 1..]
    );
    let grid_path = dir.path().join("grid.json");
    std::fs::write(&grid_path, replaced).unwrap();
    let output = run("tune", &grid_path);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let trials = std::fs::read_to_string(dir.path().join("out/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 9); // header + 2^3 trials
}

#[test]
fn tune_random_budget_rows_and_rerun_identical() {
    let (dir, config) = setup(11);
    let output = run("tune", &config);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let first = std::fs::read(dir.path().join("out/trials.csv")).unwrap();
    assert_eq!(
        String::from_utf8(first.clone()).unwrap().lines().count(),
        4 // header + budget 3
    );
    let output = run("tune", &config);
    assert!(output.status.success());
    let second = std::fs::read(dir.path().join("out/trials.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn backtest_report_has_expected_shape() {
    let (dir, config) = setup(5);
    let output = run("backtest", &config);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["equity_curve"][0], 1.0);
    for column in ["portfolio_metrics", "benchmark_metrics"] {
        for field in [
            "cumulative_return",
            "annualized_return",
            "daily_stddev",
            "annualized_volatility",
            "max_drawdown",
            "sharpe",
            "sortino",
        ] {
            assert!(
                report[column].get(field).is_some(),
                "{column}.{field} missing"
            );
        }
    }
    assert!(dir.path().join("out/plot.csv").exists());
}

#[test]
fn gru_with_window_and_pca_trains_and_backtests() {
    let (dir, config) = setup(13);
    let text = std::fs::read_to_string(&config).unwrap();
    let text = text
        .replace(
            r#""preprocess": {"pct_change_horizon": 1, "scaler": "zscore"}"#,
            r#""preprocess": {"pct_change_horizon": 1, "scaler": "zscore", "pca_components": 2, "window": 4}"#,
        )
        .replace(
            r#""model": {"architecture": "logistic"}"#,
            r#""model": {"architecture": {"gru": {"hidden_size": 3}}}"#,
        )
        .replace("\"max_epochs\": 25", "\"max_epochs\": 8");
    let gru_path = dir.path().join("gru.json");
    std::fs::write(&gru_path, text).unwrap();

    let output = run("train", &gru_path);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let model = std::fs::read_to_string(dir.path().join("out/model.json")).unwrap();
    assert!(model.contains("\"gru\""));
    let preprocess = std::fs::read_to_string(dir.path().join("out/preprocess.json")).unwrap();
    assert!(preprocess.contains("explained_variance"));

    let output = run("backtest", &gru_path);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["equity_curve"][0], 1.0);
}
