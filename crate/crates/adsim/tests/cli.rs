//! End-to-end tests of the `adsim` binary: exit codes, output formats,
//! and hand-checked oracle values for each subcommand.

use std::fs;
use std::process::Command;

use adsim::harness::{read_sweep_csv, FRONTIER_HEADER, SWEEP_HEADER};

fn adsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adsim"))
}

/// Runs the command and returns `(exit_code, stdout, stderr)`.
fn run(cmd: &mut Command) -> (i32, String, String) {
    let out = cmd.output().expect("failed to spawn adsim");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn help_exits_zero_and_lists_the_subcommands() {
    let (code, stdout, _) = run(adsim().arg("--help"));
    assert_eq!(code, 0);
    for verb in ["sweep", "frontier", "adcap", "sne-search", "replay", "counterexample"] {
        assert!(stdout.contains(verb), "--help output is missing '{verb}'");
    }
}

#[test]
fn unknown_rule_is_a_usage_error() {
    let (code, _, stderr) =
        run(adsim().args(["sweep", "--scenario", "uniform8x3", "--rule", "bogus"]));
    assert_eq!(code, 1);
    assert!(stderr.contains("unknown rule 'bogus'"), "stderr: {stderr}");
}

#[test]
fn missing_scenario_file_is_a_data_error() {
    let (code, _, stderr) =
        run(adsim().args(["sweep", "--scenario", "/nonexistent/path/scenario.json"]));
    assert_eq!(code, 2);
    assert!(stderr.contains("cannot read scenario"), "stderr: {stderr}");
}

#[test]
fn malformed_scenario_json_names_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"name":"x","bidders":[],"slots":[1.0],"bogus":3}"#).unwrap();
    let (code, _, stderr) =
        run(adsim().args(["sweep", "--scenario", path.to_str().unwrap()]));
    assert_eq!(code, 2);
    assert!(stderr.contains("unknown field `bogus`"), "stderr: {stderr}");
}

#[test]
fn sweep_emits_one_parseable_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let (code, _, stderr) = run(adsim().args([
        "sweep",
        "--scenario",
        "uniform8x3",
        "--rule",
        "standard",
        "--grid",
        "0,0.1,0.2",
        "--samples",
        "500",
        "--seed",
        "9",
        "--threads",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0, "stderr: {stderr}");
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), SWEEP_HEADER.join(","));
    let rows = read_sweep_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 3);
    let rs: Vec<f64> = rows.iter().map(|r| r.r).collect();
    assert_eq!(rs, vec![0.0, 0.1, 0.2]);
    for row in &rows {
        assert_eq!(row.rule, "standard");
        assert_eq!(row.seed, 9);
        assert_eq!(row.metrics.samples, 500);
        assert!(row.error.is_empty(), "row error: {}", row.error);
        assert!(row.metrics.impressions > 0.0);
    }
}

#[test]
fn frontier_emits_the_alpha_grid_with_complementary_beta() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("frontier.csv");
    let (code, _, stderr) = run(adsim().args([
        "frontier",
        "--scenario",
        "uniform8x3",
        "--grid",
        "0,0.5,1",
        "--samples",
        "500",
        "--threads",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0, "stderr: {stderr}");
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), FRONTIER_HEADER.join(","));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse::<f64>().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for (row, expect_alpha) in rows.iter().zip([0.0, 0.5, 1.0]) {
        assert_eq!(row[0], expect_alpha);
        assert_eq!(row[1], 1.0 - expect_alpha);
    }
}

#[test]
fn replay_reproduces_hand_computed_gsp_prices() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    // One auction, one slot, unit weights: the winner (bid 4) pays the
    // runner-up bid 2.5 at reserve 0, and pays the reserve 3 once it is the
    // only eligible bidder.
    fs::write(&log, "auction_id,bidder_id,bid,weight\na1,x,4,1\na1,y,2.5,1\n").unwrap();
    let (code, stdout, stderr) = run(adsim().args([
        "replay",
        log.to_str().unwrap(),
        "--slots",
        "1.0",
        "--grid",
        "0,3",
    ]));
    assert_eq!(code, 0, "stderr: {stderr}");
    let rows: Vec<Vec<&str>> =
        stdout.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row[0], "standard");
        assert_eq!(row[3], "1"); // auctions
        assert_eq!(row[4], "0"); // skipped
        assert_eq!(row[5].parse::<f64>().unwrap(), 1.0); // impressions
    }
    assert_eq!(rows[0][7].parse::<f64>().unwrap(), 2.5);
    assert_eq!(rows[1][7].parse::<f64>().unwrap(), 3.0);
}

#[test]
fn replay_without_a_slot_source_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    fs::write(&log, "auction_id,bidder_id,bid,weight\na1,x,4,1\n").unwrap();
    let (code, _, stderr) = run(adsim().args(["replay", log.to_str().unwrap()]));
    assert_eq!(code, 1);
    assert!(stderr.contains("--slots or --scenario"), "stderr: {stderr}");
}

#[test]
fn adcap_solves_a_binding_cap_and_rejects_a_zero_cap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("adcap.json");
    fs::write(
        &cfg,
        r#"{"bidders":[{"value":{"dist":"uniform","lo":0,"hi":1}}],
            "terms":[{"volume":1,"slot_effect":1}],
            "weights":{"alpha":1,"beta":0,"gamma":0},
            "theta":0.2}"#,
    )
    .unwrap();
    let (code, stdout, stderr) = run(adsim().args([
        "adcap",
        cfg.to_str().unwrap(),
        "--samples",
        "2000",
        "--threads",
        "1",
    ]));
    assert_eq!(code, 0, "stderr: {stderr}");
    let sol: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(sol["lambda"].as_f64().unwrap() > 0.0);
    assert_eq!(sol["binding"], serde_json::Value::Bool(true));
    assert!(sol["expected_impressions"].as_f64().unwrap() <= 0.2 + 1e-9);
    assert!(sol["slack"].as_f64().unwrap() >= -1e-9);
    assert_eq!(sol["thresholds"].as_array().unwrap().len(), 1);

    // --theta overrides the file value; zero is rejected as unusable data.
    let (code, _, stderr) =
        run(adsim().args(["adcap", cfg.to_str().unwrap(), "--theta", "0"]));
    assert_eq!(code, 2);
    assert!(stderr.contains("theta must be strictly positive"), "stderr: {stderr}");
}

#[test]
fn counterexample_reproduces_and_exports_a_loadable_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let scenario = dir.path().join("scenario.json");
    let (code, stdout, stderr) = run(adsim().args([
        "counterexample",
        "non-implementation",
        "--out",
        report.to_str().unwrap(),
        "--export-scenario",
        scenario.to_str().unwrap(),
    ]));
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stdout.contains("non-implementation: reproduced"), "stdout: {stdout}");

    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["reproduced"], serde_json::Value::Bool(true));

    // The exported scenario must load and sweep like any other config.
    let (code, stdout, stderr) = run(adsim().args([
        "sweep",
        "--scenario",
        scenario.to_str().unwrap(),
        "--rule",
        "standard",
        "--grid",
        "0",
        "--samples",
        "200",
        "--threads",
        "1",
    ]));
    assert_eq!(code, 0, "stderr: {stderr}");
    assert_eq!(stdout.lines().count(), 2, "header plus one grid point");
}

#[test]
fn bogus_counterexample_name_is_a_usage_error() {
    let (code, _, stderr) = run(adsim().args(["counterexample", "bogus"]));
    assert_eq!(code, 1);
    assert!(stderr.contains("unknown counterexample 'bogus'"), "stderr: {stderr}");
}

#[test]
fn a_claim_that_fails_to_reproduce_exits_three() {
    // The welfare-gap family needs a larger instance at this perturbation;
    // the size-4 instance genuinely ties (ratio 1.0), so the re-check must
    // report failure through exit code 3.
    let (code, stdout, stderr) = run(adsim().args([
        "counterexample",
        "tc-unoptimal",
        "--m",
        "4",
        "--eps",
        "5e-4",
    ]));
    assert_eq!(code, 3, "stdout: {stdout}\nstderr: {stderr}");
    assert!(stdout.contains("NOT reproduced"), "stdout: {stdout}");
    assert!(stderr.contains("claim not reproduced"), "stderr: {stderr}");
}

#[test]
fn sne_search_finds_and_verifies_a_grid_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("templates.json");
    fs::write(
        &scenario,
        r#"{
          "name": "tiny-templates",
          "bidders": [
            {"value": {"dist": "point", "value": 3.0}, "class": 0},
            {"value": {"dist": "point", "value": 2.0}, "class": 0},
            {"value": {"dist": "point", "value": 1.0}, "class": 1}
          ],
          "slots": [1.0],
          "templates": [[[1.0, 0.5], []], [[0.8], [1.0]]]
        }"#,
    )
    .unwrap();
    let (code, stdout, stderr) = run(adsim().args([
        "sne-search",
        "--scenario",
        scenario.to_str().unwrap(),
        "--grid",
        "9",
        "--threads",
        "1",
    ]));
    assert_eq!(code, 0, "stderr: {stderr}");
    let rep: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(rep["found"], serde_json::Value::Bool(true));
    assert_eq!(rep["verified"], serde_json::Value::Bool(true));
    assert_eq!(rep["resolution"], serde_json::json!(9));
    assert_eq!(rep["bids"], serde_json::json!([1.5, 1.5, 0.0]));
    assert_eq!(rep["classes"], serde_json::json!([0, 0, 1]));
}
