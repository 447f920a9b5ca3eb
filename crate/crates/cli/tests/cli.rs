// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prosim_cli::RunManifest;
use prosim_core::scenario::Scenario;
use prosim_core::sim;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn prosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prosim")).args(args).env_remove("PRO_SIM_THREADS").output().unwrap()
}

fn run_in(dir: &Path, scenario_name: &str, args: &[&str]) -> Output {
    let sc = scenario(scenario_name);
    let mut all = vec!["--scenario", sc.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    all.extend_from_slice(args);
    prosim(&all)
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_prints_hash_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "reference.scenario", &["validate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let hash = Scenario::load(&scenario("reference.scenario")).unwrap().hash;
    assert!(text.contains(&format!("hash {hash}")), "{text}");
    assert!(text.contains("36 sensors"), "{text}");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    std::fs::write(&bad, "[grid]\nrows = 9\ncols = 4\nbogus = 1\n").unwrap();
    let o = prosim(&["validate", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let missing = dir.path().join("absent.scenario");
    assert_eq!(prosim(&["validate", "--scenario", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(prosim(&["validate"]).status.code(), Some(2));

    let o = run_in(dir.path(), "reference.scenario", &["sca", "--traces", "0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = run_in(dir.path(), "reference.scenario", &["sweep-voltage", "--configs", "64"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn invalid_thread_count_exits_2() {
    let sc = scenario("reference.scenario");
    for v in ["0", "many"] {
        let o = Command::new(env!("CARGO_BIN_EXE_prosim"))
            .args(["validate", "--scenario", sc.to_str().unwrap()])
            .env("PRO_SIM_THREADS", v)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(2), "{v}: {}", stderr(&o));
    }
}

#[test]
fn locate_fault_writes_csvs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "locate-rows1-2-left.scenario", &["locate-fault"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(dir.path());
    assert_eq!(m.command, "locate-fault");
    assert_eq!(m.outputs, ["drop_ratios.csv", "localization.csv"]);
    assert_eq!(m.scenario_hash, Scenario::load(&scenario("locate-rows1-2-left.scenario")).unwrap().hash);
    assert_eq!(m.tool_version, env!("CARGO_PKG_VERSION"));

    let (header, rows) = read_csv(&dir.path().join("drop_ratios.csv"));
    assert_eq!(header, ["pro_id", "row", "col", "f_off", "f_on", "drop_ratio"]);
    assert_eq!(rows.len(), 36);
    for r in &rows {
        let f_off: f64 = r[3].parse().unwrap();
        let f_on: f64 = r[4].parse().unwrap();
        let ratio: f64 = r[5].parse().unwrap();
        assert!((ratio - (f_off - f_on) / f_off).abs() < 1e-12, "{r:?}");
    }
    let (_, loc) = read_csv(&dir.path().join("localization.csv"));
    let summary = loc.iter().find(|r| r[0] == "inferred").unwrap();
    assert!(summary[3] == "1" || summary[3] == "2", "{summary:?}");
    assert_eq!(summary[4], "left");
}

/// Re-derives the sweep from the CSV alone: row count, per-config
/// monotonicity in voltage, and config 0 faster than config 63 everywhere.
#[test]
fn sweep_csv_matches_simulation_and_physics() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "reference.scenario", &["sweep-voltage", "--configs", "0,21,63", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(header, ["supply_voltage", "sel_config_id", "mean_frequency", "sigma"]);

    let mut by_config: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        by_config.entry(r[1].parse().unwrap()).or_default().push((r[0].parse().unwrap(), r[2].parse().unwrap()));
    }
    assert_eq!(by_config.keys().copied().collect::<Vec<_>>(), [0, 21, 63]);
    let n = by_config[&0].len();
    assert!(n >= 2);
    for points in by_config.values_mut() {
        assert_eq!(points.len(), n);
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(points.windows(2).all(|w| w[1].1 > w[0].1), "{points:?}");
    }
    for ((fast, mid), slow) in by_config[&0].iter().zip(&by_config[&21]).zip(&by_config[&63]) {
        assert!(fast.1 > mid.1 && mid.1 > slow.1);
    }

    let s = Scenario::load(&scenario("reference.scenario")).unwrap();
    let direct = sim::sweep_voltage(&s, &[0, 21, 63], 5).unwrap();
    assert_eq!(direct.len(), rows.len());
    for (d, r) in direct.iter().zip(&rows) {
        assert_eq!(d.supply_voltage, r[0].parse::<f64>().unwrap());
        assert_eq!(d.sel_config_id, r[1].parse::<u64>().unwrap());
        assert_eq!(d.mean_frequency, r[2].parse::<f64>().unwrap());
        assert_eq!(d.sigma, r[3].parse::<f64>().unwrap());
    }
    assert_eq!(manifest(dir.path()).seed, 5);
}

#[test]
fn detect_flags_corruption_on_upset_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "em-corrupt.scenario", &["detect"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("anomalies.csv"));
    assert_eq!(header, ["interval_index", "pro_id", "kind", "observed", "expected_low", "expected_high"]);
    assert!(rows.iter().any(|r| r[2] == "counter-corrupt"), "{rows:?}");

    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "em-shift.scenario", &["detect"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_csv(&dir.path().join("anomalies.csv"));
    assert!(rows.iter().any(|r| r[2] == "em-shift"), "{rows:?}");
    assert!(!rows.iter().any(|r| r[2] == "counter-corrupt"), "{rows:?}");
}

#[test]
fn configs_lists_fifteen_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "reference.scenario", &["configs"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 16, "{text}");
    let (_, rows) = read_csv(&dir.path().join("configs.csv"));
    let counts: Vec<u32> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(counts, (0..15).map(|k| 1 + 4 * k).collect::<Vec<_>>());
    let assignments: usize = rows.iter().map(|r| r[1].parse::<usize>().unwrap()).sum();
    assert_eq!(assignments, 64);
}

#[test]
fn sca_writes_traces_and_hiding_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "reference.scenario", &["sca", "--traces", "300"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(dir.path());
    for mode in ["pro-off", "pro-fixed", "pro-random"] {
        let name = format!("traces-{mode}.prot");
        assert!(m.outputs.contains(&name));
        let set = prosim_core::sca::traceio::read_traces(std::fs::File::open(dir.path().join(&name)).unwrap()).unwrap();
        assert_eq!(set.len(), 300);
    }
    let (header, rows) = read_csv(&dir.path().join("hiding.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r[col("tvla_traces")], "300");
        assert_eq!(r[col("seed")], m.seed.to_string());
    }
}
