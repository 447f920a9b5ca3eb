// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::path::Path;

use prosim_core::pro::achievable_inverter_counts;
use prosim_core::scenario::Scenario;
use prosim_core::{ChipFloorplan, Error};

fn shipped(name: &str) -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)).unwrap()
}

#[test]
fn reference_reproduces_design_and_floorplan() {
    let s = shipped("reference.scenario");
    let cells: Vec<u32> = s.design.cells.iter().map(|c| c.n_inverters).collect();
    assert_eq!(cells, [4, 4, 8, 8, 16, 16]);
    assert_eq!(s.floorplan, ChipFloorplan::reference());
    assert_eq!(s.floorplan.len(), 36);
    let want: BTreeSet<u32> = (0..15).map(|k| 1 + 4 * k).collect();
    assert_eq!(achievable_inverter_counts(&s.design), want);
    // Explicit values equal the defaults, so the minimal file hashes the same.
    let minimal = Scenario::from_toml("[grid]\nrows = 9\ncols = 4\n").unwrap();
    assert_eq!(s.hash, minimal.hash);
}

#[test]
fn every_shipped_scenario_validates() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "scenario") {
            Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 7);
}

#[test]
fn em_scenarios_straddle_the_upset_threshold() {
    let shift = shipped("em-shift.scenario");
    let corrupt = shipped("em-corrupt.scenario");
    let g = &shift.grid;
    assert!(g.nodes().all(|n| !shift.em_pulses[0].corrupts(n)));
    assert_eq!(g.nodes().filter(|&n| corrupt.em_pulses[0].corrupts(n)).count(), 1);
}

#[test]
fn missing_file_is_input_error() {
    let e = Scenario::load(Path::new("/nonexistent/x.scenario")).unwrap_err();
    assert!(matches!(e, Error::Input(_)));
    assert_eq!(e.exit_code(), 2);
}
