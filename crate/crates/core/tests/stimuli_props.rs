// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;

use prosim_core::pdn::{GridSpec, Node};
use prosim_core::scenario::Scenario;
use prosim_core::sim::sweep_voltage;
use prosim_core::stimuli::EmPulse;

fn pulse(row: usize, col: usize, radius: f64, amplitude: f64, threshold: f64) -> EmPulse {
    EmPulse {
        center: Node::new(row, col),
        radius,
        amplitude,
        t_start: 0.0,
        t_width: 1e-6,
        corrupt_threshold: threshold,
        rebound_fraction: 0.3,
        rebound_duration: None,
    }
}

proptest! {
    /// Footprint and upset sets against a direct scan of every node.
    #[test]
    fn footprint_matches_enumeration(
        rows in 1usize..10, cols in 1usize..10, r in 0usize..10, c in 0usize..10,
        radius in 0.0f64..4.0, amplitude in 0.1f64..20.0, threshold in 0.1f64..20.0,
    ) {
        let g = GridSpec::with_defaults(rows, cols);
        let p = pulse(r % rows, c % cols, radius, amplitude, threshold);
        let mut inside = Vec::new();
        let mut upset = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                let d = ((i as f64 - p.center.row as f64).powi(2) + (j as f64 - p.center.col as f64).powi(2)).sqrt();
                let w = if radius == 0.0 { f64::from(d == 0.0) } else { (1.0 - d / radius).max(0.0) };
                if w > 0.0 {
                    inside.push(Node::new(i, j));
                }
                if amplitude * w > threshold {
                    upset.push(Node::new(i, j));
                }
            }
        }
        let got: Vec<Node> = p.footprint(&g).into_iter().map(|(n, _)| n).collect();
        prop_assert_eq!(got, inside);
        let got: Vec<Node> = g.nodes().filter(|&n| p.corrupts(n)).collect();
        prop_assert_eq!(got, upset);
        prop_assert!((p.peak_currents(&g).total() - p.footprint(&g).iter().map(|(_, w)| amplitude * w).sum::<f64>()).abs() < 1e-9);
    }
}

fn quiet_scenario() -> Scenario {
    Scenario::from_toml(
        "[grid]\nrows = 9\ncols = 4\n[measurement]\nrepetitions = 50\njitter = 0.0\nsupply_noise = 0.0\n\
         [pro_design]\nvariation_sigma = 0.0\n",
    )
    .unwrap()
}

#[test]
fn sweep_at_nominal_reads_nominal_frequencies() {
    let mut s = quiet_scenario();
    s.file.stimuli.supply_sweep.voltages = vec![1.33];
    let ids = [0u64, 5, 21, 63];
    let rows = sweep_voltage(&s, &ids, 1).unwrap();
    let quantum = 1.0 / s.plan().gated_window();
    for (row, id) in rows.iter().zip(ids) {
        let f = s.design.nominal_frequency(&prosim_core::SelConfig::from_id(id, 6)).unwrap();
        assert!((row.mean_frequency - f).abs() <= quantum, "{id}: {} vs {f}", row.mean_frequency);
    }
}

/// Faster configurations lose more hertz per volt.
#[test]
fn sweep_slope_orders_by_nominal_frequency() {
    let s = quiet_scenario();
    let ids = [63u64, 21, 5, 0];
    let rows = sweep_voltage(&s, &ids, 1).unwrap();
    let slope = |id: u64| {
        let pts: Vec<(f64, f64)> =
            rows.iter().filter(|r| r.sel_config_id == id).map(|r| (r.supply_voltage, r.mean_frequency)).collect();
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        (first.1 - last.1) / (first.0 - last.0)
    };
    let slopes: Vec<f64> = ids.iter().map(|&id| slope(id)).collect();
    assert!(slopes.windows(2).all(|w| w[0] < w[1]), "{slopes:?}");
    assert!(slopes[0] > 0.0);
}
