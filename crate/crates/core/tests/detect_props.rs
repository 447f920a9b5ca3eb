// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use proptest::prelude::*;

use prosim_core::detect::{
    characterize, detect_anomalies, drop_ratio, locate_fault, DetectorConfig, DropRatioMatrix, IntervalReadings,
    ProReadings,
};
use prosim_core::floorplan::ChipFloorplan;
use prosim_core::pro::{CounterReading, ProDesign};

fn reading(c_pro: u64) -> CounterReading {
    CounterReading::new(c_pro, 2400, 24e6)
}

fn matrix() -> impl Strategy<Value = DropRatioMatrix> {
    prop::collection::vec(0.0f64..0.5, 36).prop_map(|v| DropRatioMatrix { ratios: v.into_iter().enumerate().collect() })
}

/// Welford's streaming mean and sample variance.
fn streaming(xs: &[f64]) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for &x in xs {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    (mean, if n > 1.0 { (m2 / (n - 1.0)).sqrt() } else { 0.0 })
}

proptest! {
    #[test]
    fn drop_ratio_identity(f_off in 1e6f64..2e8, r in 0.0f64..0.9) {
        prop_assert_eq!(drop_ratio(f_off, f_off).unwrap(), 0.0);
        prop_assert!((drop_ratio(f_off, f_off * (1.0 - r)).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn localization_is_scale_invariant(m in matrix(), k in 0.01f64..100.0) {
        let fp = ChipFloorplan::reference();
        let a = locate_fault(&m, &fp).unwrap();
        let b = locate_fault(&m.scaled(k), &fp).unwrap();
        prop_assert_eq!(a.inferred_row, b.inferred_row);
        prop_assert_eq!(a.inferred_region, b.inferred_region);
    }

    #[test]
    fn baseline_matches_streaming_statistics(counts in prop::collection::vec(2_900_000u64..3_000_000, 2..200)) {
        let readings: Vec<CounterReading> = counts.iter().map(|&c| reading(c)).collect();
        let p = characterize(&[ProReadings { pro_id: 3, readings }], DetectorConfig::default()).unwrap();
        let hz: Vec<f64> = counts.iter().map(|&c| c as f64 / 2400.0 * 24e6).collect();
        let (mean, sigma) = streaming(&hz);
        let s = p.stats[&3];
        prop_assert!((s.mean - mean).abs() <= 1e-9 * mean);
        prop_assert!((s.sigma - sigma).abs() <= 1e-6 * sigma.max(1.0));
    }

    /// Raising alarm_k can only remove events.
    #[test]
    fn larger_alarm_k_flags_a_subset(
        base in prop::collection::vec(2_950_000u64..2_960_000, 20),
        probe in prop::collection::vec(2_900_000u64..3_010_000, 12),
        k1 in 0.5f64..8.0,
        dk in 0.0f64..8.0,
    ) {
        let design = ProDesign::reference();
        let baseline = ProReadings { pro_id: 0, readings: base.iter().map(|&c| reading(c)).collect() };
        let intervals: Vec<IntervalReadings> = probe
            .iter()
            .enumerate()
            .map(|(i, &c)| IntervalReadings { interval_index: i, readings: vec![(0, reading(c))] })
            .collect();
        let events = |k: f64| -> BTreeSet<usize> {
            let cfg = DetectorConfig { alarm_k: k, sigma_floor_fraction: 5e-4 };
            let p = characterize(std::slice::from_ref(&baseline), cfg).unwrap();
            detect_anomalies(&intervals, &p, &design).unwrap().iter().map(|e| e.interval_index).collect()
        };
        prop_assert!(events(k1 + dk).is_subset(&events(k1)));
    }
}
