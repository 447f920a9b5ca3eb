// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;

use proptest::prelude::*;

use prosim_core::pdn::Node;
use prosim_core::pro::{
    count_over_interval, frequency_from_counters, instantaneous_frequency, MeasurementPlan, ProDesign, ProInstance,
    SelConfig, VoltageSample,
};
use prosim_core::stimuli::{pro_self_current, HidingSchedule};

fn instance(variation: f64) -> ProInstance {
    ProInstance::new(Arc::new(ProDesign::reference()), Node::new(0, 0), variation, 0).unwrap()
}

fn freq(inst: &ProInstance, id: u64, v: f64) -> f64 {
    instantaneous_frequency(inst, &SelConfig::from_id(id, 6), v).unwrap()
}

proptest! {
    #[test]
    fn frequency_rises_with_voltage(id in 0u64..64, var in 0.9f64..1.1, v in 0.6f64..1.4, dv in 1e-3f64..0.3) {
        let inst = instance(var);
        prop_assert!(freq(&inst, id, v + dv) > freq(&inst, id, v));
    }

    /// More active inverters: strictly slower, whatever the voltage.
    #[test]
    fn frequency_falls_with_inverters(a in 0u64..64, b in 0u64..64, v in 0.6f64..1.4) {
        let d = ProDesign::reference();
        let (na, nb) = (d.active_inverters(&SelConfig::from_id(a, 6)), d.active_inverters(&SelConfig::from_id(b, 6)));
        let inst = instance(1.0);
        let (fa, fb) = (freq(&inst, a, v), freq(&inst, b, v));
        if na < nb {
            prop_assert!(fa > fb);
        } else if na == nb {
            prop_assert!((fa / fb - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn counter_matches_integrated_cycles(id in 0u64..64, var in 0.9f64..1.1, v in 0.7f64..1.4, dur in 1e-6f64..2e-3) {
        let inst = instance(var);
        let sel = SelConfig::from_id(id, 6);
        let f = instantaneous_frequency(&inst, &sel, v).unwrap();
        let plan = MeasurementPlan::new(dur, 1, 0);
        let r = count_over_interval(&inst, &sel, &[VoltageSample { t: 0.0, v }], &plan).unwrap();
        let exact = f * plan.gated_window();
        prop_assert!(r.c_pro as f64 <= exact + 1e-6 && exact - (r.c_pro as f64) < 1.0);
        prop_assert_eq!(r.c_clk, (dur * 24e6 + 1e-9).floor() as u64);
        let hz = frequency_from_counters(&r).unwrap().hz;
        prop_assert!((hz - f).abs() * plan.gated_window() < 1.0);
    }

    /// A two-level trace counts the time-weighted sum of both frequencies.
    #[test]
    fn piecewise_trace_integrates(v1 in 0.7f64..1.4, v2 in 0.7f64..1.4, split in 0.05f64..0.95) {
        let inst = instance(1.0);
        let sel = SelConfig::all_short(6);
        let plan = MeasurementPlan::new(100e-6, 1, 0);
        let w = plan.gated_window();
        let trace = [VoltageSample { t: 0.0, v: v1 }, VoltageSample { t: split * w, v: v2 }];
        let r = count_over_interval(&inst, &sel, &trace, &plan).unwrap();
        let f1 = instantaneous_frequency(&inst, &sel, v1).unwrap();
        let f2 = instantaneous_frequency(&inst, &sel, v2).unwrap();
        let exact = f1 * split * w + f2 * (1.0 - split) * w;
        prop_assert!((r.c_pro as f64 - exact).abs() <= 1.0);
    }
}

/// Self current scales as (active inverters x frequency): the longest chain
/// draws 57 * 22 / 123.44 of the shortest's.
#[test]
fn self_current_ratio_long_vs_short() {
    let inst = instance(1.0);
    let s = HidingSchedule { interval: 2e-3, seed: 0, drive_io: true, io_gain: 20.0 };
    let long = pro_self_current(&inst, &SelConfig::all_delay(6), 1.33, &s);
    let short = pro_self_current(&inst, &SelConfig::all_short(6), 1.33, &s);
    let want = 57.0 * 22e6 / 123.44e6;
    assert!((long / short / want - 1.0).abs() < 1e-9, "{}", long / short);
    let quiet = HidingSchedule { drive_io: false, ..s };
    assert!((pro_self_current(&inst, &SelConfig::all_short(6), 1.33, &quiet) * 20.0 / short - 1.0).abs() < 1e-12);
}
