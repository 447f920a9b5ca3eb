// SPDX-License-Identifier: Apache-2.0

//! Experiment orchestration on top of the grid, sensor and stimulus models.
//!
//! Measurement model for one counter reading: the sensor sees its local
//! supply plus a common supply-noise offset (one draw per reading, shared by
//! all sensors), and the integrated cycle count carries a relative Gaussian
//! jitter. Supply offsets come from the `pdn-noise` stream keyed by
//! measurement phase; jitter from `measurement-noise` keyed by phase and
//! sensor, so results do not depend on thread count or iteration order.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::detect::{
    characterize, detect_anomalies, drop_ratio, locate_fault, mean_and_sigma, AnomalyEvent, BaselineProfile,
    DropRatioMatrix, IntervalReadings, LocalizationReport, ProReadings,
};
use crate::error::{Error, Result};
use crate::pdn::{solve_dc, transient_step, CurrentMap, GridSpec, Node, VoltageField};
use crate::pro::{
    cycles_over_interval, frequency_from_counters, reading_from_cycles, CounterReading, MeasurementPlan, ProInstance,
    SelConfig, VoltageSample,
};
use crate::rng;
use crate::scenario::Scenario;
use crate::stimuli::{fit_line, waster_currents, EmPulse, LineFit, PowerWasterBank};

/// Counter-to-reference ratio of an upset counter (reads as 4.08e7 MHz at 24 MHz).
pub const UPSET_COUNT_RATIO: f64 = 1.7e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Relative sigma of the cycle count.
    pub jitter: f64,
    /// Sigma of the common supply offset (volt).
    pub supply_noise: f64,
}

impl NoiseModel {
    pub fn of(scenario: &Scenario) -> Self {
        let m = &scenario.file.measurement;
        NoiseModel { jitter: m.jitter, supply_noise: m.supply_noise }
    }

    pub fn none() -> Self {
        NoiseModel { jitter: 0.0, supply_noise: 0.0 }
    }
}

/// Sensor instances in floorplan order, each with its own variation draw.
pub fn sensor_instances(scenario: &Scenario, master: u64) -> Vec<ProInstance> {
    let sigma = scenario.file.pro_design.variation_sigma;
    scenario
        .floorplan
        .placements
        .iter()
        .map(|p| {
            let mut r = rng::substream(master, rng::PROCESS_VARIATION, p.id as u64);
            ProInstance::with_sampled_variation(scenario.design.clone(), p.node(), p.id, sigma, &mut r)
        })
        .collect()
}

/// Shared supply offsets for `n` readings of one measurement phase.
pub fn supply_offsets(master: u64, phase: u64, n: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let mut r = rng::substream(master, rng::PDN_NOISE, phase);
    (0..n).map(|_| sigma * r.sample::<f64, _>(StandardNormal)).collect()
}

fn jitter_stream(master: u64, phase: u64, pro_id: usize) -> rng::SimRng {
    rng::substream(master, rng::MEASUREMENT_NOISE, phase.wrapping_mul(1 << 24).wrapping_add(pro_id as u64))
}

fn noisy_reading<R: Rng>(
    inst: &ProInstance,
    sel: &SelConfig,
    trace: &[VoltageSample],
    plan: &MeasurementPlan,
    jitter: f64,
    r: &mut R,
) -> Result<CounterReading> {
    let (cycles, stalled) = cycles_over_interval(inst, sel, trace, plan)?;
    let e: f64 = if jitter > 0.0 { r.sample(StandardNormal) } else { 0.0 };
    Ok(reading_from_cycles(cycles * (1.0 + jitter * e), stalled, inst.design.counter_width, plan))
}

/// `plan.repetitions` readings of one sensor at a constant local supply.
#[allow(clippy::too_many_arguments)]
pub fn measure_static(
    inst: &ProInstance,
    sel: &SelConfig,
    v_local: f64,
    plan: &MeasurementPlan,
    noise: &NoiseModel,
    offsets: &[f64],
    master: u64,
    phase: u64,
) -> Result<Vec<CounterReading>> {
    let mut r = jitter_stream(master, phase, inst.id);
    offsets
        .iter()
        .take(plan.repetitions)
        .map(|dv| {
            let trace = [VoltageSample { t: 0.0, v: (v_local + dv).max(0.0) }];
            noisy_reading(inst, sel, &trace, plan, noise.jitter, &mut r)
        })
        .collect()
}

/// Mean and sample sigma of the counter-derived frequencies of a reading series.
pub fn frequency_stats(readings: &[CounterReading]) -> Result<(f64, f64)> {
    let hz = readings.iter().map(|r| frequency_from_counters(r).map(|f| f.hz)).collect::<Result<Vec<_>>>()?;
    Ok(mean_and_sigma(&hz))
}

/// Per-sensor mean frequencies, quiet and loaded, and their drop ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct DropRatioRun {
    pub f_off: BTreeMap<usize, f64>,
    pub f_on: BTreeMap<usize, f64>,
    pub matrix: DropRatioMatrix,
}

/// Phase tags keep the noise streams of different experiments apart.
const PHASE_OFF: u64 = 0;
const PHASE_ON: u64 = 1;
const PHASE_LINEARITY: u64 = 1 << 16;
const PHASE_SWEEP: u64 = 2 << 16;
const PHASE_BASELINE: u64 = 3 << 16;
const PHASE_MONITOR: u64 = 4 << 16;

fn total_load(grid: &GridSpec, banks: &[PowerWasterBank]) -> CurrentMap {
    let mut loads = CurrentMap::for_grid(grid);
    for b in banks {
        loads.accumulate(&waster_currents(b, grid, 0.0));
    }
    loads
}

/// Off/on measurement of every sensor against the given waster banks.
pub fn measure_drop_ratios(
    scenario: &Scenario,
    banks: &[PowerWasterBank],
    master: u64,
    noise: &NoiseModel,
) -> Result<DropRatioRun> {
    let grid = &scenario.grid;
    let plan = scenario.plan();
    let v_on = solve_dc(grid, &total_load(grid, banks))?;
    let off_offsets = supply_offsets(master, PHASE_OFF, plan.repetitions, noise.supply_noise);
    let on_offsets = supply_offsets(master, PHASE_ON, plan.repetitions, noise.supply_noise);
    let sel = &scenario.sensing_sel;
    let rows = sensor_instances(scenario, master)
        .par_iter()
        .map(|inst| {
            let off = measure_static(inst, sel, grid.v_supply, &plan, noise, &off_offsets, master, PHASE_OFF)?;
            let on = measure_static(inst, sel, v_on.at(inst.location), &plan, noise, &on_offsets, master, PHASE_ON)?;
            let f_off = frequency_stats(&off)?.0;
            let f_on = frequency_stats(&on)?.0;
            Ok((inst.id, f_off, f_on, drop_ratio(f_off, f_on)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut run = DropRatioRun { f_off: BTreeMap::new(), f_on: BTreeMap::new(), matrix: DropRatioMatrix::default() };
    for (id, off, on, ratio) in rows {
        run.f_off.insert(id, off);
        run.f_on.insert(id, on);
        run.matrix.ratios.insert(id, ratio);
    }
    Ok(run)
}

/// Fault localization with the scenario's enabled waster banks.
pub fn run_locate(scenario: &Scenario, master: u64) -> Result<(DropRatioRun, LocalizationReport)> {
    let banks: Vec<PowerWasterBank> = scenario.wasters.iter().filter(|b| b.enabled).cloned().collect();
    if banks.is_empty() {
        return Err(Error::input("locate-fault needs at least one enabled waster bank"));
    }
    let run = measure_drop_ratios(scenario, &banks, master, &NoiseModel::of(scenario))?;
    let report = locate_fault(&run.matrix, &scenario.floorplan)?;
    Ok((run, report))
}

/// Drop ratio at the calibration sensor against waster count.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearityRun {
    pub i_per_waster: f64,
    pub i_enable: f64,
    pub points: Vec<(usize, f64)>,
    pub fit: LineFit,
}

/// Calibrates the wasters, then sweeps the target counts through the full
/// noisy measurement chain at the calibration sensor.
pub fn waster_linearity(scenario: &Scenario, master: u64) -> Result<LinearityRun> {
    let cal = scenario.calibrate_wasters()?;
    let grid = &scenario.grid;
    let plan = scenario.plan();
    let noise = NoiseModel::of(scenario);
    let sensor = scenario.calibration_sensor;
    let id = scenario.floorplan.placements.iter().find(|p| p.node() == sensor).map_or(usize::MAX, |p| p.id);
    let mut vr = rng::substream(master, rng::PROCESS_VARIATION, id as u64);
    let sigma = scenario.file.pro_design.variation_sigma;
    let inst = ProInstance::with_sampled_variation(scenario.design.clone(), sensor, id, sigma, &mut vr);
    let sel = &scenario.sensing_sel;
    let off_phase = PHASE_LINEARITY;
    let off_offsets = supply_offsets(master, off_phase, plan.repetitions, noise.supply_noise);
    let off = measure_static(&inst, sel, grid.v_supply, &plan, &noise, &off_offsets, master, off_phase)?;
    let f_off = frequency_stats(&off)?.0;
    let points = scenario
        .waster_target
        .counts
        .par_iter()
        .enumerate()
        .map(|(k, &count)| {
            let mut bank = PowerWasterBank::new(count, scenario.calibration_region.clone());
            bank.i_per_waster = cal.i_per_waster;
            bank.i_enable = cal.i_enable;
            let v = solve_dc(grid, &waster_currents(&bank, grid, 0.0))?.at(sensor);
            let phase = off_phase + 1 + k as u64;
            let offsets = supply_offsets(master, phase, plan.repetitions, noise.supply_noise);
            let on = measure_static(&inst, sel, v, &plan, &noise, &offsets, master, phase)?;
            Ok((count, drop_ratio(f_off, frequency_stats(&on)?.0)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(LinearityRun { i_per_waster: cal.i_per_waster, i_enable: cal.i_enable, fit: fit_line(&xs, &ys), points })
}

/// Rows, counted from the end nearest the wasters, whose mean drop ratio is
/// no larger than the previous (nearer) row's. The nearest row always counts.
pub fn rows_monotone_toward(row_means: &[Option<f64>], toward_first_row: bool) -> usize {
    let mut means: Vec<f64> = row_means.iter().flatten().copied().collect();
    if !toward_first_row {
        means.reverse();
    }
    if means.is_empty() {
        return 0;
    }
    1 + means.windows(2).filter(|w| w[1] <= w[0]).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub supply_voltage: f64,
    pub sel_config_id: u64,
    pub mean_frequency: f64,
    pub sigma: f64,
}

/// External-supply sweep of one sensor (the lowest PRO id) over the given
/// SEL configurations. Rows follow the sweep's descending voltage order.
pub fn sweep_voltage(scenario: &Scenario, configs: &[u64], master: u64) -> Result<Vec<SweepRow>> {
    let n_cells = scenario.design.n_cells();
    if let Some(id) = configs.iter().find(|id| **id >> n_cells != 0) {
        return Err(Error::input(format!("SEL id {id} needs more than {n_cells} cells")));
    }
    let sensors = sensor_instances(scenario, master);
    let inst = sensors.iter().min_by_key(|p| p.id).ok_or_else(|| Error::input("floorplan has no sensors"))?;
    let plan = scenario.plan();
    let noise = NoiseModel::of(scenario);
    let voltages = &scenario.supply_sweep().voltages;
    let jobs: Vec<(usize, f64, usize, u64)> = voltages
        .iter()
        .enumerate()
        .flat_map(|(vi, &v)| configs.iter().enumerate().map(move |(ci, &id)| (vi, v, ci, id)))
        .collect();
    jobs.par_iter()
        .map(|&(vi, v, ci, id)| {
            let mut grid = scenario.grid.clone();
            grid.v_supply = v;
            let v_local = solve_dc(&grid, &CurrentMap::for_grid(&grid))?.at(inst.location);
            let phase = PHASE_SWEEP + (vi * configs.len() + ci) as u64;
            let offsets = supply_offsets(master, phase, plan.repetitions, noise.supply_noise);
            let sel = SelConfig::from_id(id, n_cells);
            let readings = measure_static(inst, &sel, v_local, &plan, &noise, &offsets, master, phase)?;
            let (mean_frequency, sigma) = frequency_stats(&readings)?;
            Ok(SweepRow { supply_voltage: v, sel_config_id: id, mean_frequency, sigma })
        })
        .collect()
}

/// Supply seen at every node over one monitoring interval, as piecewise
/// constant segments relative to the interval start.
///
/// A pulse lowers the supply by its transient drop while active; afterwards
/// nodes inside its footprint overshoot by `rebound_fraction` of their drop
/// for the rebound time. Contributions of overlapping pulses add.
pub fn interval_voltages(
    grid: &GridSpec,
    pulses: &[(EmPulse, VoltageField)],
    t0: f64,
    length: f64,
) -> Vec<Vec<VoltageSample>> {
    let t1 = t0 + length;
    let mut edges = vec![t0];
    for (p, _) in pulses {
        for t in [p.t_start, p.t_end(), p.t_end() + p.rebound_time()] {
            if t > t0 && t < t1 {
                edges.push(t);
            }
        }
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let mut out = vec![Vec::with_capacity(edges.len()); grid.len()];
    for (i, &a) in edges.iter().enumerate() {
        let b = edges.get(i + 1).copied().unwrap_or(t1);
        let mid = 0.5 * (a + b);
        for (k, node) in grid.nodes().enumerate() {
            let mut v = grid.v_supply;
            for (p, field) in pulses {
                let drop = grid.v_supply - field.at(node);
                if p.is_active(mid) {
                    v -= drop;
                } else if mid > p.t_end() && mid < p.t_end() + p.rebound_time() && p.weight(node) > 0.0 {
                    v += p.rebound_fraction * drop;
                }
            }
            out[k].push(VoltageSample { t: a - t0, v: v.max(0.0) });
        }
    }
    out
}

fn pulse_fields(scenario: &Scenario) -> Result<Vec<(EmPulse, VoltageField)>> {
    let grid = &scenario.grid;
    scenario
        .em_pulses
        .iter()
        .map(|p| {
            let field = transient_step(grid, &CurrentMap::for_grid(grid), &p.peak_currents(grid), p.t_width)?;
            Ok((p.clone(), field))
        })
        .collect()
}

/// Baseline characterization followed by the monitored intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectRun {
    pub profile: BaselineProfile,
    pub intervals: Vec<IntervalReadings>,
    pub events: Vec<AnomalyEvent>,
}

pub fn run_detect(scenario: &Scenario, master: u64) -> Result<DetectRun> {
    let grid = &scenario.grid;
    let d = &scenario.file.detect;
    let noise = NoiseModel::of(scenario);
    let mut plan = scenario.plan();
    plan.duration = d.interval;
    plan.repetitions = d.baseline_intervals;
    let sensors = sensor_instances(scenario, master);
    let sel = &scenario.sensing_sel;

    let offsets = supply_offsets(master, PHASE_BASELINE, d.baseline_intervals, noise.supply_noise);
    let baseline = sensors
        .par_iter()
        .map(|inst| {
            let readings = measure_static(inst, sel, grid.v_supply, &plan, &noise, &offsets, master, PHASE_BASELINE)?;
            Ok(ProReadings { pro_id: inst.id, readings })
        })
        .collect::<Result<Vec<_>>>()?;
    let profile = characterize(&baseline, scenario.detector())?;

    let pulses = pulse_fields(scenario)?;
    let intervals = (0..d.intervals)
        .into_par_iter()
        .map(|k| {
            let t0 = k as f64 * d.interval;
            let t1 = t0 + d.interval;
            let phase = PHASE_MONITOR + k as u64;
            let dv = supply_offsets(master, phase, 1, noise.supply_noise)[0];
            let traces = interval_voltages(grid, &pulses, t0, d.interval);
            let upset = |node: Node| pulses.iter().any(|(p, _)| p.t_start <= t1 && p.t_end() >= t0 && p.corrupts(node));
            let readings = sensors
                .iter()
                .map(|inst| {
                    let mut r = jitter_stream(master, phase, inst.id);
                    let trace: Vec<VoltageSample> = traces[grid.index(inst.location)]
                        .iter()
                        .map(|s| VoltageSample { t: s.t, v: (s.v + dv).max(0.0) })
                        .collect();
                    let mut reading = noisy_reading(inst, sel, &trace, &plan, noise.jitter, &mut r)?;
                    if upset(inst.location) {
                        let modulus = 1u128 << inst.design.counter_width;
                        reading.c_pro = ((UPSET_COUNT_RATIO * reading.c_clk as f64) as u128 % modulus) as u64;
                        reading.corrupted = true;
                    }
                    Ok((inst.id, reading))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(IntervalReadings { interval_index: k, readings })
        })
        .collect::<Result<Vec<_>>>()?;
    let events = detect_anomalies(&intervals, &profile, &scenario.design)?;
    Ok(DetectRun { profile, intervals, events })
}
