// SPDX-License-Identifier: Apache-2.0

//! Programmable ring oscillator: delay-cell chain, SEL configuration,
//! voltage-dependent delay, process variation and counter readout.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdn::Node;

/// One bypassable delay cell: `n_inverters` on the delay path, a mux on the short path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayCellSpec {
    pub n_inverters: u32,
    /// Delay-path propagation delay (second).
    pub t_delay_path: f64,
    /// Shorting-path propagation delay (second).
    pub t_short_path: f64,
}

impl DelayCellSpec {
    /// Cell with inverter count only; delays are filled in by calibration.
    pub fn uncalibrated(n_inverters: u32) -> Self {
        DelayCellSpec { n_inverters, t_delay_path: 0.0, t_short_path: 0.0 }
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.n_inverters < 2 || self.n_inverters & 1 != 0 {
            return Err(Error::input(format!(
                "cell {index}: n_inverters must be even and >= 2, got {}",
                self.n_inverters
            )));
        }
        if !(self.t_short_path > 0.0 && self.t_delay_path > self.t_short_path) {
            return Err(Error::input(format!(
                "cell {index}: need t_delay_path > t_short_path > 0, got {} / {}",
                self.t_delay_path, self.t_short_path
            )));
        }
        Ok(())
    }
}

/// Alpha-power delay scaling `g(v) = ((v_nominal - v_th) / (v - v_th))^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageLaw {
    pub v_nominal: f64,
    pub v_threshold: f64,
    pub alpha: f64,
}

impl Default for VoltageLaw {
    fn default() -> Self {
        VoltageLaw { v_nominal: 1.33, v_threshold: 0.5, alpha: 1.3 }
    }
}

impl VoltageLaw {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_nominal > self.v_threshold && self.v_threshold >= 0.0 && self.alpha > 0.0) {
            return Err(Error::input(format!(
                "voltage law needs v_nominal > v_threshold >= 0 and alpha > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Delay multiplier at `v`; errors with `Stalled` at or below threshold.
    pub fn delay_scale(&self, v: f64) -> Result<f64> {
        if !(v > self.v_threshold) {
            return Err(Error::Stalled { v_local: v, v_threshold: self.v_threshold });
        }
        Ok(((self.v_nominal - self.v_threshold) / (v - self.v_threshold)).powf(self.alpha))
    }

    /// Speed multiplier `1 / g(v)`; zero when stalled.
    pub fn speed(&self, v: f64) -> f64 {
        if v > self.v_threshold {
            ((v - self.v_threshold) / (self.v_nominal - self.v_threshold)).powf(self.alpha)
        } else {
            0.0
        }
    }

    /// Inverse of `speed`: the voltage at which the oscillator runs at `speed` times nominal.
    pub fn voltage_for_speed(&self, speed: f64) -> f64 {
        self.v_threshold + (self.v_nominal - self.v_threshold) * speed.powf(1.0 / self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProDesign {
    pub cells: Vec<DelayCellSpec>,
    /// Fixed inverter plus fixed routing (second).
    pub t_fixed: f64,
    pub t_inverter_nominal: f64,
    pub counter_width: u32,
    /// Charge switched per active inverter per oscillation cycle (coulomb).
    pub switch_charge: f64,
    pub voltage_law: VoltageLaw,
}

/// Shorting-path delay as a fraction of the cell's delay-path delay.
pub const DEFAULT_SHORT_PATH_FRACTION: f64 = 0.05;
pub const REFERENCE_F_MIN: f64 = 22.0e6;
pub const REFERENCE_F_MAX: f64 = 123.44e6;

impl ProDesign {
    /// Two cells each of 4, 8 and 16 inverters, before delay calibration.
    pub fn reference_layout() -> Self {
        ProDesign {
            cells: [4, 4, 8, 8, 16, 16].into_iter().map(DelayCellSpec::uncalibrated).collect(),
            t_fixed: 0.0,
            t_inverter_nominal: 0.0,
            counter_width: 32,
            switch_charge: 2.3e-12,
            voltage_law: VoltageLaw::default(),
        }
    }

    /// The reference layout calibrated to the 22 MHz / 123.44 MHz anchors.
    pub fn reference() -> Self {
        calibrate_delays(REFERENCE_F_MIN, REFERENCE_F_MAX, &Self::reference_layout())
            .expect("reference anchors are feasible")
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::input("design needs at least one delay cell"));
        }
        if self.cells.len() > 32 {
            return Err(Error::input(format!("at most 32 delay cells supported, got {}", self.cells.len())));
        }
        for (i, c) in self.cells.iter().enumerate() {
            c.validate(i)?;
        }
        if !(self.t_fixed > 0.0 && self.t_inverter_nominal > 0.0) {
            return Err(Error::input("t_fixed and t_inverter_nominal must be > 0"));
        }
        if !(16..=64).contains(&self.counter_width) {
            return Err(Error::input(format!("counter_width must be in 16..=64, got {}", self.counter_width)));
        }
        if !(self.switch_charge >= 0.0 && self.switch_charge.is_finite()) {
            return Err(Error::input("switch_charge must be >= 0"));
        }
        self.voltage_law.validate()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn switchable_inverters(&self) -> u32 {
        self.cells.iter().map(|c| c.n_inverters).sum()
    }

    /// Active inverter count for `sel`, fixed inverter included.
    pub fn active_inverters(&self, sel: &SelConfig) -> u32 {
        1 + self.cells.iter().zip(&sel.sel_bits).filter(|(_, &on)| on).map(|(c, _)| c.n_inverters).sum::<u32>()
    }

    /// Nominal propagation delay: fixed part plus one term per cell.
    ///
    /// Terms are summed in sorted order so SEL assignments selecting the
    /// same multiset of path delays give bit-identical results.
    pub fn nominal_delay(&self, sel: &SelConfig) -> Result<f64> {
        self.check_sel(sel)?;
        let mut terms: Vec<f64> = self
            .cells
            .iter()
            .zip(&sel.sel_bits)
            .map(|(c, &on)| if on { c.t_delay_path } else { c.t_short_path })
            .collect();
        terms.push(self.t_fixed);
        terms.sort_by(f64::total_cmp);
        Ok(terms.into_iter().sum())
    }

    pub fn nominal_frequency(&self, sel: &SelConfig) -> Result<f64> {
        Ok(1.0 / (2.0 * self.nominal_delay(sel)?))
    }

    /// Highest achievable frequency at nominal voltage and no variation.
    pub fn max_frequency(&self) -> f64 {
        self.nominal_frequency(&SelConfig::all_short(self.n_cells())).unwrap_or(f64::NAN)
    }

    pub fn min_frequency(&self) -> f64 {
        self.nominal_frequency(&SelConfig::all_delay(self.n_cells())).unwrap_or(f64::NAN)
    }

    pub fn counter_modulus(&self) -> u128 {
        1u128 << self.counter_width
    }

    fn check_sel(&self, sel: &SelConfig) -> Result<()> {
        if sel.sel_bits.len() != self.cells.len() {
            return Err(Error::input(format!(
                "SEL has {} bits but design has {} cells",
                sel.sel_bits.len(),
                self.cells.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SelConfig {
    /// One flag per delay cell; `true` selects the delay path.
    pub sel_bits: Vec<bool>,
    pub enabled: bool,
}

impl SelConfig {
    /// Bit `i` of `id` drives cell `i`.
    pub fn from_id(id: u64, n_cells: usize) -> Self {
        SelConfig { sel_bits: (0..n_cells).map(|i| (id >> i) & 1 == 1).collect(), enabled: true }
    }

    pub fn id(&self) -> u64 {
        self.sel_bits.iter().enumerate().fold(0, |acc, (i, &b)| acc | (u64::from(b) << i))
    }

    pub fn all_short(n_cells: usize) -> Self {
        Self::from_id(0, n_cells)
    }

    pub fn all_delay(n_cells: usize) -> Self {
        SelConfig { sel_bits: vec![true; n_cells], enabled: true }
    }

    pub fn disabled(mut self) -> Self {
        self.enabled = false;
        self
    }
}

/// A placed oscillator with its own process-variation factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProInstance {
    pub design: Arc<ProDesign>,
    pub location: Node,
    pub variation_factor: f64,
    pub id: usize,
}

pub const VARIATION_RANGE: (f64, f64) = (0.9, 1.1);

impl ProInstance {
    pub fn new(design: Arc<ProDesign>, location: Node, variation_factor: f64, id: usize) -> Result<Self> {
        if !(VARIATION_RANGE.0..=VARIATION_RANGE.1).contains(&variation_factor) {
            return Err(Error::input(format!("variation_factor {variation_factor} outside [0.9, 1.1]")));
        }
        Ok(ProInstance { design, location, variation_factor, id })
    }

    /// Draws the variation factor from N(1, sigma), clamped to [0.9, 1.1].
    pub fn with_sampled_variation<R: Rng>(
        design: Arc<ProDesign>,
        location: Node,
        id: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Self {
        let factor = if sigma > 0.0 { Normal::new(1.0, sigma).map(|n| n.sample(rng)).unwrap_or(1.0) } else { 1.0 };
        let variation_factor = factor.clamp(VARIATION_RANGE.0, VARIATION_RANGE.1);
        ProInstance { design, location, variation_factor, id }
    }
}

/// Raw counter pair read out at the end of a measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterReading {
    pub c_pro: u64,
    pub c_clk: u64,
    pub f_clk_millihertz: u64,
    pub corrupted: bool,
    /// The oscillator stopped for part of the window.
    pub stalled: bool,
}

impl CounterReading {
    pub fn new(c_pro: u64, c_clk: u64, f_clk: f64) -> Self {
        CounterReading {
            c_pro,
            c_clk,
            f_clk_millihertz: (f_clk * 1e3).round() as u64,
            corrupted: false,
            stalled: false,
        }
    }

    pub fn f_clk(&self) -> f64 {
        self.f_clk_millihertz as f64 / 1e3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementPlan {
    /// Measurement window `T_arb` (second).
    pub duration: f64,
    pub repetitions: usize,
    pub seed: u64,
    /// Reference clock (hertz).
    #[serde(default = "MeasurementPlan::default_f_clk")]
    pub f_clk: f64,
}

impl MeasurementPlan {
    fn default_f_clk() -> f64 {
        24.0e6
    }

    pub fn new(duration: f64, repetitions: usize, seed: u64) -> Self {
        MeasurementPlan { duration, repetitions, seed, f_clk: Self::default_f_clk() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::input(format!("measurement duration must be > 0, got {}", self.duration)));
        }
        if self.repetitions == 0 {
            return Err(Error::input("measurement repetitions must be >= 1"));
        }
        if !(self.f_clk > 0.0) {
            return Err(Error::input("reference clock f_clk must be > 0"));
        }
        Ok(())
    }

    /// Reference-clock cycles in the window.
    pub fn clock_cycles(&self) -> u64 {
        snapped_floor(self.duration * self.f_clk) as u64
    }

    /// The counting window is gated by whole reference-clock cycles.
    pub fn gated_window(&self) -> f64 {
        self.clock_cycles() as f64 / self.f_clk
    }
}

/// `floor(x)`, treating values within 1e-9 below an integer as that integer.
pub fn snapped_floor(x: f64) -> f64 {
    let up = x.ceil();
    if up - x < 1e-9 * up.abs().max(1.0) {
        up
    } else {
        x.floor()
    }
}

/// Every total active-inverter count reachable by some SEL assignment.
pub fn achievable_inverter_counts(design: &ProDesign) -> BTreeSet<u32> {
    sel_assignments_by_count(design).into_keys().collect()
}

/// Active-inverter count → SEL ids reaching it.
pub fn sel_assignments_by_count(design: &ProDesign) -> BTreeMap<u32, Vec<u64>> {
    let n = design.n_cells();
    let mut map: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for id in 0..(1u64 << n) {
        let sel = SelConfig::from_id(id, n);
        map.entry(design.active_inverters(&sel)).or_default().push(id);
    }
    map
}

/// Sets delays so the all-shorting configuration runs at `f_max` and the
/// all-delay configuration at `f_min` (nominal voltage, no variation).
pub fn calibrate_delays(f_min: f64, f_max: f64, design: &ProDesign) -> Result<ProDesign> {
    calibrate_delays_with(f_min, f_max, design, DEFAULT_SHORT_PATH_FRACTION)
}

/// As [`calibrate_delays`], with an explicit `T_s / T_d` ratio per cell.
///
/// Each cell's delay path is `n * t_inv + T_s`, so selecting a cell adds
/// exactly `n * t_inv` and the two anchors pin `t_inv` and `t_fixed`.
pub fn calibrate_delays_with(f_min: f64, f_max: f64, design: &ProDesign, short_fraction: f64) -> Result<ProDesign> {
    if !(f_min > 0.0 && f_max > f_min && f_max.is_finite()) {
        return Err(Error::Calibration(format!("need 0 < f_min < f_max, got {f_min} / {f_max}")));
    }
    if !(short_fraction > 0.0 && short_fraction < 1.0) {
        return Err(Error::Calibration(format!("short-path fraction must be in (0, 1), got {short_fraction}")));
    }
    let switchable = design.switchable_inverters();
    if switchable == 0 {
        return Err(Error::Calibration("design has no switchable inverters".into()));
    }
    let t_prop_min = 1.0 / (2.0 * f_max);
    let t_prop_max = 1.0 / (2.0 * f_min);
    let t_inv = (t_prop_max - t_prop_min) / f64::from(switchable);
    if !(t_inv > 0.0) {
        return Err(Error::Calibration(format!("anchors give non-positive inverter delay {t_inv}")));
    }
    let short_per_inverter = short_fraction / (1.0 - short_fraction) * t_inv;
    let mut out = design.clone();
    for cell in &mut out.cells {
        let n = f64::from(cell.n_inverters);
        cell.t_short_path = n * short_per_inverter;
        cell.t_delay_path = n * t_inv + cell.t_short_path;
    }
    let shorts: f64 = out.cells.iter().map(|c| c.t_short_path).sum();
    let t_fixed = t_prop_min - shorts;
    // The fixed part contains one inverter, so it cannot be faster than one.
    if t_fixed < t_inv {
        return Err(Error::Calibration(format!(
            "f_max = {f_max} Hz leaves t_fixed = {t_fixed:e} s, below one inverter delay {t_inv:e} s"
        )));
    }
    out.t_fixed = t_fixed;
    out.t_inverter_nominal = t_inv;
    Ok(out)
}

/// Propagation delay `[t_fixed + Σ T_C] · variation · g(v_local)`.
pub fn propagation_delay(instance: &ProInstance, sel: &SelConfig, v_local: f64) -> Result<f64> {
    let nominal = instance.design.nominal_delay(sel)?;
    let g = instance.design.voltage_law.delay_scale(v_local)?;
    Ok(nominal * instance.variation_factor * g)
}

pub fn instantaneous_frequency(instance: &ProInstance, sel: &SelConfig, v_local: f64) -> Result<f64> {
    Ok(1.0 / (2.0 * propagation_delay(instance, sel, v_local)?))
}

/// One piecewise-constant sample of the supply at a sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageSample {
    /// Start of the segment, relative to the window start (second).
    pub t: f64,
    pub v: f64,
}

/// Integrated oscillation cycles over `[0, window)` for a piecewise-constant
/// frequency trace given as `(segment start, hertz)`. Also reports whether
/// any segment had no oscillation (`None` frequency).
pub fn integrate_cycles(segments: &[(f64, Option<f64>)], window: f64) -> (f64, bool) {
    let mut cycles = 0.0;
    let mut stalled = false;
    for (i, &(start, freq)) in segments.iter().enumerate() {
        let start = if i == 0 { 0.0 } else { start.max(0.0) };
        let end = segments.get(i + 1).map_or(window, |s| s.0).min(window);
        if end <= start {
            continue;
        }
        match freq {
            Some(f) => cycles += f * (end - start),
            None => stalled = true,
        }
    }
    (cycles, stalled)
}

/// Counter pair for one window, given the voltage seen by the sensor.
///
/// The PRO counter integrates the instantaneous frequency over the window
/// gated by whole reference-clock cycles, floors, and wraps at the counter
/// width. Segments at or below threshold do not count and mark the reading stalled.
pub fn count_over_interval(
    instance: &ProInstance,
    sel: &SelConfig,
    v_trace: &[VoltageSample],
    plan: &MeasurementPlan,
) -> Result<CounterReading> {
    let (cycles, stalled) = cycles_over_interval(instance, sel, v_trace, plan)?;
    Ok(reading_from_cycles(cycles, stalled, instance.design.counter_width, plan))
}

/// Unfloored cycle count; the building block for noisy measurement models.
pub fn cycles_over_interval(
    instance: &ProInstance,
    sel: &SelConfig,
    v_trace: &[VoltageSample],
    plan: &MeasurementPlan,
) -> Result<(f64, bool)> {
    if v_trace.is_empty() {
        return Err(Error::input("voltage trace is empty"));
    }
    plan.validate()?;
    if !sel.enabled {
        return Ok((0.0, false));
    }
    let nominal = instance.design.nominal_delay(sel)?;
    let f0 = 1.0 / (2.0 * nominal * instance.variation_factor);
    let law = instance.design.voltage_law;
    let segments: Vec<(f64, Option<f64>)> =
        v_trace.iter().map(|s| (s.t, (s.v > law.v_threshold).then(|| f0 * law.speed(s.v)))).collect();
    Ok(integrate_cycles(&segments, plan.gated_window()))
}

pub fn reading_from_cycles(cycles: f64, stalled: bool, counter_width: u32, plan: &MeasurementPlan) -> CounterReading {
    let modulus = 1u128 << counter_width;
    let raw = snapped_floor(cycles.max(0.0)) as u128 % modulus;
    let mut reading = CounterReading::new(raw as u64, plan.clock_cycles(), plan.f_clk);
    reading.stalled = stalled;
    reading
}

/// Frequency reconstructed from a counter pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyReadout {
    pub hz: f64,
    /// Derived from a reading flagged corrupt; `hz` is the sentinel value.
    pub corrupt: bool,
}

/// `f_PRO = C_PRO / C_clk · f_clk`.
pub fn frequency_from_counters(reading: &CounterReading) -> Result<FrequencyReadout> {
    let f_clk = reading.f_clk();
    if reading.c_clk == 0 {
        if reading.corrupted {
            return Ok(FrequencyReadout { hz: f64::INFINITY, corrupt: true });
        }
        return Err(Error::input("reference counter is zero"));
    }
    let hz = reading.c_pro as f64 / reading.c_clk as f64 * f_clk;
    Ok(FrequencyReadout { hz, corrupt: reading.corrupted })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub covered: bool,
    /// Max achievable frequency over the clock frequency.
    pub multiple: f64,
    pub max_frequency: f64,
}

/// True iff the fastest configuration reaches at least 3x the clock.
pub fn check_frequency_coverage(f_clock: f64, design: &ProDesign) -> CoverageReport {
    let max_frequency = design.max_frequency();
    let multiple = max_frequency / f_clock;
    // Relative slack of a few ulps so the exact boundary counts as covered.
    let covered = max_frequency >= 3.0 * f_clock * (1.0 - 4.0 * f64::EPSILON);
    CoverageReport { covered, multiple, max_frequency }
}
