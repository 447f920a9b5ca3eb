// SPDX-License-Identifier: Apache-2.0

//! Load currents and disturbances: power-waster banks, EM pulses, supply
//! sweeps, the AES victim and the random-frequency hiding schedule.

pub mod aes;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdn::{transfer_drops, CurrentMap, GridSpec, Node};
use crate::pro::{instantaneous_frequency, ProDesign, ProInstance, SelConfig, VoltageLaw};
use crate::rng;
use aes::Block;

/// A group of always-oscillating ring oscillators behind one enable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerWasterBank {
    pub count: usize,
    pub region: Vec<Node>,
    /// Current per enabled waster (ampere).
    #[serde(default = "PowerWasterBank::default_i_per_waster")]
    pub i_per_waster: f64,
    #[serde(default = "PowerWasterBank::default_f_waster")]
    pub f_waster: f64,
    /// Static current drawn chip-wide whenever the bank is enabled (ampere).
    #[serde(default)]
    pub i_enable: f64,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

fn default_true() -> bool {
    true
}

impl PowerWasterBank {
    fn default_i_per_waster() -> f64 {
        0.8e-3
    }
    fn default_f_waster() -> f64 {
        245.0e6
    }

    pub fn new(count: usize, region: Vec<Node>) -> Self {
        PowerWasterBank {
            count,
            region,
            i_per_waster: Self::default_i_per_waster(),
            f_waster: Self::default_f_waster(),
            i_enable: 0.0,
            enabled: true,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.i_per_waster > 0.0 && self.i_per_waster.is_finite()) {
            return Err(Error::Validation(format!("i_per_waster must be > 0, got {}", self.i_per_waster)));
        }
        if !(self.i_enable >= 0.0 && self.i_enable.is_finite()) {
            return Err(Error::Validation(format!("i_enable must be >= 0, got {}", self.i_enable)));
        }
        if self.count > 0 && self.region.is_empty() {
            return Err(Error::Validation("waster bank with count > 0 needs a non-empty region".into()));
        }
        check_nodes(grid, &self.region, "waster region")
    }

    pub fn with_count(&self, count: usize) -> Self {
        PowerWasterBank { count, ..self.clone() }
    }

    pub fn with_enabled(&self, enabled: bool) -> Self {
        PowerWasterBank { enabled, ..self.clone() }
    }
}

fn check_nodes(grid: &GridSpec, nodes: &[Node], what: &str) -> Result<()> {
    match nodes.iter().find(|n| !grid.contains(**n)) {
        Some(n) => Err(Error::Validation(format!(
            "{what} node ({}, {}) outside the {}x{} grid",
            n.row, n.col, grid.rows, grid.cols
        ))),
        None => Ok(()),
    }
}

/// Bank load: `count * i_per_waster` spread over the region, plus the
/// enable overhead spread over the whole grid. Wasters run continuously,
/// so the map does not depend on `t`.
pub fn waster_currents(bank: &PowerWasterBank, grid: &GridSpec, _t: f64) -> CurrentMap {
    let mut map = CurrentMap::for_grid(grid);
    if !bank.enabled {
        return map;
    }
    if bank.count > 0 && !bank.region.is_empty() {
        let per_node = bank.count as f64 * bank.i_per_waster / bank.region.len() as f64;
        for &n in &bank.region {
            map.add_at(n, per_node);
        }
    }
    if bank.i_enable > 0.0 {
        let per_node = bank.i_enable / grid.len() as f64;
        for c in &mut map.currents {
            *c += per_node;
        }
    }
    map
}

/// Localized transient current injection from an EM probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmPulse {
    pub center: Node,
    /// Reach in grid units (Euclidean).
    pub radius: f64,
    /// Injected current at the center (ampere).
    pub amplitude: f64,
    pub t_start: f64,
    pub t_width: f64,
    /// Local injected current above which a PRO counter is upset (ampere).
    pub corrupt_threshold: f64,
    /// Supply overshoot after the pulse, as a fraction of the pulse's drop.
    #[serde(default = "EmPulse::default_rebound_fraction")]
    pub rebound_fraction: f64,
    /// Overshoot duration; defaults to five pulse widths.
    #[serde(default)]
    pub rebound_duration: Option<f64>,
}

impl EmPulse {
    fn default_rebound_fraction() -> f64 {
        0.3
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.t_width > 0.0 && self.t_width.is_finite()) {
            return Err(Error::Validation(format!("EM pulse t_width must be > 0, got {}", self.t_width)));
        }
        if !(self.amplitude >= 0.0 && self.radius >= 0.0 && self.t_start >= 0.0) {
            return Err(Error::Validation("EM pulse amplitude, radius and t_start must be >= 0".into()));
        }
        if !(self.corrupt_threshold > 0.0) {
            return Err(Error::Validation("EM pulse corrupt_threshold must be > 0".into()));
        }
        if !(self.rebound_fraction >= 0.0 && self.rebound_duration.is_none_or(|d| d >= 0.0)) {
            return Err(Error::Validation("EM rebound fraction and duration must be >= 0".into()));
        }
        check_nodes(grid, &[self.center], "EM pulse center")
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.t_width
    }

    pub fn rebound_time(&self) -> f64 {
        self.rebound_duration.unwrap_or(5.0 * self.t_width)
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end()
    }

    /// Linear falloff weight `max(0, 1 - d / radius)`; radius 0 hits the center only.
    pub fn weight(&self, node: Node) -> f64 {
        let d = node.euclidean(self.center);
        if self.radius == 0.0 {
            return if d == 0.0 { 1.0 } else { 0.0 };
        }
        (1.0 - d / self.radius).max(0.0)
    }

    /// Nodes with non-zero weight.
    pub fn footprint(&self, grid: &GridSpec) -> Vec<(Node, f64)> {
        grid.nodes().map(|n| (n, self.weight(n))).filter(|(_, w)| *w > 0.0).collect()
    }

    /// A PRO counter at `node` is upset when the local injected current exceeds the threshold.
    pub fn corrupts(&self, node: Node) -> bool {
        self.amplitude * self.weight(node) > self.corrupt_threshold
    }

    /// Injected map while the pulse is on, regardless of time.
    pub fn peak_currents(&self, grid: &GridSpec) -> CurrentMap {
        let mut map = CurrentMap::for_grid(grid);
        for (n, w) in self.footprint(grid) {
            map.add_at(n, self.amplitude * w);
        }
        map
    }
}

pub fn em_pulse_currents(pulse: &EmPulse, grid: &GridSpec, t: f64) -> CurrentMap {
    if pulse.is_active(t) {
        pulse.peak_currents(grid)
    } else {
        CurrentMap::for_grid(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplySweep {
    pub voltages: Vec<f64>,
}

impl SupplySweep {
    pub fn validate(&self) -> Result<()> {
        if self.voltages.is_empty() {
            return Err(Error::Validation("supply sweep has no voltages".into()));
        }
        if let Some(v) = self.voltages.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!("supply sweep voltage {v} must be > 0")));
        }
        if self.voltages.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Validation("supply sweep voltages must be strictly descending".into()));
        }
        Ok(())
    }
}

/// The victim AES core.
#[derive(Debug, Clone, PartialEq)]
pub struct AesActivity {
    pub key: Block,
    pub region: Vec<Node>,
    /// Peak of each round's current envelope (ampere).
    pub i_round_peak: f64,
    pub round_duration: f64,
    /// Extra current per bit flipped in the final-round register update (ampere).
    pub leak_scale: f64,
}

pub const AES_ROUNDS: usize = 10;

impl AesActivity {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.region.is_empty() {
            return Err(Error::Validation("AES region is empty".into()));
        }
        if !(self.i_round_peak >= 0.0 && self.leak_scale >= 0.0) {
            return Err(Error::Validation("AES currents must be >= 0".into()));
        }
        if !(self.round_duration > 0.0 && self.round_duration.is_finite()) {
            return Err(Error::Validation("AES round_duration must be > 0".into()));
        }
        check_nodes(grid, &self.region, "AES region")
    }

    pub fn span(&self) -> f64 {
        AES_ROUNDS as f64 * self.round_duration
    }

    /// Total AES current at `t` (relative to encryption start) given the
    /// final-round register Hamming distance. Each round is a half-sine.
    pub fn total_current(&self, t: f64, last_round_hd: u32) -> f64 {
        if !(t >= 0.0 && t < self.span()) {
            return 0.0;
        }
        let phase = t / self.round_duration;
        let round = phase.floor() as usize;
        let shape = (std::f64::consts::PI * (phase - round as f64)).sin();
        let mut amps = self.i_round_peak;
        if round == AES_ROUNDS - 1 {
            amps += self.leak_scale * f64::from(last_round_hd);
        }
        amps * shape
    }
}

/// AES load map at time `t` into the encryption, with the true ciphertext.
pub fn aes_power(activity: &AesActivity, grid: &GridSpec, plaintext: &[u8], t: f64) -> Result<(CurrentMap, Block)> {
    let pt = aes::block_from_slice(plaintext)?;
    if !(t >= 0.0 && t <= activity.span()) {
        return Err(Error::input(format!("t = {t} outside the encryption span {}", activity.span())));
    }
    let states = aes::encrypt_checked(&activity.key, &pt)?;
    let hd = aes::hamming_distance(&states[9], &states[10]);
    let total = activity.total_current(t, hd);
    let mut map = CurrentMap::for_grid(grid);
    let per_node = total / activity.region.len() as f64;
    for &n in &activity.region {
        map.add_at(n, per_node);
    }
    Ok((map, states[10]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HidingSchedule {
    /// Time between SEL re-randomizations (second).
    pub interval: f64,
    pub seed: u64,
    pub drive_io: bool,
    pub io_gain: f64,
}

impl HidingSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval > 0.0 && self.interval.is_finite()) {
            return Err(Error::Validation(format!("hiding interval must be > 0, got {}", self.interval)));
        }
        if !(self.io_gain >= 1.0 && self.io_gain.is_finite()) {
            return Err(Error::Validation(format!("io_gain must be >= 1, got {}", self.io_gain)));
        }
        Ok(())
    }

    pub fn interval_index(&self, t: f64) -> u64 {
        (t / self.interval).floor().max(0.0) as u64
    }
}

/// SEL assignment for the hiding interval containing `t`: a uniform draw
/// over all assignments, keyed only by the seed and interval index.
pub fn next_sel(schedule: &HidingSchedule, design: &ProDesign, t: f64) -> SelConfig {
    sel_for_interval(schedule.seed, schedule.interval_index(t), design.n_cells())
}

pub fn sel_for_interval(seed: u64, index: u64, n_cells: usize) -> SelConfig {
    let mut r = rng::substream(seed, rng::HIDING, index);
    let id = if n_cells >= 64 { r.random::<u64>() } else { r.random_range(0..(1u64 << n_cells)) };
    SelConfig::from_id(id, n_cells)
}

/// Average supply current of the oscillator itself: one switched charge per
/// active inverter per cycle, amplified when it also drives an IO pin.
pub fn pro_self_current(instance: &ProInstance, sel: &SelConfig, v_local: f64, schedule: &HidingSchedule) -> f64 {
    if !sel.enabled {
        return 0.0;
    }
    let f = match instantaneous_frequency(instance, sel, v_local) {
        Ok(f) => f,
        Err(_) => return 0.0,
    };
    let gain = if schedule.drive_io { schedule.io_gain } else { 1.0 };
    instance.design.switch_charge * f * f64::from(instance.design.active_inverters(sel)) * gain
}

/// Targets for waster calibration: `ratio ≈ slope * count + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WasterTarget {
    pub slope: f64,
    pub intercept: f64,
    pub counts: Vec<usize>,
}

impl Default for WasterTarget {
    fn default() -> Self {
        WasterTarget { slope: 3.1e-4, intercept: 0.247, counts: (1..=9).map(|k| 64 * k).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WasterCalibration {
    pub i_per_waster: f64,
    pub i_enable: f64,
    pub fit: LineFit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least-squares line through `(x, y)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LineFit { slope, intercept, r_squared }
}

/// Noise-free drop ratio at a sensor for drop `d` below `v_supply`.
fn ratio_for_drop(law: &VoltageLaw, v_supply: f64, d: f64) -> f64 {
    1.0 - law.speed(v_supply - d) / law.speed(v_supply)
}

/// Fits `i_per_waster` and `i_enable` so the noise-free drop ratio at
/// `sensor` over `target.counts` has the target least-squares line.
///
/// The grid is linear, so the sensor drop is `a * i_enable + b * count *
/// i_per_waster`. A two-point inversion of the target line seeds `(a *
/// i_enable, b * i_per_waster)`; Newton iterations then match the fitted
/// slope and intercept.
pub fn calibrate_wasters(
    grid: &GridSpec,
    bank: &PowerWasterBank,
    sensor: Node,
    law: &VoltageLaw,
    target: &WasterTarget,
) -> Result<WasterCalibration> {
    grid.validate()?;
    if target.counts.len() < 2 {
        return Err(Error::Calibration("need at least two waster counts".into()));
    }
    if bank.region.is_empty() {
        return Err(Error::Calibration("waster bank region is empty".into()));
    }
    let si = grid.index(sensor);
    let b = transfer_drops(grid, &bank.region)?[si];
    let all: Vec<Node> = grid.nodes().collect();
    let a = transfer_drops(grid, &all)?[si];
    let xs: Vec<f64> = target.counts.iter().map(|&c| c as f64).collect();
    let v = grid.v_supply;
    let fit_for = |p: f64, q: f64| -> Option<LineFit> {
        let ys: Vec<f64> = xs.iter().map(|x| ratio_for_drop(law, v, p + q * x)).collect();
        ys.iter().all(|y| y.is_finite() && *y < 1.0).then(|| fit_line(&xs, &ys))
    };
    let drop_for_ratio = |r: f64| v - law.voltage_for_speed((1.0 - r) * law.speed(v));
    let (x0, x1) = (xs[0], xs[xs.len() - 1]);
    let d0 = drop_for_ratio(target.intercept + target.slope * x0);
    let d1 = drop_for_ratio(target.intercept + target.slope * x1);
    let mut q = (d1 - d0) / (x1 - x0);
    let mut p = d0 - q * x0;
    if !(q > 0.0 && p.is_finite()) {
        return Err(Error::Calibration(format!("target line is not reachable (seed slope {q})")));
    }
    for _ in 0..50 {
        let f = fit_for(p, q).ok_or_else(|| Error::Calibration("waster drop stalls the sensor".into()))?;
        let e = [f.slope - target.slope, f.intercept - target.intercept];
        if e[0].abs() < 1e-13 && e[1].abs() < 1e-10 {
            break;
        }
        let hp = 1e-7 * p.abs().max(1e-3);
        let hq = 1e-7 * q;
        let fp = fit_for(p + hp, q).ok_or_else(|| Error::Calibration("jacobian step stalled".into()))?;
        let fq = fit_for(p, q + hq).ok_or_else(|| Error::Calibration("jacobian step stalled".into()))?;
        let j = [
            [(fp.slope - f.slope) / hp, (fq.slope - f.slope) / hq],
            [(fp.intercept - f.intercept) / hp, (fq.intercept - f.intercept) / hq],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Calibration("singular calibration jacobian".into()));
        }
        p -= (j[1][1] * e[0] - j[0][1] * e[1]) / det;
        q -= (j[0][0] * e[1] - j[1][0] * e[0]) / det;
    }
    let fit = fit_for(p, q).ok_or_else(|| Error::Calibration("calibrated drop stalls the sensor".into()))?;
    if (fit.slope / target.slope - 1.0).abs() > 1e-6 || (fit.intercept / target.intercept - 1.0).abs() > 1e-6 {
        return Err(Error::Calibration(format!(
            "calibration did not converge: slope {} intercept {}",
            fit.slope, fit.intercept
        )));
    }
    if !(q > 0.0 && p >= 0.0) {
        return Err(Error::Calibration(format!(
            "target line needs negative currents (enable drop {p} V, per-waster drop {q} V)"
        )));
    }
    Ok(WasterCalibration { i_per_waster: q / b, i_enable: p / a, fit })
}

/// Uniform plaintext draw from the given substream.
pub fn random_block<R: Rng>(r: &mut R) -> Block {
    let mut b = [0u8; 16];
    r.fill(&mut b);
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::block;
    use std::sync::Arc;

    #[test]
    fn disabled_bank_is_zero() {
        let g = GridSpec::with_defaults(4, 4);
        let bank = PowerWasterBank::new(100, vec![Node::new(0, 0)]).with_enabled(false);
        assert!(waster_currents(&bank, &g, 0.0).is_zero());
    }

    #[test]
    fn uniform_split_over_region() {
        let g = GridSpec::with_defaults(4, 4);
        let mut bank = PowerWasterBank::new(100, block(0..=1, 0..=1));
        bank.i_per_waster = 1e-3;
        let m = waster_currents(&bank, &g, 0.0);
        assert!((m.get(Node::new(1, 1)) - 0.025).abs() < 1e-15);
        assert_eq!(m.get(Node::new(2, 2)), 0.0);
    }

    fn pulse() -> EmPulse {
        EmPulse {
            center: Node::new(2, 2),
            radius: 2.0,
            amplitude: 0.040,
            t_start: 1e-6,
            t_width: 1e-7,
            corrupt_threshold: 1.0,
            rebound_fraction: 0.3,
            rebound_duration: None,
        }
    }

    #[test]
    fn em_pulse_window_and_falloff() {
        let g = GridSpec::with_defaults(5, 5);
        let p = pulse();
        assert!(em_pulse_currents(&p, &g, 0.5e-6).is_zero());
        assert!(em_pulse_currents(&p, &g, 1.2e-6).is_zero());
        let m = em_pulse_currents(&p, &g, 1.05e-6);
        assert_eq!(m.get(Node::new(2, 2)), 0.040);
        assert!((m.get(Node::new(1, 2)) - 0.020).abs() < 1e-15);
        let mut expected = 0.0;
        for r in 0..5usize {
            for c in 0..5usize {
                let d: f64 = ((r as f64 - 2.0).powi(2) + (c as f64 - 2.0).powi(2)).sqrt();
                if d <= 2.0 {
                    expected += 0.040 * (1.0 - d / 2.0);
                }
            }
        }
        assert!((m.total() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_radius_hits_center_only() {
        let g = GridSpec::with_defaults(3, 3);
        let p = EmPulse { radius: 0.0, center: Node::new(1, 1), ..pulse() };
        let m = p.peak_currents(&g);
        assert_eq!(m.get(Node::new(1, 1)), 0.040);
        assert_eq!(m.total(), 0.040);
    }

    #[test]
    fn sweep_must_descend() {
        assert!(SupplySweep { voltages: vec![1.33, 1.2, 1.1] }.validate().is_ok());
        assert!(SupplySweep { voltages: vec![1.2, 1.2] }.validate().is_err());
        assert!(SupplySweep { voltages: vec![1.0, -1.0] }.validate().is_err());
    }

    fn schedule() -> HidingSchedule {
        HidingSchedule { interval: 2e-3, seed: 42, drive_io: false, io_gain: 20.0 }
    }

    #[test]
    fn next_sel_is_deterministic() {
        let d = ProDesign::reference();
        assert_eq!(next_sel(&schedule(), &d, 3.1e-3), next_sel(&schedule(), &d, 2.5e-3));
    }

    #[test]
    fn hiding_changes_twenty_times_per_encryption() {
        let s = schedule();
        let distinct: std::collections::BTreeSet<u64> = (0..=4100).map(|k| s.interval_index(k as f64 * 1e-5)).collect();
        assert!(distinct.len() >= 20);
    }

    #[test]
    fn sel_draws_are_uniform() {
        let mut hist = [0usize; 64];
        for i in 0..10_000 {
            hist[sel_for_interval(7, i, 6).id() as usize] += 1;
        }
        let p: f64 = 1.0 / 64.0;
        let sigma = (10_000.0 * p * (1.0 - p)).sqrt();
        let chi2: f64 = hist.iter().map(|&h| (h as f64 - 10_000.0 * p).powi(2) / (10_000.0 * p)).sum();
        assert!(hist.iter().all(|&h| (h as f64 - 10_000.0 * p).abs() <= 3.0 * sigma), "{hist:?}");
        // 63 degrees of freedom; 0.999 quantile is about 103.4.
        assert!(chi2 < 103.4, "chi2 = {chi2}");
    }

    fn instance() -> ProInstance {
        ProInstance::new(Arc::new(ProDesign::reference()), Node::new(0, 0), 1.0, 0).unwrap()
    }

    #[test]
    fn pro_current_gain_and_enable() {
        let inst = instance();
        let sel = SelConfig::all_short(6);
        let mut s = schedule();
        let base = pro_self_current(&inst, &sel, 1.33, &s);
        s.drive_io = true;
        assert!((pro_self_current(&inst, &sel, 1.33, &s) / base - 20.0).abs() < 1e-12);
        assert_eq!(pro_self_current(&inst, &sel.clone().disabled(), 1.33, &s), 0.0);
    }

    #[test]
    fn pro_current_ratio_long_vs_short() {
        let inst = instance();
        let s = schedule();
        let long = pro_self_current(&inst, &SelConfig::all_delay(6), 1.33, &s);
        let short = pro_self_current(&inst, &SelConfig::all_short(6), 1.33, &s);
        let expected = (57.0 * 22e6) / (1.0 * 123.44e6);
        assert!((long / short / expected - 1.0).abs() < 1e-9);
    }

    #[test]
    fn aes_power_envelope_and_leak() {
        let g = GridSpec::with_defaults(3, 3);
        let key = aes::parse_hex_block("000102030405060708090a0b0c0d0e0f").unwrap();
        let pt = aes::parse_hex_block("00112233445566778899aabbccddeeff").unwrap();
        let act = AesActivity {
            key,
            region: vec![Node::new(1, 1)],
            i_round_peak: 0.05,
            round_duration: 1.0 / 24e6,
            leak_scale: 0.0,
        };
        let (m, ct) = aes_power(&act, &g, &pt, 9.5 / 24e6).unwrap();
        assert_eq!(hex::encode(ct), "69c4e0d86a7b0430d8cdb78070b4c55a");
        assert!((m.total() - 0.05).abs() < 1e-12);
        let other = [0u8; 16];
        assert_eq!(aes_power(&act, &g, &other, 9.5 / 24e6).unwrap().0, m);
        let leaky = AesActivity { leak_scale: 1e-3, ..act.clone() };
        let hd = aes::last_round_hd(&key, &pt);
        let (m2, _) = aes_power(&leaky, &g, &pt, 9.5 / 24e6).unwrap();
        assert!((m2.total() - (0.05 + 1e-3 * f64::from(hd))).abs() < 1e-12);
        assert!(aes_power(&act, &g, &[0u8; 15], 0.0).is_err());
    }

    #[test]
    fn superposition_is_exact() {
        let g = GridSpec::with_defaults(5, 5);
        let bank = PowerWasterBank::new(64, block(0..=1, 0..=1));
        let p = pulse();
        let mut total = waster_currents(&bank, &g, 1.05e-6);
        total.accumulate(&em_pulse_currents(&p, &g, 1.05e-6));
        for n in g.nodes() {
            let sum = waster_currents(&bank, &g, 0.0).get(n) + p.peak_currents(&g).get(n);
            assert_eq!(total.get(n), sum);
        }
    }

    #[test]
    fn line_fit_exact() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [3.0, 5.0, 7.0];
        let f = fit_line(&xs, &ys);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn waster_calibration_hits_targets() {
        let g = GridSpec::with_defaults(9, 4);
        let bank = PowerWasterBank::new(0, block(3..=5, 0..=2));
        let cal =
            calibrate_wasters(&g, &bank, Node::new(4, 1), &VoltageLaw::default(), &WasterTarget::default()).unwrap();
        assert!((cal.fit.slope - 3.1e-4).abs() < 1e-9);
        assert!((cal.fit.intercept - 0.247).abs() < 1e-7);
        assert!(cal.fit.r_squared > 0.98);
        assert!(cal.i_per_waster > 0.0 && cal.i_enable > 0.0);
    }
}
