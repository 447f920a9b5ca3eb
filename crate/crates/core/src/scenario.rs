// SPDX-License-Identifier: Apache-2.0

//! Scenario files: TOML with strict keys and documented defaults.
//!
//! Only `[grid]` is required. Every other section falls back to the
//! chip-scale defaults below. The scenario hash is the SHA-256 of the
//! canonical re-serialization (all defaults filled in), so two files that
//! differ only in layout, comments or omitted defaults hash equal.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::floorplan::{ChipFloorplan, ProPlacement};
use crate::pdn::{GridSpec, Node};
use crate::pro::{
    calibrate_delays_with, DelayCellSpec, MeasurementPlan, ProDesign, SelConfig, VoltageLaw, REFERENCE_F_MAX,
    REFERENCE_F_MIN,
};
use crate::sca::hiding::HidingBudget;
use crate::sca::ScaSetup;
use crate::stimuli::aes::{parse_hex_block, Block};
use crate::stimuli::{
    calibrate_wasters, AesActivity, EmPulse, HidingSchedule, PowerWasterBank, SupplySweep, WasterCalibration,
    WasterTarget,
};

/// A rectangular block of nodes (inclusive bounds) or an explicit node list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<Node>>,
}

impl RegionSpec {
    pub fn block(rows: [usize; 2], cols: [usize; 2]) -> Self {
        RegionSpec { rows: Some(rows), cols: Some(cols), nodes: None }
    }

    pub fn resolve(&self, grid: &GridSpec, what: &str) -> Result<Vec<Node>> {
        let nodes = match (self.rows, self.cols, &self.nodes) {
            (Some(r), Some(c), None) => {
                if r[0] > r[1] || c[0] > c[1] {
                    return Err(Error::Validation(format!("{what}: block bounds must be ascending")));
                }
                crate::floorplan::block(r[0]..=r[1], c[0]..=c[1])
            }
            (None, None, Some(n)) => n.clone(),
            _ => return Err(Error::Validation(format!("{what}: give either rows and cols, or nodes"))),
        };
        if let Some(n) = nodes.iter().find(|n| !grid.contains(**n)) {
            return Err(Error::Validation(format!(
                "{what}: node ({}, {}) outside the {}x{} grid",
                n.row, n.col, grid.rows, grid.cols
            )));
        }
        Ok(nodes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorplanSpec {
    pub placements: Vec<ProPlacement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProDesignSpec {
    /// Inverter count of each delay cell, in chain order.
    pub cells: Vec<u32>,
    pub f_min: f64,
    pub f_max: f64,
    pub short_path_fraction: f64,
    pub counter_width: u32,
    pub switch_charge: f64,
    /// Sigma of the per-instance process-variation factor.
    pub variation_sigma: f64,
    /// SEL id every sensor uses while measuring.
    pub sensing_sel: u64,
    pub voltage_law: VoltageLaw,
}

impl Default for ProDesignSpec {
    fn default() -> Self {
        ProDesignSpec {
            cells: vec![4, 4, 8, 8, 16, 16],
            f_min: REFERENCE_F_MIN,
            f_max: REFERENCE_F_MAX,
            short_path_fraction: crate::pro::DEFAULT_SHORT_PATH_FRACTION,
            counter_width: 32,
            switch_charge: 2.3e-12,
            variation_sigma: 0.01,
            sensing_sel: 0,
            voltage_law: VoltageLaw::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WasterSpec {
    pub count: usize,
    pub region: RegionSpec,
    /// Per-waster current; taken from the waster calibration when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_per_waster: Option<f64>,
    /// Chip-wide enable current; taken from the waster calibration when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_enable: Option<f64>,
    #[serde(default = "default_f_waster")]
    pub f_waster: f64,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

fn default_f_waster() -> f64 {
    245.0e6
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmPulseSpec {
    pub center: Node,
    pub radius: f64,
    pub amplitude: f64,
    pub t_start: f64,
    pub t_width: f64,
    pub corrupt_threshold: f64,
    #[serde(default = "default_rebound_fraction")]
    pub rebound_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rebound_duration: Option<f64>,
}

fn default_rebound_fraction() -> f64 {
    0.3
}

impl EmPulseSpec {
    pub fn to_pulse(&self) -> EmPulse {
        EmPulse {
            center: self.center,
            radius: self.radius,
            amplitude: self.amplitude,
            t_start: self.t_start,
            t_width: self.t_width,
            corrupt_threshold: self.corrupt_threshold,
            rebound_fraction: self.rebound_fraction,
            rebound_duration: self.rebound_duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AesSpec {
    /// 128-bit key as 32 hex digits.
    pub key: String,
    /// Defaults to the middle of the centre row.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSpec>,
    pub i_round_peak: f64,
    pub round_duration: f64,
    pub leak_scale: f64,
}

impl Default for AesSpec {
    fn default() -> Self {
        AesSpec {
            key: "0123456789abcdef123456789abcdef0".into(),
            region: None,
            i_round_peak: 0.05,
            round_duration: 1.0 / 24e6,
            leak_scale: 0.12e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HidingSpec {
    pub interval: f64,
    pub drive_io: bool,
    pub io_gain: f64,
}

impl Default for HidingSpec {
    fn default() -> Self {
        HidingSpec { interval: 2e-3, drive_io: true, io_gain: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StimuliSpec {
    pub wasters: Vec<WasterSpec>,
    pub em_pulses: Vec<EmPulseSpec>,
    pub supply_sweep: SupplySweep,
    pub aes: AesSpec,
    pub hiding: HidingSpec,
}

impl Default for StimuliSpec {
    fn default() -> Self {
        StimuliSpec {
            wasters: Vec::new(),
            em_pulses: Vec::new(),
            supply_sweep: SupplySweep { voltages: vec![1.33, 1.3, 1.25, 1.2, 1.15, 1.1, 1.05, 1.0] },
            aes: AesSpec::default(),
            hiding: HidingSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementSpec {
    /// Sensing window `T_arb` (second).
    pub duration: f64,
    pub repetitions: usize,
    /// Reference clock, also the victim clock (hertz).
    pub f_clk: f64,
    /// Relative Gaussian jitter of each counter reading.
    pub jitter: f64,
    /// Sigma of the common supply noise per reading (volt).
    pub supply_noise: f64,
    /// Oscilloscope sample rate (hertz).
    pub sample_rate: f64,
    pub samples_per_trace: usize,
    pub aes_start_sample: usize,
    pub encryption_period: f64,
    /// Sigma of additive trace noise (ampere).
    pub noise_sigma: f64,
    pub fixed_plaintext: String,
}

impl Default for MeasurementSpec {
    fn default() -> Self {
        MeasurementSpec {
            duration: 100e-6,
            repetitions: 1000,
            f_clk: 24e6,
            jitter: 2e-4,
            supply_noise: 0.5e-3,
            sample_rate: 192e6,
            samples_per_trace: 256,
            aes_start_sample: 64,
            encryption_period: 41e-3,
            noise_sigma: 1e-3,
            fixed_plaintext: "ffffffffffffffffffffffffffffffff".into(),
        }
    }
}

/// The one-time waster calibration against the target regression line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSpec {
    /// Defaults to the centre node.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensor: Option<Node>,
    /// Defaults to the 3x3 block around the sensor, clipped to the grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSpec>,
    pub slope: f64,
    pub intercept: f64,
    pub counts: Vec<usize>,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        let t = WasterTarget::default();
        CalibrationSpec { sensor: None, region: None, slope: t.slope, intercept: t.intercept, counts: t.counts }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSpec {
    /// Monitoring interval length (second).
    pub interval: f64,
    /// Monitoring intervals after the baseline phase.
    pub intervals: usize,
    /// Clean intervals used to characterize the baseline.
    pub baseline_intervals: usize,
    pub alarm_k: f64,
    pub sigma_floor_fraction: f64,
}

impl Default for DetectSpec {
    fn default() -> Self {
        let d = DetectorConfig::default();
        DetectSpec {
            interval: 10e-6,
            intervals: 16,
            baseline_intervals: 200,
            alarm_k: d.alarm_k,
            sigma_floor_fraction: d.sigma_floor_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaSpec {
    /// Location of the hiding oscillator; defaults to the centre node.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pro: Option<Node>,
    /// SEL id of the fixed-frequency mode.
    pub fixed_sel: u64,
    pub tvla_traces: usize,
    pub cpa_step: usize,
    pub cpa_limit: usize,
    pub attack_multiple: usize,
    pub filter_multiple: usize,
    pub filter_width: f64,
    pub band: [f64; 2],
}

impl Default for ScaSpec {
    fn default() -> Self {
        let b = HidingBudget::new(10_000);
        ScaSpec {
            pro: None,
            fixed_sel: 0,
            tvla_traces: b.tvla_traces,
            cpa_step: b.cpa_step,
            cpa_limit: b.cpa_limit,
            attack_multiple: b.attack_multiple,
            filter_multiple: b.filter_multiple,
            filter_width: b.filter_width,
            band: [b.band.0, b.band.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSpec {
    pub master: u64,
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec { master: 1 }
    }
}

/// The file as written, with defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floorplan: Option<FloorplanSpec>,
    #[serde(default)]
    pub pro_design: ProDesignSpec,
    #[serde(default)]
    pub stimuli: StimuliSpec,
    #[serde(default)]
    pub measurement: MeasurementSpec,
    #[serde(default)]
    pub calibration: CalibrationSpec,
    #[serde(default)]
    pub detect: DetectSpec,
    #[serde(default)]
    pub sca: ScaSpec,
    #[serde(default)]
    pub seeds: SeedSpec,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))
    }

    /// Canonical text: every field explicit, fixed key order.
    pub fn canonical_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invariant(format!("scenario serialization failed: {e}")))
    }
}

/// A validated scenario with every derived object built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub hash: String,
    pub grid: GridSpec,
    pub floorplan: ChipFloorplan,
    pub design: Arc<ProDesign>,
    pub sensing_sel: SelConfig,
    pub wasters: Vec<PowerWasterBank>,
    pub em_pulses: Vec<EmPulse>,
    pub aes: AesActivity,
    /// Present when some waster bank took its currents from the calibration.
    pub waster_calibration: Option<WasterCalibration>,
    pub waster_target: WasterTarget,
    pub calibration_sensor: Node,
    pub calibration_region: Vec<Node>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_file(ScenarioFile::parse(text)?)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let grid = file.grid.clone();
        grid.validate().map_err(as_validation)?;
        let canonical = resolved_defaults(&file).canonical_text()?;
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));

        let floorplan = match &file.floorplan {
            Some(f) => ChipFloorplan::from_placements(&grid, f.placements.clone())?,
            None => ChipFloorplan::full_grid(grid.rows, grid.cols),
        };

        let d = &file.pro_design;
        let layout = ProDesign {
            cells: d.cells.iter().map(|&n| DelayCellSpec::uncalibrated(n)).collect(),
            t_fixed: 0.0,
            t_inverter_nominal: 0.0,
            counter_width: d.counter_width,
            switch_charge: d.switch_charge,
            voltage_law: d.voltage_law,
        };
        if let Some((i, n)) = d.cells.iter().enumerate().find(|(_, n)| **n < 2 || **n % 2 != 0) {
            return Err(Error::Validation(format!(
                "pro_design.cells[{i}] = {n}: inverter counts must be even and >= 2"
            )));
        }
        let design = calibrate_delays_with(d.f_min, d.f_max, &layout, d.short_path_fraction)?;
        design.validate().map_err(as_validation)?;
        if !(d.variation_sigma >= 0.0) {
            return Err(Error::Validation("pro_design.variation_sigma must be >= 0".into()));
        }
        if d.sensing_sel >> design.n_cells() != 0 {
            return Err(Error::Validation(format!(
                "pro_design.sensing_sel {} needs more than {} cells",
                d.sensing_sel,
                design.n_cells()
            )));
        }
        let sensing_sel = SelConfig::from_id(d.sensing_sel, design.n_cells());

        let c = &file.calibration;
        let calibration_sensor = c.sensor.unwrap_or_else(|| centre(&grid));
        if !grid.contains(calibration_sensor) {
            return Err(Error::Validation(format!(
                "calibration.sensor ({}, {}) outside the grid",
                calibration_sensor.row, calibration_sensor.col
            )));
        }
        let calibration_region = match &c.region {
            Some(r) => r.resolve(&grid, "calibration.region")?,
            None => around(&grid, calibration_sensor),
        };
        let waster_target = WasterTarget { slope: c.slope, intercept: c.intercept, counts: c.counts.clone() };
        // The calibration is only solved when some bank needs it.
        let needs_calibration = file.stimuli.wasters.iter().any(|w| w.i_per_waster.is_none() || w.i_enable.is_none());
        let waster_calibration = if needs_calibration {
            let bank = PowerWasterBank::new(0, calibration_region.clone());
            Some(calibrate_wasters(&grid, &bank, calibration_sensor, &design.voltage_law, &waster_target)?)
        } else {
            None
        };

        let mut wasters = Vec::new();
        for (i, w) in file.stimuli.wasters.iter().enumerate() {
            let region = w.region.resolve(&grid, &format!("stimuli.wasters[{i}].region"))?;
            let cal = waster_calibration.as_ref();
            let bank = PowerWasterBank {
                count: w.count,
                region,
                i_per_waster: w.i_per_waster.or(cal.map(|c| c.i_per_waster)).unwrap_or_default(),
                f_waster: w.f_waster,
                i_enable: w.i_enable.or(cal.map(|c| c.i_enable)).unwrap_or_default(),
                enabled: w.enabled,
            };
            bank.validate(&grid)?;
            wasters.push(bank);
        }

        let mut em_pulses = Vec::new();
        for p in &file.stimuli.em_pulses {
            let pulse = p.to_pulse();
            pulse.validate(&grid)?;
            em_pulses.push(pulse);
        }
        file.stimuli.supply_sweep.validate()?;

        let a = &file.stimuli.aes;
        let aes = AesActivity {
            key: parse_hex_block(&a.key).map_err(as_validation)?,
            region: match &a.region {
                Some(r) => r.resolve(&grid, "stimuli.aes.region")?,
                None => {
                    let c = centre(&grid);
                    crate::floorplan::block(c.row..=c.row, c.col..=grid.cols / 2)
                }
            },
            i_round_peak: a.i_round_peak,
            round_duration: a.round_duration,
            leak_scale: a.leak_scale,
        };
        aes.validate(&grid)?;
        schedule_of(&file).validate()?;

        let m = &file.measurement;
        plan_of(&file).validate().map_err(as_validation)?;
        if !(m.jitter >= 0.0 && m.supply_noise >= 0.0 && m.noise_sigma >= 0.0) {
            return Err(Error::Validation("measurement noise levels must be >= 0".into()));
        }
        parse_hex_block(&m.fixed_plaintext).map_err(as_validation)?;

        let det = &file.detect;
        if !(det.interval > 0.0 && det.baseline_intervals >= 2) {
            return Err(Error::Validation("detect.interval must be > 0 and baseline_intervals >= 2".into()));
        }
        detector_of(&file).validate().map_err(as_validation)?;
        if let Some(p) = file.sca.pro.filter(|p| !grid.contains(*p)) {
            return Err(Error::Validation(format!("sca.pro ({}, {}) outside the grid", p.row, p.col)));
        }

        let scenario = Scenario {
            hash,
            grid,
            floorplan,
            design: Arc::new(design),
            sensing_sel,
            wasters,
            em_pulses,
            aes,
            waster_calibration,
            waster_target,
            calibration_sensor,
            calibration_region,
            file,
        };
        scenario.sca_setup().validate()?;
        Ok(scenario)
    }

    pub fn master_seed(&self) -> u64 {
        self.file.seeds.master
    }

    pub fn plan(&self) -> MeasurementPlan {
        plan_of(&self.file)
    }

    pub fn detector(&self) -> DetectorConfig {
        detector_of(&self.file)
    }

    pub fn supply_sweep(&self) -> &SupplySweep {
        &self.file.stimuli.supply_sweep
    }

    pub fn budget(&self) -> HidingBudget {
        let s = &self.file.sca;
        HidingBudget {
            tvla_traces: s.tvla_traces,
            cpa_step: s.cpa_step,
            cpa_limit: s.cpa_limit,
            attack_multiple: s.attack_multiple,
            filter_multiple: s.filter_multiple,
            filter_width: s.filter_width,
            band: (s.band[0], s.band[1]),
        }
    }

    pub fn sca_setup(&self) -> ScaSetup {
        let m = &self.file.measurement;
        ScaSetup {
            design: self.design.clone(),
            pro_location: self.file.sca.pro.unwrap_or_else(|| Node::new(self.grid.rows / 2, self.grid.cols / 2)),
            v_nominal: self.design.voltage_law.v_nominal,
            aes: self.aes.clone(),
            schedule: schedule_of(&self.file),
            f_clk: m.f_clk,
            sample_rate: m.sample_rate,
            samples_per_trace: m.samples_per_trace,
            aes_start_sample: m.aes_start_sample,
            encryption_period: m.encryption_period,
            noise_sigma: m.noise_sigma,
            fixed_plaintext: parse_hex_block(&m.fixed_plaintext).expect("validated at load"),
            fixed_sel_id: self.file.sca.fixed_sel,
        }
    }

    pub fn fixed_plaintext(&self) -> Block {
        parse_hex_block(&self.file.measurement.fixed_plaintext).expect("validated at load")
    }

    /// Runs the waster calibration for this scenario's target and region.
    pub fn calibrate_wasters(&self) -> Result<WasterCalibration> {
        let bank = PowerWasterBank::new(0, self.calibration_region.clone());
        calibrate_wasters(&self.grid, &bank, self.calibration_sensor, &self.design.voltage_law, &self.waster_target)
    }
}

/// `file` with every grid-relative default written out, so that spelling a
/// default explicitly does not change the hash.
fn resolved_defaults(file: &ScenarioFile) -> ScenarioFile {
    let grid = &file.grid;
    let mut f = file.clone();
    f.floorplan
        .get_or_insert_with(|| FloorplanSpec { placements: ChipFloorplan::full_grid(grid.rows, grid.cols).placements });
    let c = centre(grid);
    f.stimuli.aes.region.get_or_insert_with(|| RegionSpec::block([c.row, c.row], [c.col, grid.cols / 2]));
    let sensor = *f.calibration.sensor.get_or_insert(c);
    f.calibration.region.get_or_insert_with(|| {
        RegionSpec::block(
            [sensor.row.saturating_sub(1), (sensor.row + 1).min(grid.rows - 1)],
            [sensor.col.saturating_sub(1), (sensor.col + 1).min(grid.cols - 1)],
        )
    });
    f.sca.pro.get_or_insert(Node::new(grid.rows / 2, grid.cols / 2));
    f
}

/// Middle row, left-of-centre column.
fn centre(grid: &GridSpec) -> Node {
    Node::new(grid.rows / 2, (grid.cols - 1) / 2)
}

/// The 3x3 block around `n`, clipped to the grid.
fn around(grid: &GridSpec, n: Node) -> Vec<Node> {
    crate::floorplan::block(
        n.row.saturating_sub(1)..=(n.row + 1).min(grid.rows - 1),
        n.col.saturating_sub(1)..=(n.col + 1).min(grid.cols - 1),
    )
}

fn as_validation(e: Error) -> Error {
    match e {
        Error::Input(m) => Error::Validation(m),
        other => other,
    }
}

fn plan_of(file: &ScenarioFile) -> MeasurementPlan {
    let m = &file.measurement;
    MeasurementPlan { duration: m.duration, repetitions: m.repetitions, seed: file.seeds.master, f_clk: m.f_clk }
}

fn detector_of(file: &ScenarioFile) -> DetectorConfig {
    DetectorConfig { alarm_k: file.detect.alarm_k, sigma_floor_fraction: file.detect.sigma_floor_fraction }
}

fn schedule_of(file: &ScenarioFile) -> HidingSchedule {
    let h = &file.stimuli.hiding;
    HidingSchedule { interval: h.interval, seed: file.seeds.master, drive_io: h.drive_io, io_gain: h.io_gain }
}
