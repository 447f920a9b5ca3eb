// SPDX-License-Identifier: Apache-2.0

//! Defender pipeline: baseline characterization, frequency drop ratios,
//! row/region fault localization and per-interval anomaly detection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floorplan::{ChipFloorplan, Region};
use crate::pro::{frequency_from_counters, CounterReading, ProDesign};

/// Repeated readings of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProReadings {
    pub pro_id: usize,
    pub readings: Vec<CounterReading>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub alarm_k: f64,
    /// Lower bound on sigma as a fraction of the baseline mean.
    pub sigma_floor_fraction: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { alarm_k: 6.0, sigma_floor_fraction: 5e-4 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alarm_k > 0.0 && self.sigma_floor_fraction >= 0.0) {
            return Err(Error::Validation(format!(
                "detector needs alarm_k > 0 and sigma_floor_fraction >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorStats {
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineProfile {
    pub stats: BTreeMap<usize, SensorStats>,
    pub config: DetectorConfig,
}

impl BaselineProfile {
    /// Half-width of the normal band for a sensor.
    pub fn band(&self, s: &SensorStats) -> f64 {
        self.config.alarm_k * s.sigma.max(self.config.sigma_floor_fraction * s.mean)
    }

    pub fn expected_range(&self, pro_id: usize) -> Option<(f64, f64)> {
        self.stats.get(&pro_id).map(|s| (s.mean - self.band(s), s.mean + self.band(s)))
    }
}

/// Sample mean and `n - 1` standard deviation, two-pass.
pub fn mean_and_sigma(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Per-sensor mean and standard deviation of reconstructed frequencies.
pub fn characterize(readings: &[ProReadings], config: DetectorConfig) -> Result<BaselineProfile> {
    config.validate()?;
    let mut stats = BTreeMap::new();
    for pr in readings {
        if pr.readings.len() < 2 {
            return Err(Error::input(format!(
                "PRO {} has {} baseline readings; need at least 2",
                pr.pro_id,
                pr.readings.len()
            )));
        }
        if pr.readings.iter().any(|r| r.corrupted || r.stalled) {
            return Err(Error::Calibration(format!(
                "baseline for PRO {} contains corrupted or stalled readings",
                pr.pro_id
            )));
        }
        let freqs = pr.readings.iter().map(|r| frequency_from_counters(r).map(|f| f.hz)).collect::<Result<Vec<_>>>()?;
        let (mean, sigma) = mean_and_sigma(&freqs);
        if !(mean > 0.0) {
            return Err(Error::Calibration(format!("PRO {} has non-positive baseline mean", pr.pro_id)));
        }
        if stats.insert(pr.pro_id, SensorStats { mean, sigma }).is_some() {
            return Err(Error::input(format!("duplicate baseline readings for PRO {}", pr.pro_id)));
        }
    }
    Ok(BaselineProfile { stats, config })
}

/// `(f_off - f_on) / f_off`.
pub fn drop_ratio(f_off: f64, f_on: f64) -> Result<f64> {
    if !(f_off > 0.0) {
        return Err(Error::input(format!("f_off must be > 0, got {f_off}")));
    }
    Ok((f_off - f_on) / f_off)
}

/// Drop ratio per sensor id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropRatioMatrix {
    pub ratios: BTreeMap<usize, f64>,
}

impl DropRatioMatrix {
    pub fn scaled(&self, k: f64) -> Self {
        DropRatioMatrix { ratios: self.ratios.iter().map(|(&id, &r)| (id, r * k)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    /// Mean drop ratio per floorplan row; `None` for rows without sensors.
    pub row_means: Vec<Option<f64>>,
    pub left_mean: f64,
    pub right_mean: f64,
    pub inferred_row: usize,
    pub inferred_region: Region,
    /// Best row mean minus the runner-up.
    pub confidence: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Row with the largest mean drop and the half with the larger mean.
/// Ties go to the lower row and to the left half.
pub fn locate_fault(matrix: &DropRatioMatrix, floorplan: &ChipFloorplan) -> Result<LocalizationReport> {
    let missing: Vec<usize> =
        floorplan.placements.iter().map(|p| p.id).filter(|id| !matrix.ratios.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::input(format!("drop-ratio matrix is missing PROs {missing:?}")));
    }
    let mut per_row = vec![Vec::new(); floorplan.rows];
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for p in &floorplan.placements {
        let r = matrix.ratios[&p.id];
        if !r.is_finite() {
            return Err(Error::input(format!("drop ratio of PRO {} is not finite", p.id)));
        }
        per_row[p.row].push(r);
        match floorplan.region_of(p.col) {
            Some(Region::Left) => left.push(r),
            Some(Region::Right) => right.push(r),
            None => {}
        }
    }
    let row_means: Vec<Option<f64>> = per_row.iter().map(|v| (!v.is_empty()).then(|| mean(v))).collect();
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::NEG_INFINITY;
    for (row, m) in row_means.iter().enumerate() {
        let Some(m) = *m else { continue };
        match best {
            Some((_, b)) if m <= b => second = second.max(m),
            _ => {
                if let Some((_, b)) = best {
                    second = second.max(b);
                }
                best = Some((row, m));
            }
        }
    }
    let (inferred_row, best_mean) = best.ok_or_else(|| Error::input("floorplan has no sensors"))?;
    let confidence = if second.is_finite() { best_mean - second } else { 0.0 };
    let left_mean = mean(&left);
    let right_mean = mean(&right);
    let inferred_region = if right_mean > left_mean { Region::Right } else { Region::Left };
    Ok(LocalizationReport { row_means, left_mean, right_mean, inferred_row, inferred_region, confidence })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    PowerAnomaly,
    EmShift,
    CounterCorrupt,
    Stall,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::PowerAnomaly => "power-anomaly",
            AnomalyKind::EmShift => "em-shift",
            AnomalyKind::CounterCorrupt => "counter-corrupt",
            AnomalyKind::Stall => "stall",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power-anomaly" => Ok(AnomalyKind::PowerAnomaly),
            "em-shift" => Ok(AnomalyKind::EmShift),
            "counter-corrupt" => Ok(AnomalyKind::CounterCorrupt),
            "stall" => Ok(AnomalyKind::Stall),
            other => Err(Error::input(format!("unknown anomaly kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyEvent {
    pub pro_id: usize,
    pub interval_index: usize,
    pub kind: AnomalyKind,
    pub observed: f64,
    pub expected_low: f64,
    pub expected_high: f64,
}

/// All sensor readings taken at the end of one monitoring interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalReadings {
    pub interval_index: usize,
    pub readings: Vec<(usize, CounterReading)>,
}

/// Readings implying this multiple of the fastest configuration are corrupt.
pub const CORRUPT_MULTIPLE: f64 = 10.0;

/// Classifies one reading; at most one event per reading.
///
/// Corruption is checked first so upset counters never feed the shift
/// tests; then stalls, then upward (EM) and downward (power) deviations.
pub fn classify(
    reading: &CounterReading,
    stats: &SensorStats,
    profile: &BaselineProfile,
    f_max: f64,
) -> Option<(AnomalyKind, f64)> {
    let observed = match frequency_from_counters(reading) {
        Ok(f) if f.corrupt => return Some((AnomalyKind::CounterCorrupt, f.hz)),
        Ok(f) => f.hz,
        Err(_) => return Some((AnomalyKind::CounterCorrupt, f64::NAN)),
    };
    if observed >= CORRUPT_MULTIPLE * f_max {
        return Some((AnomalyKind::CounterCorrupt, observed));
    }
    if reading.stalled {
        return Some((AnomalyKind::Stall, observed));
    }
    let band = profile.band(stats);
    if observed - stats.mean > band {
        Some((AnomalyKind::EmShift, observed))
    } else if stats.mean - observed > band {
        Some((AnomalyKind::PowerAnomaly, observed))
    } else {
        None
    }
}

pub fn detect_anomalies(
    intervals: &[IntervalReadings],
    profile: &BaselineProfile,
    design: &ProDesign,
) -> Result<Vec<AnomalyEvent>> {
    let f_max = design.max_frequency();
    let mut events = Vec::new();
    for iv in intervals {
        for (pro_id, reading) in &iv.readings {
            let stats =
                profile.stats.get(pro_id).ok_or_else(|| Error::input(format!("no baseline for PRO {pro_id}")))?;
            if let Some((kind, observed)) = classify(reading, stats, profile, f_max) {
                let band = profile.band(stats);
                events.push(AnomalyEvent {
                    pro_id: *pro_id,
                    interval_index: iv.interval_index,
                    kind,
                    observed,
                    expected_low: stats.mean - band,
                    expected_high: stats.mean + band,
                });
            }
        }
    }
    Ok(events)
}
