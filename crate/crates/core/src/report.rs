// SPDX-License-Identifier: Apache-2.0

//! CSV report rows. Each type has a fixed header; floats are written in
//! shortest round-trip form, so `parse(emit(rows)) == rows`.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detect::{AnomalyEvent, AnomalyKind, LocalizationReport};
use crate::error::{Error, Result};
use crate::floorplan::ChipFloorplan;
use crate::pro::{sel_assignments_by_count, ProDesign, SelConfig};
use crate::sca::hiding::HidingReport;
use crate::sim::{DropRatioRun, LinearityRun, SweepRow};

pub trait CsvRecord: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

/// Writes the header row, then every record. The header is written even
/// when there are no records.
pub fn write_csv<T: CsvRecord, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(T::HEADER).map_err(csv_err)?;
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn to_csv_string<T: CsvRecord>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Invariant(e.to_string()))
}

/// Parses a report, checking the header matches `T` exactly.
pub fn read_csv<T: CsvRecord, R: Read>(r: R) -> Result<Vec<T>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(T::HEADER.iter().copied()) {
        return Err(Error::input(format!("unexpected CSV header {:?}, want {:?}", header, T::HEADER)));
    }
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::input(format!("CSV error: {other:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub supply_voltage: f64,
    pub sel_config_id: u64,
    pub mean_frequency: f64,
    pub sigma: f64,
}

impl CsvRecord for SweepRecord {
    const HEADER: &'static [&'static str] = &["supply_voltage", "sel_config_id", "mean_frequency", "sigma"];
}

impl From<&SweepRow> for SweepRecord {
    fn from(r: &SweepRow) -> Self {
        SweepRecord {
            supply_voltage: r.supply_voltage,
            sel_config_id: r.sel_config_id,
            mean_frequency: r.mean_frequency,
            sigma: r.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropRatioRecord {
    pub pro_id: usize,
    pub row: usize,
    pub col: usize,
    pub f_off: f64,
    pub f_on: f64,
    pub drop_ratio: f64,
}

impl CsvRecord for DropRatioRecord {
    const HEADER: &'static [&'static str] = &["pro_id", "row", "col", "f_off", "f_on", "drop_ratio"];
}

pub fn drop_ratio_records(run: &DropRatioRun, floorplan: &ChipFloorplan) -> Vec<DropRatioRecord> {
    floorplan
        .placements
        .iter()
        .filter_map(|p| {
            Some(DropRatioRecord {
                pro_id: p.id,
                row: p.row,
                col: p.col,
                f_off: *run.f_off.get(&p.id)?,
                f_on: *run.f_on.get(&p.id)?,
                drop_ratio: *run.matrix.ratios.get(&p.id)?,
            })
        })
        .collect()
}

/// One row per aggregate: `row` scopes carry the row index, `left` and
/// `right` the region means, `inferred` the decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub scope: String,
    pub index: Option<usize>,
    pub mean_drop_ratio: Option<f64>,
    pub inferred_row: Option<usize>,
    pub inferred_region: Option<String>,
    pub confidence: Option<f64>,
}

impl CsvRecord for LocalizationRecord {
    const HEADER: &'static [&'static str] =
        &["scope", "index", "mean_drop_ratio", "inferred_row", "inferred_region", "confidence"];
}

pub fn localization_records(report: &LocalizationReport) -> Vec<LocalizationRecord> {
    let blank = |scope: &str| LocalizationRecord {
        scope: scope.into(),
        index: None,
        mean_drop_ratio: None,
        inferred_row: None,
        inferred_region: None,
        confidence: None,
    };
    let mut out: Vec<LocalizationRecord> = report
        .row_means
        .iter()
        .enumerate()
        .map(|(i, m)| LocalizationRecord { index: Some(i), mean_drop_ratio: *m, ..blank("row") })
        .collect();
    out.push(LocalizationRecord { mean_drop_ratio: Some(report.left_mean), ..blank("left") });
    out.push(LocalizationRecord { mean_drop_ratio: Some(report.right_mean), ..blank("right") });
    out.push(LocalizationRecord {
        inferred_row: Some(report.inferred_row),
        inferred_region: Some(report.inferred_region.as_str().into()),
        confidence: Some(report.confidence),
        ..blank("inferred")
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub interval_index: usize,
    pub pro_id: usize,
    pub kind: AnomalyKind,
    pub observed: f64,
    pub expected_low: f64,
    pub expected_high: f64,
}

impl CsvRecord for AnomalyRecord {
    const HEADER: &'static [&'static str] =
        &["interval_index", "pro_id", "kind", "observed", "expected_low", "expected_high"];
}

impl From<&AnomalyEvent> for AnomalyRecord {
    fn from(e: &AnomalyEvent) -> Self {
        AnomalyRecord {
            interval_index: e.interval_index,
            pro_id: e.pro_id,
            kind: e.kind,
            observed: e.observed,
            expected_low: e.expected_low,
            expected_high: e.expected_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HidingRecord {
    pub mode: String,
    pub seed: u64,
    pub tvla_traces: usize,
    pub max_abs_t: f64,
    pub tvla_leaks: bool,
    pub n0: Option<usize>,
    pub cpa_traces: Option<usize>,
    pub cpa_correct_bytes: Option<usize>,
    pub cpa_full_recovery: Option<bool>,
    pub peak_hz: Option<f64>,
    pub band_energy: f64,
    pub band_max_bin_fraction: f64,
    pub filter_center_hz: Option<f64>,
    pub filter_traces: Option<usize>,
    pub filtered_correct_bytes: Option<usize>,
    pub filtered_full_recovery: Option<bool>,
    pub f_clk: f64,
    pub coverage_ok: bool,
    pub coverage_multiple: f64,
}

impl CsvRecord for HidingRecord {
    const HEADER: &'static [&'static str] = &[
        "mode",
        "seed",
        "tvla_traces",
        "max_abs_t",
        "tvla_leaks",
        "n0",
        "cpa_traces",
        "cpa_correct_bytes",
        "cpa_full_recovery",
        "peak_hz",
        "band_energy",
        "band_max_bin_fraction",
        "filter_center_hz",
        "filter_traces",
        "filtered_correct_bytes",
        "filtered_full_recovery",
        "f_clk",
        "coverage_ok",
        "coverage_multiple",
    ];
}

pub fn hiding_records(report: &HidingReport) -> Vec<HidingRecord> {
    report
        .modes
        .iter()
        .map(|m| HidingRecord {
            mode: m.mode.clone(),
            seed: m.seed,
            tvla_traces: m.tvla_traces,
            max_abs_t: m.max_abs_t,
            tvla_leaks: m.tvla_leaks,
            n0: m.n0,
            cpa_traces: m.cpa_traces,
            cpa_correct_bytes: m.cpa_correct_bytes,
            cpa_full_recovery: m.cpa_full_recovery,
            peak_hz: m.peak_hz,
            band_energy: m.band_energy,
            band_max_bin_fraction: m.band_max_bin_fraction,
            filter_center_hz: m.filter_center_hz,
            filter_traces: m.filter_traces,
            filtered_correct_bytes: m.filtered_correct_bytes,
            filtered_full_recovery: m.filtered_full_recovery,
            f_clk: report.f_clk,
            coverage_ok: report.coverage.covered,
            coverage_multiple: report.coverage.multiple,
        })
        .collect()
}

/// One achievable frequency configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub active_inverters: u32,
    pub sel_assignments: usize,
    /// Lowest SEL id reaching this count.
    pub sel_config_id: u64,
    pub frequency: f64,
}

impl CsvRecord for ConfigRecord {
    const HEADER: &'static [&'static str] = &["active_inverters", "sel_assignments", "sel_config_id", "frequency"];
}

pub fn config_records(design: &ProDesign) -> Result<Vec<ConfigRecord>> {
    sel_assignments_by_count(design)
        .into_iter()
        .map(|(count, ids)| {
            let id = ids[0];
            Ok(ConfigRecord {
                active_inverters: count,
                sel_assignments: ids.len(),
                sel_config_id: id,
                frequency: design.nominal_frequency(&SelConfig::from_id(id, design.n_cells()))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearityRecord {
    pub waster_count: usize,
    pub drop_ratio: f64,
}

impl CsvRecord for LinearityRecord {
    const HEADER: &'static [&'static str] = &["waster_count", "drop_ratio"];
}

pub fn linearity_records(run: &LinearityRun) -> Vec<LinearityRecord> {
    run.points.iter().map(|&(waster_count, drop_ratio)| LinearityRecord { waster_count, drop_ratio }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_of<T: CsvRecord>(sample: &T) -> Vec<String> {
        let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
        w.serialize(sample).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        text.lines().next().unwrap().split(',').map(String::from).collect()
    }

    #[test]
    fn headers_match_field_names() {
        let s = SweepRecord { supply_voltage: 1.0, sel_config_id: 0, mean_frequency: 1.0, sigma: 0.0 };
        assert_eq!(header_of(&s), SweepRecord::HEADER);
        let a = AnomalyRecord {
            interval_index: 0,
            pro_id: 0,
            kind: AnomalyKind::EmShift,
            observed: 0.0,
            expected_low: 0.0,
            expected_high: 0.0,
        };
        assert_eq!(header_of(&a), AnomalyRecord::HEADER);
        let d = DropRatioRecord { pro_id: 0, row: 0, col: 0, f_off: 1.0, f_on: 1.0, drop_ratio: 0.0 };
        assert_eq!(header_of(&d), DropRatioRecord::HEADER);
        let c = ConfigRecord { active_inverters: 1, sel_assignments: 1, sel_config_id: 0, frequency: 1.0 };
        assert_eq!(header_of(&c), ConfigRecord::HEADER);
        let l = LinearityRecord { waster_count: 1, drop_ratio: 0.1 };
        assert_eq!(header_of(&l), LinearityRecord::HEADER);
    }

    #[test]
    fn empty_report_keeps_header() {
        let text = to_csv_string::<AnomalyRecord>(&[]).unwrap();
        assert_eq!(text, "interval_index,pro_id,kind,observed,expected_low,expected_high\n");
        assert!(read_csv::<AnomalyRecord, _>(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn anomaly_round_trip_is_exact() {
        let rows = vec![
            AnomalyRecord {
                interval_index: 7,
                pro_id: 17,
                kind: AnomalyKind::CounterCorrupt,
                observed: 4.08e13,
                expected_low: 123_380_000.000_000_01,
                expected_high: 0.1 + 0.2,
            },
            AnomalyRecord {
                interval_index: 8,
                pro_id: 3,
                kind: AnomalyKind::PowerAnomaly,
                observed: f64::MIN_POSITIVE,
                expected_low: -0.0,
                expected_high: 1e300,
            },
        ];
        let text = to_csv_string(&rows).unwrap();
        assert!(text.contains("counter-corrupt"));
        assert_eq!(read_csv::<AnomalyRecord, _>(text.as_bytes()).unwrap(), rows);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_csv::<SweepRecord, _>("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn reference_design_has_fifteen_configs() {
        let rows = config_records(&ProDesign::reference()).unwrap();
        assert_eq!(rows.len(), 15);
        assert_eq!(rows.iter().map(|r| r.sel_assignments).sum::<usize>(), 64);
        assert!((rows[0].frequency / 123.44e6 - 1.0).abs() < 1e-12);
    }
}
