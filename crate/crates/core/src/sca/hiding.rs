// SPDX-License-Identifier: Apache-2.0

//! Comparative hiding evaluation across the three oscillator modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pro::{check_frequency_coverage, CoverageReport};

use super::cpa::{cpa_attack, traces_to_recovery};
use super::spectrum::{bandstop_filter, power_spectrum, Spectrum};
use super::tvla::tvla;
use super::{alias_frequency, synthesize_traces, ScaSetup, TraceMode, TraceSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HidingBudget {
    /// Traces per mode for the fixed-vs-random test and the spectrum.
    pub tvla_traces: usize,
    /// Granularity of the trace-count search for key recovery.
    #[serde(default = "HidingBudget::default_cpa_step")]
    pub cpa_step: usize,
    /// Largest trace count tried when searching for N0.
    #[serde(default = "HidingBudget::default_cpa_limit")]
    pub cpa_limit: usize,
    /// Hidden modes are attacked with this multiple of N0.
    #[serde(default = "HidingBudget::default_attack_multiple")]
    pub attack_multiple: usize,
    /// Filtered fixed-frequency traces are attacked with this multiple of N0.
    #[serde(default = "HidingBudget::default_filter_multiple")]
    pub filter_multiple: usize,
    #[serde(default = "HidingBudget::default_filter_width")]
    pub filter_width: f64,
    #[serde(default = "HidingBudget::default_band")]
    pub band: (f64, f64),
}

impl HidingBudget {
    fn default_cpa_step() -> usize {
        50
    }
    fn default_cpa_limit() -> usize {
        5000
    }
    fn default_attack_multiple() -> usize {
        10
    }
    fn default_filter_multiple() -> usize {
        2
    }
    fn default_filter_width() -> f64 {
        30e6
    }
    fn default_band() -> (f64, f64) {
        (22e6, 123.44e6)
    }

    pub fn new(tvla_traces: usize) -> Self {
        HidingBudget {
            tvla_traces,
            cpa_step: Self::default_cpa_step(),
            cpa_limit: Self::default_cpa_limit(),
            attack_multiple: Self::default_attack_multiple(),
            filter_multiple: Self::default_filter_multiple(),
            filter_width: Self::default_filter_width(),
            band: Self::default_band(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tvla_traces == 0 || self.cpa_limit == 0 {
            return Err(Error::input("hiding evaluation needs a non-zero trace budget"));
        }
        if self.cpa_step == 0 || self.attack_multiple == 0 || self.filter_multiple == 0 {
            return Err(Error::input("cpa_step and attack multiples must be >= 1"));
        }
        if !(self.filter_width > 0.0 && self.band.0 < self.band.1) {
            return Err(Error::input("filter width must be > 0 and the band non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModeReport {
    pub mode: String,
    pub seed: u64,
    pub tvla_traces: usize,
    pub max_abs_t: f64,
    pub tvla_leaks: bool,
    /// Traces recovering the full key (pro-off only).
    pub n0: Option<usize>,
    pub cpa_traces: Option<usize>,
    pub cpa_correct_bytes: Option<usize>,
    pub cpa_full_recovery: Option<bool>,
    /// Strongest non-clock spectral bin (hertz).
    pub peak_hz: Option<f64>,
    pub band_energy: f64,
    pub band_max_bin_fraction: f64,
    pub filter_center_hz: Option<f64>,
    pub filter_traces: Option<usize>,
    pub filtered_correct_bytes: Option<usize>,
    pub filtered_full_recovery: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HidingReport {
    pub seed: u64,
    pub modes: Vec<ModeReport>,
    pub coverage: CoverageReport,
    pub f_clk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HidingOutcome {
    pub report: HidingReport,
    /// The labelled trace sets used for the fixed-vs-random test, per mode.
    pub tvla_sets: Vec<(String, TraceSet)>,
}

/// Clock-harmonic guard, in bins, when looking for the dominant peak.
pub const PEAK_GUARD_BINS: usize = 2;

fn spectral_summary(setup: &ScaSetup, sp: &Spectrum, band: (f64, f64)) -> (Option<f64>, f64, f64) {
    let peak = sp.dominant_peak(setup.f_clk, setup.sample_rate, PEAK_GUARD_BINS).map(|k| sp.bin_frequencies[k]);
    let bins = sp.band_bins(band.0, band.1, setup.sample_rate);
    (peak, sp.band_energy(&bins), sp.max_bin_fraction(&bins))
}

/// Centre of a stop band of `width` around `f`, shifted to fit below Nyquist.
pub fn fit_stop_band(f: f64, width: f64, sample_rate: f64) -> f64 {
    let nyquist = sample_rate / 2.0;
    let margin = 1e-6 * sample_rate;
    f.clamp(width / 2.0, nyquist - width / 2.0 - margin)
}

/// synthesize -> TVLA -> spectrum -> CPA -> band-stop attack, per mode.
pub fn evaluate_hiding(setup: &ScaSetup, budget: &HidingBudget, seed: u64) -> Result<HidingOutcome> {
    setup.validate()?;
    budget.validate()?;
    let key = setup.aes.key;
    let modes = [TraceMode::ProOff, TraceMode::ProFixed(setup.fixed_sel()), TraceMode::ProRandom];
    let mut reports = Vec::new();
    let mut tvla_sets = Vec::new();
    for mode in &modes {
        let set = synthesize_traces(setup, budget.tvla_traces, mode, true, seed)?;
        let t = tvla(&set)?;
        let sp = power_spectrum(&set, true)?;
        let (peak_hz, band_energy, band_max_bin_fraction) = spectral_summary(setup, &sp, budget.band);
        reports.push(ModeReport {
            mode: mode.name().to_string(),
            seed,
            tvla_traces: budget.tvla_traces,
            max_abs_t: t.max_abs_t,
            tvla_leaks: t.leaks(),
            peak_hz,
            band_energy,
            band_max_bin_fraction,
            ..ModeReport::default()
        });
        tvla_sets.push((mode.name().to_string(), set));
    }

    let off = synthesize_traces(setup, budget.cpa_limit, &TraceMode::ProOff, false, seed)?;
    let n0 = traces_to_recovery(&off, &key, budget.cpa_step, budget.cpa_limit)?;
    reports[0].n0 = n0;
    if let Some(n0) = n0 {
        reports[0].cpa_traces = Some(n0);
        reports[0].cpa_correct_bytes = Some(16);
        reports[0].cpa_full_recovery = Some(true);
        let attack_n = budget.attack_multiple * n0;
        for (i, mode) in modes.iter().enumerate().skip(1) {
            let set = synthesize_traces(setup, attack_n, mode, false, seed)?;
            let r = cpa_attack(&set, Some(&key))?;
            let rep = &mut reports[i];
            rep.cpa_traces = Some(attack_n);
            rep.cpa_correct_bytes = Some(r.correct_key_bytes(&key));
            rep.cpa_full_recovery = Some(r.full_recovery(&key));
            let (center, n_filter) = match mode {
                TraceMode::ProFixed(sel) => {
                    let (f, _) = setup.pro_drive(sel)?;
                    (alias_frequency(f, setup.sample_rate), budget.filter_multiple * n0)
                }
                _ => match rep.peak_hz {
                    Some(p) => (p, attack_n),
                    None => continue,
                },
            };
            let center = fit_stop_band(center, budget.filter_width, setup.sample_rate);
            let filtered = bandstop_filter(&set.truncated(n_filter), center, budget.filter_width)?;
            let r = cpa_attack(&filtered, Some(&key))?;
            rep.filter_center_hz = Some(center);
            rep.filter_traces = Some(n_filter);
            rep.filtered_correct_bytes = Some(r.correct_key_bytes(&key));
            rep.filtered_full_recovery = Some(r.full_recovery(&key));
        }
    }
    Ok(HidingOutcome {
        report: HidingReport {
            seed,
            modes: reports,
            coverage: check_frequency_coverage(setup.f_clk, &setup.design),
            f_clk: setup.f_clk,
        },
        tvla_sets,
    })
}
