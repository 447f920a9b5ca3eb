// SPDX-License-Identifier: Apache-2.0

//! One-sided power spectra and band-stop filtering of trace sets.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

use super::{alias_frequency, TraceSet};

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bin_frequencies: Vec<f64>,
    /// Squared DFT magnitude per bin.
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.bin_frequencies.get(1).copied().unwrap_or(0.0)
    }

    /// Bins whose frequency, or any alias of it at `sample_rate`, lies in `[lo, hi]`.
    pub fn band_bins(&self, lo: f64, hi: f64, sample_rate: f64) -> Vec<usize> {
        (0..self.bin_frequencies.len())
            .filter(|&k| aliases_into(self.bin_frequencies[k], lo, hi, sample_rate))
            .collect()
    }

    pub fn band_energy(&self, bins: &[usize]) -> f64 {
        bins.iter().map(|&k| self.magnitudes[k]).sum()
    }

    /// Largest single-bin share of the band energy.
    pub fn max_bin_fraction(&self, bins: &[usize]) -> f64 {
        let total = self.band_energy(bins);
        if total <= 0.0 {
            return 0.0;
        }
        bins.iter().map(|&k| self.magnitudes[k]).fold(0.0, f64::max) / total
    }

    /// Strongest bin other than DC and bins within `guard` bins of a
    /// harmonic of `f_clk` (after folding).
    pub fn dominant_peak(&self, f_clk: f64, sample_rate: f64, guard: usize) -> Option<usize> {
        let width = self.bin_width();
        let harmonics: Vec<f64> = (1..)
            .map(|h| h as f64 * f_clk)
            .take_while(|&f| f <= sample_rate * 4.0)
            .map(|f| alias_frequency(f, sample_rate))
            .collect();
        (1..self.magnitudes.len())
            .filter(|&k| {
                let f = self.bin_frequencies[k];
                harmonics.iter().all(|&h| (f - h).abs() > guard as f64 * width + 1e-9 * width)
            })
            .max_by(|&a, &b| self.magnitudes[a].total_cmp(&self.magnitudes[b]).then(b.cmp(&a)))
    }
}

/// True if some alias of a tone at `f` (sampled at `fs`) lies in `[lo, hi]`.
fn aliases_into(f: f64, lo: f64, hi: f64, fs: f64) -> bool {
    let max_fold = (hi / fs).ceil() as i64 + 1;
    (0..=max_fold).any(|m| {
        let base = m as f64 * fs;
        [base + f, base - f].iter().any(|&a| a >= lo && a <= hi)
    })
}

fn forward(samples: &[f32], fft: &dyn rustfft::Fft<f64>) -> Vec<Complex<f64>> {
    let mean = samples.iter().map(|&x| f64::from(x)).sum::<f64>() / samples.len() as f64;
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(f64::from(x) - mean, 0.0)).collect();
    fft.process(&mut buf);
    buf
}

/// One-sided power spectrum of mean-removed traces: averaged over all traces
/// when `averaging` is set, otherwise of the first trace alone.
pub fn power_spectrum(traces: &TraceSet, averaging: bool) -> Result<Spectrum> {
    let s = traces.samples_per_trace;
    if s < 2 {
        return Err(Error::input("power spectrum needs at least 2 samples per trace"));
    }
    if traces.is_empty() {
        return Err(Error::input("power spectrum needs at least one trace"));
    }
    let bins = s / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(s);
    let count = if averaging { traces.len() } else { 1 };
    let sums = (0..count)
        .into_par_iter()
        .map(|i| {
            let x = forward(traces.trace(i), fft.as_ref());
            x[..bins].iter().map(|c| c.norm_sqr()).collect::<Vec<f64>>()
        })
        .reduce(
            || vec![0.0; bins],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let magnitudes = sums.into_iter().map(|v| v / count as f64).collect();
    let bin_frequencies = (0..bins).map(|k| k as f64 * traces.sample_rate / s as f64).collect();
    Ok(Spectrum { bin_frequencies, magnitudes })
}

/// Zeroes DFT bins with frequency in `[f_center - width/2, f_center + width/2]`
/// (and their negative-frequency mirrors) and transforms back.
pub fn bandstop_filter(traces: &TraceSet, f_center: f64, width: f64) -> Result<TraceSet> {
    let nyquist = traces.sample_rate / 2.0;
    let (lo, hi) = (f_center - width / 2.0, f_center + width / 2.0);
    if !(width >= 0.0 && lo >= 0.0 && hi < nyquist) {
        return Err(Error::input(format!("stop band [{lo}, {hi}] Hz must lie inside [0, {nyquist}) Hz")));
    }
    let s = traces.samples_per_trace;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(s);
    let inv = planner.plan_fft_inverse(s);
    let df = traces.sample_rate / s as f64;
    let stop: Vec<bool> = (0..s)
        .map(|k| {
            let f = k.min(s - k) as f64 * df;
            f >= lo && f <= hi
        })
        .collect();
    let mut out = traces.clone();
    out.traces.par_chunks_mut(s).for_each(|row| {
        let mut buf: Vec<Complex<f64>> = row.iter().map(|&x| Complex::new(f64::from(x), 0.0)).collect();
        fwd.process(&mut buf);
        for (c, &z) in buf.iter_mut().zip(&stop) {
            if z {
                *c = Complex::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        for (x, c) in row.iter_mut().zip(&buf) {
            *x = (c.re / s as f64) as f32;
        }
    });
    out.notes.push(format!("bandstop center={f_center} width={width}"));
    Ok(out)
}
