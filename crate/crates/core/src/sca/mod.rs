// SPDX-License-Identifier: Apache-2.0

//! Power-trace synthesis and the side-channel evaluation suite.

pub mod cpa;
pub mod hiding;
pub mod spectrum;
pub mod traceio;
pub mod tvla;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pdn::Node;
use crate::pro::{ProDesign, ProInstance, SelConfig};
use crate::rng;
use crate::stimuli::aes::{self, Block};
use crate::stimuli::{pro_self_current, random_block, sel_for_interval, AesActivity, HidingSchedule};

pub use cpa::{cpa_attack, CpaAccumulator, CpaResult};
pub use hiding::{evaluate_hiding, HidingBudget, HidingReport, ModeReport};
pub use spectrum::{bandstop_filter, power_spectrum, Spectrum};
pub use tvla::{tvla, welch_t, TvlaResult, TVLA_THRESHOLD};

/// Class label of a fixed-plaintext trace.
pub const CLASS_FIXED: u8 = 0;
pub const CLASS_RANDOM: u8 = 1;

/// Synthesized traces, stored row-major as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub sample_rate: f64,
    pub samples_per_trace: usize,
    pub traces: Vec<f32>,
    pub plaintexts: Vec<Block>,
    pub ciphertexts: Vec<Block>,
    pub class_labels: Option<Vec<u8>>,
    pub seed: u64,
    /// Warnings and processing history.
    pub notes: Vec<String>,
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.plaintexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plaintexts.is_empty()
    }

    pub fn trace(&self, i: usize) -> &[f32] {
        let s = self.samples_per_trace;
        &self.traces[i * s..(i + 1) * s]
    }

    /// First `n` traces.
    pub fn truncated(&self, n: usize) -> TraceSet {
        let n = n.min(self.len());
        TraceSet {
            traces: self.traces[..n * self.samples_per_trace].to_vec(),
            plaintexts: self.plaintexts[..n].to_vec(),
            ciphertexts: self.ciphertexts[..n].to_vec(),
            class_labels: self.class_labels.as_ref().map(|c| c[..n].to_vec()),
            notes: self.notes.clone(),
            sample_rate: self.sample_rate,
            samples_per_trace: self.samples_per_trace,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.plaintexts.len();
        if self.ciphertexts.len() != n
            || self.traces.len() != n * self.samples_per_trace
            || self.class_labels.as_ref().is_some_and(|c| c.len() != n)
        {
            return Err(Error::input("trace set arrays have inconsistent lengths"));
        }
        Ok(())
    }

    /// Checks every ciphertext against the AES model.
    pub fn verify_ciphertexts(&self, key: &Block) -> Result<()> {
        for (i, (p, c)) in self.plaintexts.iter().zip(&self.ciphertexts).enumerate() {
            if aes::encrypt(key, p) != *c {
                return Err(Error::Invariant(format!("trace {i}: ciphertext does not match plaintext")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceMode {
    ProOff,
    ProFixed(SelConfig),
    ProRandom,
}

impl TraceMode {
    pub fn name(&self) -> &'static str {
        match self {
            TraceMode::ProOff => "pro-off",
            TraceMode::ProFixed(_) => "pro-fixed",
            TraceMode::ProRandom => "pro-random",
        }
    }
}

impl fmt::Display for TraceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mode name parsing; `pro-fixed` takes the SEL id after a colon, e.g. `pro-fixed:0`.
impl FromStr for TraceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pro-off" => Ok(TraceMode::ProOff),
            "pro-random" => Ok(TraceMode::ProRandom),
            _ => {
                let id = s
                    .strip_prefix("pro-fixed:")
                    .and_then(|v| v.parse::<u64>().ok())
                    .ok_or_else(|| Error::input(format!("unknown trace mode {s:?}")))?;
                Ok(TraceMode::ProFixed(SelConfig::from_id(id, 64)))
            }
        }
    }
}

/// Everything trace synthesis needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaSetup {
    pub design: Arc<ProDesign>,
    pub pro_location: Node,
    pub v_nominal: f64,
    pub aes: AesActivity,
    pub schedule: HidingSchedule,
    /// Victim clock (hertz).
    pub f_clk: f64,
    pub sample_rate: f64,
    pub samples_per_trace: usize,
    /// Sample index where the encryption starts.
    pub aes_start_sample: usize,
    /// Wall-clock time between consecutive encryptions (second).
    pub encryption_period: f64,
    /// Standard deviation of additive measurement noise (ampere).
    pub noise_sigma: f64,
    pub fixed_plaintext: Block,
    /// SEL id used by the fixed-frequency mode.
    pub fixed_sel_id: u64,
}

impl ScaSetup {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        self.schedule.validate()?;
        if !(self.sample_rate > 0.0 && self.f_clk > 0.0) {
            return Err(Error::Validation("sample_rate and f_clk must be > 0".into()));
        }
        if self.samples_per_trace < 2 {
            return Err(Error::Validation("samples_per_trace must be >= 2".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation("noise sigma must be >= 0".into()));
        }
        if !(self.encryption_period > 0.0) {
            return Err(Error::Validation("encryption_period must be > 0".into()));
        }
        if self.fixed_sel_id >> self.design.n_cells() != 0 {
            return Err(Error::Validation(format!(
                "fixed SEL id {} does not fit {} cells",
                self.fixed_sel_id,
                self.design.n_cells()
            )));
        }
        Ok(())
    }

    pub fn fixed_sel(&self) -> SelConfig {
        SelConfig::from_id(self.fixed_sel_id, self.design.n_cells())
    }

    fn instance(&self) -> ProInstance {
        ProInstance { design: self.design.clone(), location: self.pro_location, variation_factor: 1.0, id: 0 }
    }

    /// Oscillator frequency and mean current for a SEL assignment.
    pub fn pro_drive(&self, sel: &SelConfig) -> Result<(f64, f64)> {
        let inst = self.instance();
        let f = crate::pro::instantaneous_frequency(&inst, sel, self.v_nominal)?;
        Ok((f, pro_self_current(&inst, sel, self.v_nominal, &self.schedule)))
    }

    /// The AES sample window `[start, end)`.
    pub fn aes_window(&self) -> (usize, usize) {
        let len = (self.aes.span() * self.sample_rate).ceil() as usize;
        (self.aes_start_sample, (self.aes_start_sample + len).min(self.samples_per_trace))
    }
}

/// Seed of the per-interval SEL draws derived from the master seed.
fn hiding_seed(master: u64) -> u64 {
    rng::derive_seed(master, rng::HIDING, u64::MAX)
}

/// SEL assignment active during encryption `index` in random-hiding mode.
pub fn random_mode_sel(setup: &ScaSetup, master: u64, index: usize) -> SelConfig {
    let t = index as f64 * setup.encryption_period;
    let interval = setup.schedule.interval_index(t);
    sel_for_interval(hiding_seed(master), interval, setup.design.n_cells())
}

/// Plaintext and optional class of trace `index`.
pub fn trace_input(setup: &ScaSetup, master: u64, index: usize, tvla_classes: bool) -> (Block, Option<u8>) {
    let mut r = rng::substream(master, rng::PLAINTEXTS, index as u64);
    if tvla_classes {
        let class = if r.random::<bool>() { CLASS_RANDOM } else { CLASS_FIXED };
        let pt = if class == CLASS_FIXED { setup.fixed_plaintext } else { random_block(&mut r) };
        (pt, Some(class))
    } else {
        (random_block(&mut r), None)
    }
}

/// PRO contribution to one trace: frequency, mean current and phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProWave {
    pub freq: f64,
    pub mean_current: f64,
    pub phase: f64,
}

impl ProWave {
    /// Current `I (1 + sin(2 pi f t + phase))` at `t`.
    pub fn at(&self, t: f64) -> f64 {
        self.mean_current * (1.0 + (std::f64::consts::TAU * self.freq * t + self.phase).sin())
    }
}

pub fn pro_wave(setup: &ScaSetup, mode: &TraceMode, master: u64, index: usize) -> Result<Option<ProWave>> {
    let mut r = rng::substream(master, rng::HIDING, index as u64);
    let phase = r.random::<f64>() * std::f64::consts::TAU;
    let sel = match mode {
        TraceMode::ProOff => return Ok(None),
        TraceMode::ProFixed(sel) => {
            SelConfig { sel_bits: sel.sel_bits[..setup.design.n_cells()].to_vec(), enabled: sel.enabled }
        }
        TraceMode::ProRandom => random_mode_sel(setup, master, index),
    };
    let (freq, mean_current) = setup.pro_drive(&sel)?;
    Ok(Some(ProWave { freq, mean_current, phase }))
}

/// Synthesizes `n_traces` power traces.
///
/// Each trace is the total chip current: the AES round envelope with its
/// final-round Hamming-distance leak, the oscillator's own current in the
/// selected mode, and Gaussian measurement noise. Plaintexts, noise and
/// oscillator phase come from per-trace substreams, so every mode sees the
/// same inputs and noise for a given seed.
pub fn synthesize_traces(
    setup: &ScaSetup,
    n_traces: usize,
    mode: &TraceMode,
    tvla_classes: bool,
    seed: u64,
) -> Result<TraceSet> {
    setup.validate()?;
    if let TraceMode::ProFixed(sel) = mode {
        if sel.sel_bits.len() < setup.design.n_cells() {
            return Err(Error::input("fixed SEL has fewer bits than the design has cells"));
        }
    }
    let s = setup.samples_per_trace;
    let normal = Normal::new(0.0, setup.noise_sigma).map_err(|e| Error::input(e.to_string()))?;
    let rows: Vec<(Vec<f32>, Block, Block, Option<u8>)> = (0..n_traces)
        .into_par_iter()
        .map(|i| {
            let (pt, class) = trace_input(setup, seed, i, tvla_classes);
            let states = aes::encrypt_checked(&setup.aes.key, &pt)?;
            let hd = aes::hamming_distance(&states[9], &states[10]);
            let wave = pro_wave(setup, mode, seed, i)?;
            let mut noise_rng = rng::substream(seed, rng::MEASUREMENT_NOISE, i as u64);
            let samples = (0..s)
                .map(|k| {
                    let t = k as f64 / setup.sample_rate;
                    let t_aes = (k as f64 - setup.aes_start_sample as f64) / setup.sample_rate;
                    let mut amps = setup.aes.total_current(t_aes, hd);
                    if let Some(w) = &wave {
                        amps += w.at(t);
                    }
                    let noise = if setup.noise_sigma > 0.0 { normal.sample(&mut noise_rng) } else { 0.0 };
                    (amps + noise) as f32
                })
                .collect();
            Ok((samples, pt, states[10], class))
        })
        .collect::<Result<_>>()?;
    let mut set = TraceSet {
        sample_rate: setup.sample_rate,
        samples_per_trace: s,
        traces: Vec::with_capacity(n_traces * s),
        plaintexts: Vec::with_capacity(n_traces),
        ciphertexts: Vec::with_capacity(n_traces),
        class_labels: tvla_classes.then(Vec::new),
        seed,
        notes: Vec::new(),
    };
    for (samples, pt, ct, class) in rows {
        set.traces.extend_from_slice(&samples);
        set.plaintexts.push(pt);
        set.ciphertexts.push(ct);
        if let (Some(labels), Some(c)) = (set.class_labels.as_mut(), class) {
            labels.push(c);
        }
    }
    if setup.sample_rate < 2.0 * setup.f_clk {
        set.notes
            .push(format!("sample rate {} Hz is below twice the victim clock {} Hz", setup.sample_rate, setup.f_clk));
    }
    Ok(set)
}

/// `f` folded into `[0, fs/2]` by sampling at `fs`.
pub fn alias_frequency(f: f64, fs: f64) -> f64 {
    let r = f.rem_euclid(fs);
    if r > fs / 2.0 {
        fs - r
    } else {
        r
    }
}
