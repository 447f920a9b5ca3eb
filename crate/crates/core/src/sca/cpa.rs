// SPDX-License-Identifier: Apache-2.0

//! Correlation power analysis against the final-round register update.
//!
//! Hypothesis for key byte `j` and guess `g`: the Hamming distance between
//! `InvSbox(c[j] ^ g)` (the round-9 register byte) and the ciphertext byte
//! that overwrites it, `c[SHIFT_ROWS_SOURCE[j]]`.
//!
//! `Σ h·t` for all 256 guesses is computed from per-byte partitioned sums.
//! With `x = InvSbox(c ^ g)` and `y` the overwriting byte,
//! `HD(x, y) = Σ_b x_b + y_b - 2 x_b y_b`, so grouping traces by `c`:
//!
//! ```text
//! Σ h·t = Σ_b Σ_c x_b(c, g) · (S_c - 2 O_{c,b}) + Σ_b Σ_c O_{c,b}
//! ```
//!
//! where `S_c` sums traces with `c[j] = c` and `O_{c,b}` sums those that
//! also have bit `b` of `y` set. The first term is one 256 x 2048 by
//! 2048 x S matrix product per key byte.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stimuli::aes::{expand_key, invert_key_schedule, Block, INV_SBOX, SHIFT_ROWS_SOURCE};

use super::TraceSet;

/// Hypothetical leakage of one trace for key byte `j` under guess `g`.
pub fn hypothesis(ciphertext: &Block, j: usize, g: u8) -> u32 {
    let x = INV_SBOX[(ciphertext[j] ^ g) as usize];
    (x ^ ciphertext[SHIFT_ROWS_SOURCE[j]]).count_ones()
}

#[derive(Debug, Clone)]
struct ByteSums {
    /// `S_c`, 256 x samples.
    by_value: Array2<f64>,
    /// `O_{c,b}` at row `b * 256 + c`, 2048 x samples.
    by_bit: Array2<f64>,
    sum_h: [f64; 256],
    sum_h2: [f64; 256],
}

/// Streaming CPA state; traces can be added in batches and the attack
/// evaluated at any point.
#[derive(Debug, Clone)]
pub struct CpaAccumulator {
    samples: usize,
    n: usize,
    sum_t: Array1<f64>,
    sum_t2: Array1<f64>,
    bytes: Vec<ByteSums>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpaResult {
    pub n_traces: usize,
    /// Per key byte, correlation over 256 guesses x samples.
    pub correlations: Vec<Array2<f64>>,
    /// Per key byte and guess, max over samples of |rho|.
    pub peaks: Vec<[f64; 256]>,
    /// Best guess per byte of the last round key.
    pub recovered_round_key: Block,
    /// Cipher key obtained by inverting the key schedule.
    pub recovered_key: Block,
    /// Per byte, number of guesses scoring strictly above the true one.
    pub rank_of_true_key: Option<[usize; 16]>,
}

impl CpaResult {
    /// Bytes of the recovered cipher key equal to `key`.
    pub fn correct_key_bytes(&self, key: &Block) -> usize {
        self.recovered_key.iter().zip(key).filter(|(a, b)| a == b).count()
    }

    pub fn correct_round_key_bytes(&self, key: &Block) -> usize {
        let k10 = expand_key(key)[10];
        self.recovered_round_key.iter().zip(&k10).filter(|(a, b)| a == b).count()
    }

    pub fn full_recovery(&self, key: &Block) -> bool {
        self.recovered_key == *key
    }
}

/// Guess x (bit, value) indicator matrix, identical for every key byte.
fn guess_bit_matrix() -> Array2<f64> {
    Array2::from_shape_fn((256, 2048), |(g, col)| {
        let (bit, c) = (col / 256, col % 256);
        f64::from((INV_SBOX[c ^ g] >> bit) & 1)
    })
}

impl CpaAccumulator {
    pub fn new(samples: usize) -> Self {
        let byte = ByteSums {
            by_value: Array2::zeros((256, samples)),
            by_bit: Array2::zeros((2048, samples)),
            sum_h: [0.0; 256],
            sum_h2: [0.0; 256],
        };
        CpaAccumulator {
            samples,
            n: 0,
            sum_t: Array1::zeros(samples),
            sum_t2: Array1::zeros(samples),
            bytes: vec![byte; 16],
        }
    }

    pub fn n_traces(&self) -> usize {
        self.n
    }

    /// Adds traces `range` of `set`.
    pub fn add_range(&mut self, set: &TraceSet, range: std::ops::Range<usize>) -> Result<()> {
        if set.samples_per_trace != self.samples {
            return Err(Error::input(format!(
                "trace length {} does not match accumulator length {}",
                set.samples_per_trace, self.samples
            )));
        }
        if range.end > set.len() {
            return Err(Error::input("trace range out of bounds"));
        }
        for i in range.clone() {
            for (k, &x) in set.trace(i).iter().enumerate() {
                let x = f64::from(x);
                self.sum_t[k] += x;
                self.sum_t2[k] += x * x;
            }
        }
        self.bytes.par_iter_mut().enumerate().for_each(|(j, acc)| {
            for i in range.clone() {
                let ct = &set.ciphertexts[i];
                let trace = set.trace(i);
                let c = ct[j] as usize;
                let y = ct[SHIFT_ROWS_SOURCE[j]];
                add_row(acc.by_value.row_mut(c).as_slice_mut().unwrap(), trace);
                for bit in 0..8 {
                    if (y >> bit) & 1 == 1 {
                        add_row(acc.by_bit.row_mut(bit * 256 + c).as_slice_mut().unwrap(), trace);
                    }
                }
                for g in 0..256 {
                    let h = f64::from(hypothesis(ct, j, g as u8));
                    acc.sum_h[g] += h;
                    acc.sum_h2[g] += h * h;
                }
            }
        });
        self.n += range.len();
        Ok(())
    }

    pub fn add_all(&mut self, set: &TraceSet) -> Result<()> {
        self.add_range(set, 0..set.len())
    }

    /// Correlations and key ranking from the traces added so far.
    pub fn evaluate(&self, known_key: Option<&Block>) -> Result<CpaResult> {
        if self.n < 2 {
            return Err(Error::input("CPA needs at least two traces"));
        }
        let n = self.n as f64;
        let x = guess_bit_matrix();
        let var_t: Array1<f64> = &self.sum_t2 * n - &self.sum_t * &self.sum_t;
        let correlations: Vec<Array2<f64>> = self
            .bytes
            .par_iter()
            .map(|acc| {
                let mut m = acc.by_bit.mapv(|o| -2.0 * o);
                for bit in 0..8 {
                    let mut block = m.slice_mut(ndarray::s![bit * 256..(bit + 1) * 256, ..]);
                    block += &acc.by_value;
                }
                let constant = acc.by_bit.sum_axis(Axis(0));
                let mut sum_ht = x.dot(&m);
                sum_ht += &constant;
                let mut rho = sum_ht;
                for (g, mut row) in rho.axis_iter_mut(Axis(0)).enumerate() {
                    let var_h = n * acc.sum_h2[g] - acc.sum_h[g] * acc.sum_h[g];
                    for (k, r) in row.iter_mut().enumerate() {
                        let den = var_h * var_t[k];
                        *r = if den > 0.0 { (n * *r - acc.sum_h[g] * self.sum_t[k]) / den.sqrt() } else { 0.0 };
                    }
                }
                rho
            })
            .collect();
        Ok(summarize(self.n, correlations, known_key))
    }
}

fn add_row(acc: &mut [f64], trace: &[f32]) {
    for (a, &x) in acc.iter_mut().zip(trace) {
        *a += f64::from(x);
    }
}

fn summarize(n_traces: usize, correlations: Vec<Array2<f64>>, known_key: Option<&Block>) -> CpaResult {
    let peaks: Vec<[f64; 256]> = correlations
        .iter()
        .map(|rho| {
            let mut p = [0.0; 256];
            for (g, row) in rho.axis_iter(Axis(0)).enumerate() {
                p[g] = row.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            }
            p
        })
        .collect();
    let mut recovered_round_key = [0u8; 16];
    for (j, p) in peaks.iter().enumerate() {
        let mut best = 0;
        for g in 1..256 {
            if p[g] > p[best] {
                best = g;
            }
        }
        recovered_round_key[j] = best as u8;
    }
    let rank_of_true_key = known_key.map(|key| {
        let k10 = expand_key(key)[10];
        let mut ranks = [0usize; 16];
        for (j, p) in peaks.iter().enumerate() {
            let truth = p[k10[j] as usize];
            ranks[j] = p.iter().filter(|&&v| v > truth).count();
        }
        ranks
    });
    CpaResult {
        n_traces,
        correlations,
        peaks,
        recovered_round_key,
        recovered_key: invert_key_schedule(&recovered_round_key),
        rank_of_true_key,
    }
}

/// CPA on every trace of the set.
pub fn cpa_attack(traces: &TraceSet, known_key: Option<&Block>) -> Result<CpaResult> {
    traces.validate()?;
    let mut acc = CpaAccumulator::new(traces.samples_per_trace);
    acc.add_all(traces)?;
    acc.evaluate(known_key)
}

/// Smallest multiple of `step` (up to `limit`) at which the first that many
/// traces recover the full key; `None` if the limit is reached first.
pub fn traces_to_recovery(traces: &TraceSet, key: &Block, step: usize, limit: usize) -> Result<Option<usize>> {
    if step == 0 {
        return Err(Error::input("step must be >= 1"));
    }
    let limit = limit.min(traces.len());
    let mut acc = CpaAccumulator::new(traces.samples_per_trace);
    let mut n = 0;
    while n + step <= limit {
        acc.add_range(traces, n..n + step)?;
        n += step;
        if acc.evaluate(None)?.full_recovery(key) {
            return Ok(Some(n));
        }
    }
    Ok(None)
}
