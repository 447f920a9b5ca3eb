// SPDX-License-Identifier: Apache-2.0

//! Welch's t-test between two trace populations.

use crate::error::{Error, Result};

use super::{TraceSet, CLASS_FIXED, CLASS_RANDOM};

pub const TVLA_THRESHOLD: f64 = 4.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TvlaResult {
    pub t_values: Vec<f64>,
    pub max_abs_t: f64,
    pub threshold: f64,
}

impl TvlaResult {
    pub fn leaks(&self) -> bool {
        self.max_abs_t > self.threshold
    }
}

/// Per-sample running mean and sum of squared deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Moments {
    pub fn new(samples: usize) -> Self {
        Moments { n: 0, mean: vec![0.0; samples], m2: vec![0.0; samples] }
    }

    pub fn push(&mut self, trace: &[f32]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(trace) {
            let x = f64::from(x);
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    /// Sample variance (`n - 1` denominator) at sample `k`.
    pub fn variance(&self, k: usize) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2[k] / (self.n as f64 - 1.0)
        }
    }
}

/// Welch t per sample from two populations' moments.
pub fn welch_from_moments(a: &Moments, b: &Moments) -> Result<TvlaResult> {
    if a.n == 0 || b.n == 0 {
        return Err(Error::input("both trace populations must be non-empty"));
    }
    if a.mean.len() != b.mean.len() {
        return Err(Error::input("trace populations have different lengths"));
    }
    let t_values: Vec<f64> = (0..a.mean.len())
        .map(|k| {
            let diff = a.mean[k] - b.mean[k];
            let se2 = a.variance(k) / a.n as f64 + b.variance(k) / b.n as f64;
            if se2 > 0.0 {
                diff / se2.sqrt()
            } else if diff == 0.0 {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            }
        })
        .collect();
    let max_abs_t = t_values.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    Ok(TvlaResult { t_values, max_abs_t, threshold: TVLA_THRESHOLD })
}

pub fn welch_t(set_a: &[&[f32]], set_b: &[&[f32]]) -> Result<TvlaResult> {
    let samples = set_a.first().map_or(0, |t| t.len());
    if set_a.iter().chain(set_b).any(|t| t.len() != samples) {
        return Err(Error::input("all traces must have the same length"));
    }
    let mut a = Moments::new(samples);
    let mut b = Moments::new(samples);
    set_a.iter().for_each(|t| a.push(t));
    set_b.iter().for_each(|t| b.push(t));
    welch_from_moments(&a, &b)
}

/// Fixed-vs-random test over a labelled trace set.
pub fn tvla(traces: &TraceSet) -> Result<TvlaResult> {
    let labels = traces.class_labels.as_ref().ok_or_else(|| Error::input("trace set has no class labels"))?;
    let mut fixed = Moments::new(traces.samples_per_trace);
    let mut random = Moments::new(traces.samples_per_trace);
    for (i, &c) in labels.iter().enumerate() {
        match c {
            CLASS_FIXED => fixed.push(traces.trace(i)),
            CLASS_RANDOM => random.push(traces.trace(i)),
            other => return Err(Error::input(format!("unknown class label {other}"))),
        }
    }
    welch_from_moments(&fixed, &random)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_sets_give_zero() {
        let traces: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, (i * i) as f32, 1.0]).collect();
        let refs: Vec<&[f32]> = traces.iter().map(|t| t.as_slice()).collect();
        let r = welch_t(&refs, &refs).unwrap();
        assert!(r.t_values.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn zero_variance_sentinels() {
        let a = [[0.0f32, 1.0]; 3];
        let b = [[0.0f32, 2.0]; 3];
        let ra: Vec<&[f32]> = a.iter().map(|t| t.as_slice()).collect();
        let rb: Vec<&[f32]> = b.iter().map(|t| t.as_slice()).collect();
        let r = welch_t(&ra, &rb).unwrap();
        assert_eq!(r.t_values[0], 0.0);
        assert_eq!(r.t_values[1], f64::NEG_INFINITY);
    }

    #[test]
    fn closed_form_two_groups() {
        // a = {1, 2, 3}, b = {2, 4, 6}: means 2 and 4, variances 1 and 4.
        let a = [[1.0f32], [2.0], [3.0]];
        let b = [[2.0f32], [4.0], [6.0]];
        let ra: Vec<&[f32]> = a.iter().map(|t| t.as_slice()).collect();
        let rb: Vec<&[f32]> = b.iter().map(|t| t.as_slice()).collect();
        let r = welch_t(&ra, &rb).unwrap();
        let expected = -2.0 / (1.0f64 / 3.0 + 4.0 / 3.0).sqrt();
        assert!((r.t_values[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn t_grows_as_root_n() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut t_at = |n: usize| {
            let a: Vec<Vec<f32>> = (0..n).map(|_| vec![rng.random::<f32>() * 1e-3]).collect();
            let b: Vec<Vec<f32>> = (0..n).map(|_| vec![1.0 + rng.random::<f32>() * 1e-3]).collect();
            let ra: Vec<&[f32]> = a.iter().map(|t| t.as_slice()).collect();
            let rb: Vec<&[f32]> = b.iter().map(|t| t.as_slice()).collect();
            welch_t(&ra, &rb).unwrap().max_abs_t
        };
        let t1 = t_at(2000);
        let t2 = t_at(4000);
        assert!((t2 / t1 / 2f64.sqrt() - 1.0).abs() < 0.05, "{t1} {t2}");
    }

    #[test]
    fn empty_set_rejected() {
        let a = [[1.0f32]];
        let ra: Vec<&[f32]> = a.iter().map(|t| t.as_slice()).collect();
        assert!(welch_t(&ra, &[]).is_err());
    }
}
