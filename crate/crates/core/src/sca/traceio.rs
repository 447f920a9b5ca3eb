// SPDX-License-Identifier: Apache-2.0

//! PROT binary trace files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "PROT"  u16 version  f64 sample_rate  u32 n_traces  u32 samples  u8 flags
//! per trace: [u8; 16] plaintext, [u8; 16] ciphertext, [u8 class if flags & 1], f32 x samples
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::TraceSet;

pub const MAGIC: &[u8; 4] = b"PROT";
pub const VERSION: u16 = 1;
const FLAG_CLASSES: u8 = 1;

pub fn write_traces<W: Write>(set: &TraceSet, mut w: W) -> Result<()> {
    set.validate()?;
    let n = u32::try_from(set.len()).map_err(|_| Error::input("too many traces for PROT"))?;
    let s = u32::try_from(set.samples_per_trace).map_err(|_| Error::input("traces too long for PROT"))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&set.sample_rate.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&s.to_le_bytes())?;
    let flags = if set.class_labels.is_some() { FLAG_CLASSES } else { 0 };
    w.write_all(&[flags])?;
    let mut buf = Vec::with_capacity(33 + 4 * set.samples_per_trace);
    for i in 0..set.len() {
        buf.clear();
        buf.extend_from_slice(&set.plaintexts[i]);
        buf.extend_from_slice(&set.ciphertexts[i]);
        if let Some(labels) = &set.class_labels {
            buf.push(labels[i]);
        }
        for x in set.trace(i) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::input(format!("truncated PROT file: {e}")))?;
    Ok(b)
}

/// Reads a PROT stream. The seed is not stored and reads back as 0.
pub fn read_traces<R: Read>(mut r: R) -> Result<TraceSet> {
    if &take::<4, _>(&mut r)? != MAGIC {
        return Err(Error::input("not a PROT file (bad magic)"));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::input(format!("unsupported PROT version {version}")));
    }
    let sample_rate = f64::from_le_bytes(take(&mut r)?);
    let n = u32::from_le_bytes(take(&mut r)?) as usize;
    let s = u32::from_le_bytes(take(&mut r)?) as usize;
    let [flags] = take::<1, _>(&mut r)?;
    if flags & !FLAG_CLASSES != 0 {
        return Err(Error::input(format!("unknown PROT flags {flags:#04x}")));
    }
    let has_classes = flags & FLAG_CLASSES != 0;
    let mut set = TraceSet {
        sample_rate,
        samples_per_trace: s,
        traces: Vec::with_capacity(n.saturating_mul(s).min(1 << 28)),
        plaintexts: Vec::with_capacity(n.min(1 << 24)),
        ciphertexts: Vec::with_capacity(n.min(1 << 24)),
        class_labels: has_classes.then(Vec::new),
        seed: 0,
        notes: Vec::new(),
    };
    let mut row = vec![0u8; 4 * s];
    for _ in 0..n {
        set.plaintexts.push(take(&mut r)?);
        set.ciphertexts.push(take(&mut r)?);
        if let Some(labels) = set.class_labels.as_mut() {
            labels.push(take::<1, _>(&mut r)?[0]);
        }
        r.read_exact(&mut row).map_err(|e| Error::input(format!("truncated PROT file: {e}")))?;
        set.traces.extend(row.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::input("trailing bytes after PROT payload"));
    }
    Ok(set)
}
