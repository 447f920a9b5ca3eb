// SPDX-License-Identifier: Apache-2.0

//! Bit-exact AES-128 with access to the round-state register values.

use crate::error::{Error, Result};

pub type Block = [u8; 16];

#[rustfmt::skip]
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

pub const INV_SBOX: [u8; 256] = invert(&SBOX);

const fn invert(s: &[u8; 256]) -> [u8; 256] {
    let mut out = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        out[s[i] as usize] = i as u8;
        i += 1;
    }
    out
}

const RCON: [u8; 10] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

/// Byte index before ShiftRows of the byte that lands at `i` after it
/// (column-major state, byte `i` = row `i % 4`, column `i / 4`).
pub const SHIFT_ROWS_SOURCE: [usize; 16] = {
    let mut src = [0usize; 16];
    let mut i = 0;
    while i < 16 {
        let row = i % 4;
        let col = i / 4;
        src[i] = row + 4 * ((col + row) % 4);
        i += 1;
    }
    src
};

fn xtime(b: u8) -> u8 {
    (b << 1) ^ if b & 0x80 != 0 { 0x1b } else { 0 }
}

fn gmul(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0;
    while b != 0 {
        if b & 1 != 0 {
            p ^= a;
        }
        a = xtime(a);
        b >>= 1;
    }
    p
}

/// The eleven AES-128 round keys.
pub fn expand_key(key: &Block) -> [Block; 11] {
    let mut rk = [[0u8; 16]; 11];
    rk[0] = *key;
    for r in 1..11 {
        let prev = rk[r - 1];
        let mut t = [prev[13], prev[14], prev[15], prev[12]];
        for b in &mut t {
            *b = SBOX[*b as usize];
        }
        t[0] ^= RCON[r - 1];
        for w in 0..4 {
            for j in 0..4 {
                let v = prev[4 * w + j] ^ t[j];
                rk[r][4 * w + j] = v;
                t[j] = v;
            }
        }
    }
    rk
}

/// Recovers the cipher key from the last round key.
pub fn invert_key_schedule(k10: &Block) -> Block {
    let mut cur = *k10;
    for r in (1..11).rev() {
        let mut prev = [0u8; 16];
        // Words 1..3 of the previous key are XORs of adjacent current words.
        for w in (1..4).rev() {
            for j in 0..4 {
                prev[4 * w + j] = cur[4 * w + j] ^ cur[4 * (w - 1) + j];
            }
        }
        let mut t = [prev[13], prev[14], prev[15], prev[12]];
        for b in &mut t {
            *b = SBOX[*b as usize];
        }
        t[0] ^= RCON[r - 1];
        for j in 0..4 {
            prev[j] = cur[j] ^ t[j];
        }
        cur = prev;
    }
    cur
}

fn add_round_key(s: &mut Block, k: &Block) {
    for (a, b) in s.iter_mut().zip(k) {
        *a ^= b;
    }
}

fn sub_bytes(s: &mut Block) {
    for b in s.iter_mut() {
        *b = SBOX[*b as usize];
    }
}

fn inv_sub_bytes(s: &mut Block) {
    for b in s.iter_mut() {
        *b = INV_SBOX[*b as usize];
    }
}

fn shift_rows(s: &mut Block) {
    let old = *s;
    for i in 0..16 {
        s[i] = old[SHIFT_ROWS_SOURCE[i]];
    }
}

fn inv_shift_rows(s: &mut Block) {
    let old = *s;
    for i in 0..16 {
        s[SHIFT_ROWS_SOURCE[i]] = old[i];
    }
}

fn mix_columns(s: &mut Block) {
    for c in s.chunks_exact_mut(4) {
        let a = [c[0], c[1], c[2], c[3]];
        c[0] = xtime(a[0]) ^ xtime(a[1]) ^ a[1] ^ a[2] ^ a[3];
        c[1] = a[0] ^ xtime(a[1]) ^ xtime(a[2]) ^ a[2] ^ a[3];
        c[2] = a[0] ^ a[1] ^ xtime(a[2]) ^ xtime(a[3]) ^ a[3];
        c[3] = xtime(a[0]) ^ a[0] ^ a[1] ^ a[2] ^ xtime(a[3]);
    }
}

fn inv_mix_columns(s: &mut Block) {
    for c in s.chunks_exact_mut(4) {
        let a = [c[0], c[1], c[2], c[3]];
        for (r, out) in c.iter_mut().enumerate() {
            *out = gmul(a[r], 14) ^ gmul(a[(r + 1) % 4], 11) ^ gmul(a[(r + 2) % 4], 13) ^ gmul(a[(r + 3) % 4], 9);
        }
    }
}

/// Value of the state register after the initial key addition and after each
/// of the ten rounds; `states[10]` is the ciphertext.
pub fn encrypt_states(key: &Block, plaintext: &Block) -> [Block; 11] {
    let rk = expand_key(key);
    let mut states = [[0u8; 16]; 11];
    let mut s = *plaintext;
    add_round_key(&mut s, &rk[0]);
    states[0] = s;
    for (r, k) in rk.iter().enumerate().skip(1) {
        sub_bytes(&mut s);
        shift_rows(&mut s);
        if r != 10 {
            mix_columns(&mut s);
        }
        add_round_key(&mut s, k);
        states[r] = s;
    }
    states
}

pub fn encrypt(key: &Block, plaintext: &Block) -> Block {
    encrypt_states(key, plaintext)[10]
}

pub fn decrypt(key: &Block, ciphertext: &Block) -> Block {
    let rk = expand_key(key);
    let mut s = *ciphertext;
    add_round_key(&mut s, &rk[10]);
    inv_shift_rows(&mut s);
    inv_sub_bytes(&mut s);
    for r in (1..10).rev() {
        add_round_key(&mut s, &rk[r]);
        inv_mix_columns(&mut s);
        inv_shift_rows(&mut s);
        inv_sub_bytes(&mut s);
    }
    add_round_key(&mut s, &rk[0]);
    s
}

/// Encrypts and verifies the result by decryption.
pub fn encrypt_checked(key: &Block, plaintext: &Block) -> Result<[Block; 11]> {
    let states = encrypt_states(key, plaintext);
    if decrypt(key, &states[10]) != *plaintext {
        return Err(Error::Invariant(format!("AES round trip failed for plaintext {}", hex::encode(plaintext))));
    }
    Ok(states)
}

pub fn hamming_distance(a: &Block, b: &Block) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Hamming distance between the last two register values.
pub fn last_round_hd(key: &Block, plaintext: &Block) -> u32 {
    let s = encrypt_states(key, plaintext);
    hamming_distance(&s[9], &s[10])
}

pub fn block_from_slice(bytes: &[u8]) -> Result<Block> {
    bytes.try_into().map_err(|_| Error::input(format!("expected 16 bytes, got {}", bytes.len())))
}

pub fn parse_hex_block(s: &str) -> Result<Block> {
    let bytes = hex::decode(s.trim()).map_err(|e| Error::input(format!("bad hex block {s:?}: {e}")))?;
    block_from_slice(&bytes)
}
