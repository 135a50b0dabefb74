//! SECDED coding for memory words, plus the single-bit parities that guard
//! broadcast weights and the configuration register file.
//!
//! Codeword layout (39 bits, stored in the low bits of a `u64`):
//!
//! | bits    | content                                                    |
//! |---------|------------------------------------------------------------|
//! | 0..=31  | data bits `d0..d31`, unchanged                             |
//! | 32..=37 | Hamming check bits `c0..c5`, `ci` covers position bit `i`   |
//! | 38      | overall parity over bits 0..=37 (even)                      |
//!
//! Hamming positions run 1..=38. Check bit `ci` sits at position `2^i`; data
//! bit `dj` takes the `j`-th position that is not a power of two (3, 5, 6, 7,
//! 9, ...). The syndrome of a single flipped bit equals its position.

use serde::{Deserialize, Serialize};

use crate::fp16::Fp16;

pub const DATA_BITS: u32 = 32;
pub const CHECK_BITS: u32 = 7;
pub const CODEWORD_BITS: u32 = DATA_BITS + CHECK_BITS;

const HAMMING_CHECKS: usize = 6;
const OVERALL_BIT: u32 = 38;

/// Hamming position of each data bit.
const DATA_POSITION: [u8; 32] = {
    let mut table = [0u8; 32];
    let mut pos = 1u8;
    let mut i = 0;
    while i < 32 {
        if !pos.is_power_of_two() {
            table[i] = pos;
            i += 1;
        }
        pos += 1;
    }
    table
};

/// Data bits covered by each Hamming check bit.
const CHECK_MASK: [u32; HAMMING_CHECKS] = {
    let mut masks = [0u32; HAMMING_CHECKS];
    let mut c = 0;
    while c < HAMMING_CHECKS {
        let mut d = 0;
        while d < 32 {
            if DATA_POSITION[d] & (1 << c) != 0 {
                masks[c] |= 1 << d;
            }
            d += 1;
        }
        c += 1;
    }
    masks
};

/// Storage bit index for a Hamming position (0xFF for unused positions).
const POSITION_TO_BIT: [u8; 64] = {
    let mut table = [0xFFu8; 64];
    let mut d = 0;
    while d < 32 {
        table[DATA_POSITION[d] as usize] = d as u8;
        d += 1;
    }
    let mut c = 0;
    while c < HAMMING_CHECKS {
        table[1 << c] = 32 + c as u8;
        c += 1;
    }
    table
};

/// A 39-bit SECDED codeword as held in a TCDM cell.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Codeword(u64);

impl Codeword {
    pub const MASK: u64 = (1 << CODEWORD_BITS) - 1;

    /// Returns `None` if any bit above the 39-bit codeword is set.
    pub fn from_bits(bits: u64) -> Option<Self> {
        (bits & !Self::MASK == 0).then_some(Codeword(bits))
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// Data field as stored, without any correction.
    pub fn raw_data(self) -> u32 {
        self.0 as u32
    }

    pub fn check(self) -> u8 {
        (self.0 >> DATA_BITS) as u8
    }

    pub fn flip(self, bit: u32) -> Self {
        debug_assert!(bit < CODEWORD_BITS);
        Codeword(self.0 ^ (1 << bit))
    }

    pub fn xor(self, mask: u64) -> Self {
        Codeword((self.0 ^ mask) & Self::MASK)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStatus {
    Clean,
    /// A single flipped bit was repaired; carries its storage index (0..=38).
    Corrected(u8),
    Uncorrectable,
}

impl DecodeStatus {
    pub fn is_uncorrectable(self) -> bool {
        matches!(self, DecodeStatus::Uncorrectable)
    }
}

#[inline]
fn parity32(x: u32) -> u32 {
    x.count_ones() & 1
}

fn hamming_checks(word: u32) -> u64 {
    CHECK_MASK
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &m)| acc | (u64::from(parity32(word & m)) << i))
}

pub fn secded_encode(word: u32) -> Codeword {
    let checks = hamming_checks(word);
    let body = u64::from(word) | (checks << DATA_BITS);
    let overall = u64::from(body.count_ones() & 1);
    Codeword(body | (overall << OVERALL_BIT))
}

pub fn secded_decode(cw: Codeword) -> (u32, DecodeStatus) {
    let data = cw.raw_data();
    let stored = (cw.0 >> DATA_BITS) & 0x3F;
    let syndrome = (hamming_checks(data) ^ stored) as usize;
    let overall_odd = cw.0.count_ones() & 1 == 1;

    match (syndrome, overall_odd) {
        (0, false) => (data, DecodeStatus::Clean),
        (0, true) => (data, DecodeStatus::Corrected(OVERALL_BIT as u8)),
        (s, true) => match POSITION_TO_BIT.get(s).copied() {
            Some(bit) if bit < DATA_BITS as u8 => (data ^ (1 << bit), DecodeStatus::Corrected(bit)),
            Some(bit) if bit != 0xFF => (data, DecodeStatus::Corrected(bit)),
            _ => (data, DecodeStatus::Uncorrectable),
        },
        (_, false) => (data, DecodeStatus::Uncorrectable),
    }
}

/// Even parity of one weight element.
pub fn parity_bit(element: Fp16) -> bool {
    element.to_bits().count_ones() & 1 == 1
}

/// XOR-fold of the configuration words. Callers pass a non-empty slice; an
/// empty slice folds to zero.
pub fn regfile_parity(words: &[u32]) -> u32 {
    words.iter().fold(0, |acc, w| acc ^ w)
}
