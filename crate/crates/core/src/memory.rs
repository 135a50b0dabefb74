//! Tightly-coupled data memory: a flat array of SECDED codewords with a
//! single-cycle port and an append-only access log.
//!
//! Memory images are little-endian sequences of 64-bit records, one per word.
//! Bits 0..=38 of a record hold the codeword exactly as laid out in
//! [`crate::ecc`]; bits 39..=63 must be zero.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::ecc::{secded_decode, secded_encode, Codeword, DecodeStatus};
use crate::engine::check_row_pair;
use crate::engine::Mode;
use crate::error::MemoryError;
use crate::fp16::Fp16;

/// Which requester issued an access.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    Host,
    X,
    W,
    Y,
    Z,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Access {
    pub cycle: u64,
    pub kind: AccessKind,
    pub addr: usize,
    pub port: Port,
}

/// Engine rows that receive one memory response.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum RowSet {
    /// A single row, as in performance mode.
    Single(usize),
    /// The consecutive pair `{2r, 2r + 1}`, given by its pair index `r`.
    Pair(usize),
    /// Every row (broadcast weights).
    All,
}

impl RowSet {
    pub fn for_lane(mode: Mode, lane: usize) -> RowSet {
        match mode {
            Mode::Performance => RowSet::Single(lane),
            Mode::FaultTolerant => RowSet::Pair(lane),
        }
    }

    pub fn rows(self, total: usize) -> std::ops::Range<usize> {
        match self {
            RowSet::Single(r) => r..r + 1,
            RowSet::Pair(p) => 2 * p..2 * p + 2,
            RowSet::All => 0..total,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MemResponse {
    pub word: u32,
    pub status: DecodeStatus,
    pub served_rows: RowSet,
}

#[derive(Clone, Debug)]
pub struct Tcdm {
    cells: Vec<Codeword>,
    log: Vec<Access>,
}

impl Tcdm {
    pub fn new(capacity: usize) -> Self {
        Tcdm { cells: vec![secded_encode(0); capacity], log: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.cells.len()
    }

    fn check(&self, addr: usize) -> Result<(), MemoryError> {
        if addr < self.cells.len() {
            Ok(())
        } else {
            Err(MemoryError::OutOfBounds { addr, capacity: self.cells.len() })
        }
    }

    /// Host write; logged at cycle 0.
    pub fn write(&mut self, addr: usize, word: u32) -> Result<(), MemoryError> {
        self.store(0, Port::Host, addr, word)
    }

    /// Host read; logged at cycle 0.
    pub fn read(&mut self, addr: usize) -> Result<(u32, DecodeStatus), MemoryError> {
        let r = self.fetch(0, Port::Host, addr, RowSet::Single(0))?;
        Ok((r.word, r.status))
    }

    /// Decoded read on behalf of `rows`. One request is one log entry no
    /// matter how many rows the response fans out to.
    pub fn fetch(&mut self, cycle: u64, port: Port, addr: usize, rows: RowSet) -> Result<MemResponse, MemoryError> {
        let cw = self.fetch_codeword(cycle, port, addr)?;
        let (word, status) = secded_decode(cw);
        Ok(MemResponse { word, status, served_rows: rows })
    }

    /// Raw read: the codeword as it leaves the memory, before any decoder.
    pub fn fetch_codeword(&mut self, cycle: u64, port: Port, addr: usize) -> Result<Codeword, MemoryError> {
        self.check(addr)?;
        self.log.push(Access { cycle, kind: AccessKind::Read, addr, port });
        Ok(self.cells[addr])
    }

    pub fn store(&mut self, cycle: u64, port: Port, addr: usize, word: u32) -> Result<(), MemoryError> {
        self.check(addr)?;
        self.log.push(Access { cycle, kind: AccessKind::Write, addr, port });
        self.cells[addr] = secded_encode(word);
        Ok(())
    }

    /// Engine-side address decode: unused high address bits alias.
    pub fn port_index(&self, addr: u32) -> usize {
        addr as usize % self.cells.len()
    }

    /// Unlogged backdoor write used to preload operands.
    pub fn poke(&mut self, addr: usize, word: u32) -> Result<(), MemoryError> {
        self.check(addr)?;
        self.cells[addr] = secded_encode(word);
        Ok(())
    }

    /// Unlogged backdoor read returning the decoded word.
    pub fn peek(&self, addr: usize) -> Result<(u32, DecodeStatus), MemoryError> {
        self.check(addr)?;
        Ok(secded_decode(self.cells[addr]))
    }

    pub fn codeword(&self, addr: usize) -> Result<Codeword, MemoryError> {
        self.check(addr)?;
        Ok(self.cells[addr])
    }

    /// Flip one stored bit in place (test stimulus for stored-data upsets).
    pub fn flip_stored_bit(&mut self, addr: usize, bit: u32) -> Result<(), MemoryError> {
        self.check(addr)?;
        self.cells[addr] = self.cells[addr].flip(bit);
        Ok(())
    }

    pub fn access_log(&self) -> &[Access] {
        &self.log
    }

    pub fn clear_log(&mut self) {
        self.log.clear();
    }

    /// Count of logged accesses of `kind` issued by `port`.
    pub fn count(&self, port: Port, kind: AccessKind) -> usize {
        self.log.iter().filter(|a| a.port == port && a.kind == kind).count()
    }

    /// Preload binary16 elements, one per word in the low half.
    pub fn poke_elements(&mut self, base: usize, elems: &[Fp16]) -> Result<(), MemoryError> {
        for (i, e) in elems.iter().enumerate() {
            self.poke(base + i, u32::from(e.to_bits()))?;
        }
        Ok(())
    }

    pub fn peek_elements(&self, base: usize, len: usize) -> Result<Vec<Fp16>, MemoryError> {
        (base..base + len).map(|a| self.peek(a).map(|(w, _)| Fp16(w as u16))).collect()
    }

    pub fn to_image(&self) -> Vec<u8> {
        image_bytes(&self.cells)
    }

    pub fn from_image(bytes: &[u8]) -> Result<Self, MemoryError> {
        Ok(Tcdm { cells: parse_image(bytes)?, log: Vec::new() })
    }

    pub fn dump<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(&self.to_image())
    }

    pub fn load<R: Read>(input: &mut R) -> Result<Self, MemoryError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| MemoryError::BadImage(e.to_string()))?;
        Self::from_image(&bytes)
    }
}

/// Serialize codewords as 64-bit little-endian records.
pub fn image_bytes(cells: &[Codeword]) -> Vec<u8> {
    cells.iter().flat_map(|c| c.bits().to_le_bytes()).collect()
}

pub fn parse_image(bytes: &[u8]) -> Result<Vec<Codeword>, MemoryError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(MemoryError::BadImage(format!("length {} is not a multiple of 8", bytes.len())));
    }
    bytes
        .chunks_exact(8)
        .enumerate()
        .map(|(i, rec)| {
            let bits = u64::from_le_bytes(rec.try_into().expect("8-byte chunk"));
            Codeword::from_bits(bits)
                .ok_or_else(|| MemoryError::BadImage(format!("record {i} has padding bits set")))
        })
        .collect()
}

/// Encode binary16 elements (one per word) as an image.
pub fn elements_to_image(elems: &[Fp16]) -> Vec<u8> {
    let cells: Vec<Codeword> = elems.iter().map(|e| secded_encode(u32::from(e.to_bits()))).collect();
    image_bytes(&cells)
}

/// Decode an image of binary16 elements; uncorrectable records are rejected.
pub fn image_to_elements(bytes: &[u8]) -> Result<Vec<Fp16>, MemoryError> {
    parse_image(bytes)?
        .into_iter()
        .enumerate()
        .map(|(i, cw)| match secded_decode(cw) {
            (_, DecodeStatus::Uncorrectable) => Err(MemoryError::BadImage(format!("record {i} is uncorrectable"))),
            (w, _) => Ok(Fp16(w as u16)),
        })
        .collect()
}

/// One row's store request for an output beat.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct WriteRequest {
    pub row: usize,
    pub addr: u32,
    pub data: Fp16,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct FilteredWrites {
    pub writes: Vec<WriteRequest>,
    /// Pair indices whose two requests disagreed (or lacked a partner).
    pub mismatched_pairs: Vec<usize>,
}

/// Drop the redundant half of each paired store.
///
/// In fault-tolerant mode both rows of a pair must present the same address
/// and bitwise-identical data; the even row's request is forwarded. A pair
/// that disagrees issues no write. Performance mode passes every request
/// through.
pub fn write_filter(mode: Mode, requests: &[WriteRequest]) -> FilteredWrites {
    if mode == Mode::Performance {
        return FilteredWrites { writes: requests.to_vec(), mismatched_pairs: Vec::new() };
    }
    let mut out = FilteredWrites::default();
    let mut pairs: Vec<usize> = requests.iter().map(|r| r.row / 2).collect();
    pairs.sort_unstable();
    pairs.dedup();
    for pair in pairs {
        let even = requests.iter().find(|r| r.row == 2 * pair);
        let odd = requests.iter().find(|r| r.row == 2 * pair + 1);
        match (even, odd) {
            (Some(a), Some(b)) if a.addr == b.addr && check_row_pair(&[a.data], &[b.data]) => out.writes.push(*a),
            _ => out.mismatched_pairs.push(pair),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let mut m = Tcdm::new(16);
        m.write(5, 0xDEAD_0000).unwrap();
        assert_eq!(m.read(5).unwrap(), (0xDEAD_0000, DecodeStatus::Clean));
        m.write(5, 7).unwrap();
        assert_eq!(m.read(5).unwrap().0, 7);
        assert_eq!(m.write(16, 0), Err(MemoryError::OutOfBounds { addr: 16, capacity: 16 }));
    }

    #[test]
    fn fanout_is_one_access() {
        let mut m = Tcdm::new(4);
        m.poke(1, 0x3C00).unwrap();
        let r = m.fetch(3, Port::X, 1, RowSet::for_lane(Mode::FaultTolerant, 0)).unwrap();
        assert_eq!(r.served_rows.rows(12), 0..2);
        assert_eq!(m.access_log(), &[Access { cycle: 3, kind: AccessKind::Read, addr: 1, port: Port::X }]);
        let r = m.fetch(4, Port::X, 1, RowSet::for_lane(Mode::Performance, 0)).unwrap();
        assert_eq!(r.served_rows.rows(12), 0..1);
    }

    #[test]
    fn stored_flip_is_corrected() {
        let mut m = Tcdm::new(2);
        m.poke(0, 0x1234_5678).unwrap();
        for bit in 0..39 {
            let mut c = m.clone();
            c.flip_stored_bit(0, bit).unwrap();
            assert_eq!(c.read(0).unwrap(), (0x1234_5678, DecodeStatus::Corrected(bit as u8)));
        }
    }

    #[test]
    fn filter_dedups_and_gates() {
        let a = WriteRequest { row: 0, addr: 9, data: Fp16::ONE };
        let b = WriteRequest { row: 1, ..a };
        let out = write_filter(Mode::FaultTolerant, &[a, b]);
        assert_eq!(out.writes, vec![a]);
        let bad = WriteRequest { data: Fp16(0x3C01), ..b };
        let out = write_filter(Mode::FaultTolerant, &[a, bad]);
        assert!(out.writes.is_empty());
        assert_eq!(out.mismatched_pairs, vec![0]);
        let out = write_filter(Mode::Performance, &[a, bad]);
        assert_eq!(out.writes.len(), 2);
    }

    #[test]
    fn image_rejects_padding() {
        let mut bytes = elements_to_image(&[Fp16::ONE]);
        assert_eq!(image_to_elements(&bytes).unwrap(), vec![Fp16::ONE]);
        bytes[7] = 0x80;
        assert!(parse_image(&bytes).is_err());
        assert!(parse_image(&[0u8; 5]).is_err());
    }
}
