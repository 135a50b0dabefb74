use std::collections::HashMap;

use proptest::prelude::*;

use ftmm::ecc::DecodeStatus;
use ftmm::engine::Mode;
use ftmm::memory::{write_filter, AccessKind, Port, RowSet, Tcdm, WriteRequest};
use ftmm::Fp16;

proptest! {
    #[test]
    fn behaves_like_a_map(ops in proptest::collection::vec((0usize..32, any::<u32>()), 1..200)) {
        let mut mem = Tcdm::new(32);
        let mut model = HashMap::new();
        for &(addr, word) in &ops {
            mem.write(addr, word).unwrap();
            model.insert(addr, word);
        }
        for addr in 0..32 {
            prop_assert_eq!(mem.read(addr).unwrap(), (model.get(&addr).copied().unwrap_or(0), DecodeStatus::Clean));
        }
        prop_assert_eq!(mem.count(Port::Host, AccessKind::Write), ops.len());
        prop_assert_eq!(mem.access_log().len(), ops.len() + 32);
    }

    #[test]
    fn stored_single_flip_is_corrected(word: u32, bit in 0u32..39) {
        let mut mem = Tcdm::new(4);
        mem.write(2, word).unwrap();
        mem.flip_stored_bit(2, bit).unwrap();
        let r = mem.fetch(1, Port::X, 2, RowSet::Pair(0)).unwrap();
        prop_assert_eq!(r.word, word);
        prop_assert_eq!(r.status, DecodeStatus::Corrected(bit as u8));
    }
}

#[test]
fn paired_fetch_is_one_access() {
    let mut mem = Tcdm::new(8);
    mem.clear_log();
    let r = mem.fetch(3, Port::X, 4, RowSet::for_lane(Mode::FaultTolerant, 0)).unwrap();
    assert_eq!(r.served_rows.rows(12), 0..2);
    assert_eq!(mem.access_log().len(), 1);
    let p = mem.fetch(3, Port::X, 4, RowSet::for_lane(Mode::Performance, 0)).unwrap();
    assert_eq!(p.served_rows.rows(12), 0..1);
    assert_eq!(mem.write(8, 0).unwrap_err().to_string(), "address 8 out of bounds for a TCDM of 8 words");
}

#[test]
fn filter_gates_mismatched_pairs() {
    let req = |row, addr, data| WriteRequest { row, addr, data: Fp16(data) };
    let beat = [req(0, 10, 0x3C00), req(1, 10, 0x3C00), req(2, 11, 0x4000), req(3, 11, 0x4001)];
    let out = write_filter(Mode::FaultTolerant, &beat);
    assert_eq!(out.writes, vec![beat[0]]);
    assert_eq!(out.mismatched_pairs, vec![1]);
    let addr_mismatch = [req(0, 10, 0x3C00), req(1, 12, 0x3C00)];
    assert!(write_filter(Mode::FaultTolerant, &addr_mismatch).writes.is_empty());
    assert_eq!(write_filter(Mode::Performance, &beat).writes.len(), 4);
}
