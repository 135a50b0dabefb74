use proptest::prelude::*;

use ftmm::ecc::{parity_bit, regfile_parity, secded_decode, secded_encode, Codeword, DecodeStatus, CODEWORD_BITS};
use ftmm::memory::{image_bytes, parse_image, Tcdm};
use ftmm::Fp16;

proptest! {
    #[test]
    fn encoding_is_linear(a: u32, b: u32) {
        prop_assert_eq!(secded_encode(a ^ b).bits(), secded_encode(a).bits() ^ secded_encode(b).bits());
    }

    #[test]
    fn clean_words_decode_clean(w: u32) {
        prop_assert_eq!(secded_decode(secded_encode(w)), (w, DecodeStatus::Clean));
    }

    #[test]
    fn single_flip_reports_its_position(w: u32, bit in 0..CODEWORD_BITS) {
        let (d, st) = secded_decode(secded_encode(w).flip(bit));
        prop_assert_eq!(d, w);
        prop_assert_eq!(st, DecodeStatus::Corrected(bit as u8));
    }

    #[test]
    fn minimum_distance_is_four(a: u32, b: u32) {
        prop_assume!(a != b);
        let d = (secded_encode(a).bits() ^ secded_encode(b).bits()).count_ones();
        prop_assert!(d >= 4, "distance {}", d);
    }

    #[test]
    fn weight_parity_flips_with_any_bit(x: u16, bit in 0u32..16) {
        prop_assert_ne!(parity_bit(Fp16(x)), parity_bit(Fp16(x ^ (1 << bit))));
    }

    #[test]
    fn regfile_parity_sees_any_single_upset(words in proptest::collection::vec(any::<u32>(), 8), i in 0usize..8, bit in 0u32..32) {
        let mut hit = words.clone();
        hit[i] ^= 1 << bit;
        prop_assert_ne!(regfile_parity(&words), regfile_parity(&hit));
    }

    #[test]
    fn memory_image_roundtrip(words in proptest::collection::vec(any::<u32>(), 0..64)) {
        let mut m = Tcdm::new(words.len());
        for (i, &w) in words.iter().enumerate() {
            m.poke(i, w).unwrap();
        }
        let back = Tcdm::from_image(&m.to_image()).unwrap();
        prop_assert_eq!(back.capacity(), words.len());
        for (i, &w) in words.iter().enumerate() {
            prop_assert_eq!(back.peek(i).unwrap().0, w);
        }
    }
}

#[test]
fn image_rejects_high_bits_and_ragged_length() {
    let cw = secded_encode(0x1234_5678);
    let mut bytes = image_bytes(&[cw]);
    assert_eq!(parse_image(&bytes).unwrap(), vec![cw]);
    bytes[7] = 0x80;
    assert!(parse_image(&bytes).is_err());
    assert!(parse_image(&[0u8; 5]).is_err());
    assert!(Codeword::from_bits(1 << 39).is_none());
}
