//! FMA against an independent oracle: exact rational arithmetic followed by a
//! nearest-value search over the ordered binary16 encodings.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use proptest::prelude::*;

use ftmm::{fma, Fp16};

/// Exact value of a finite encoding, decoded from the field layout.
fn value(bits: u16) -> BigRational {
    let sign = bits >> 15;
    let exp = i32::from((bits >> 10) & 0x1F);
    let frac = i64::from(bits & 0x3FF);
    let (mant, e) = if exp == 0 { (frac, -24) } else { (frac + 1024, exp - 25) };
    let mag = BigRational::from_integer(BigInt::from(mant)) * pow2(e);
    if sign == 1 {
        -mag
    } else {
        mag
    }
}

fn pow2(e: i32) -> BigRational {
    let p = BigRational::from_integer(BigInt::one() << e.unsigned_abs());
    if e >= 0 {
        p
    } else {
        p.recip()
    }
}

/// Round `r` to binary16, ties to even, by bisection over the positive
/// encodings (which are ordered like their values).
fn nearest(r: &BigRational) -> u16 {
    let sign: u16 = if r.is_negative() { 0x8000 } else { 0 };
    let mag = r.abs();
    // Largest finite encoding whose value does not exceed the magnitude.
    let (mut lo, mut hi) = (0u16, 0x7BFF);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if value(mid) <= mag {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    // Beyond the largest finite value the next step up is 2^16.
    let upper = if lo == 0x7BFF { pow2(16) } else { value(lo + 1) };
    let below = &mag - value(lo);
    let above = &upper - &mag;
    let pick = if below < above || (below == above && lo & 1 == 0) { lo } else { lo + 1 };
    sign | pick
}

fn finite() -> impl Strategy<Value = u16> {
    any::<u16>().prop_filter("finite", |b| (b >> 10) & 0x1F != 0x1F)
}

fn oracle(a: u16, b: u16, c: u16) -> u16 {
    let exact = value(a) * value(b) + value(c);
    if exact.is_zero() {
        let prod_neg = (a ^ b) & 0x8000 != 0;
        let prod_zero = a & 0x7FFF == 0 || b & 0x7FFF == 0;
        return if prod_zero && prod_neg && c == 0x8000 { 0x8000 } else { 0 };
    }
    nearest(&exact)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn fma_matches_exact_rounding(a in finite(), b in finite(), c in finite()) {
        prop_assert_eq!(fma(Fp16(a), Fp16(b), Fp16(c)).to_bits(), oracle(a, b, c));
    }

    #[test]
    fn from_rational_matches_search(num in -(1i64 << 40)..(1i64 << 40), shift in 0u32..60) {
        let r = BigRational::new(BigInt::from(num), BigInt::one() << shift);
        let expect = if r.is_zero() { 0 } else { nearest(&r) };
        prop_assert_eq!(Fp16::from_rational(&r).to_bits(), expect);
    }
}

/// Operands near the unit range exercise cancellation more than uniform bits.
fn unit_range() -> impl Strategy<Value = u16> {
    (any::<bool>(), 0x1000u16..0x3C01).prop_map(|(neg, m)| if neg { m | 0x8000 } else { m })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(5_000))]

    #[test]
    fn fma_matches_near_cancellation(a in unit_range(), b in unit_range(), c in unit_range()) {
        prop_assert_eq!(fma(Fp16(a), Fp16(b), Fp16(c)).to_bits(), oracle(a, b, c));
    }
}

#[test]
fn special_operands() {
    let (inf, ninf, nan) = (Fp16::INFINITY, Fp16::NEG_INFINITY, Fp16(0x7C01));
    assert!(fma(inf, Fp16::ZERO, Fp16::ONE).is_nan());
    assert!(fma(inf, Fp16::ONE, ninf).is_nan());
    assert_eq!(fma(inf, Fp16::ONE, inf), inf);
    assert_eq!(fma(Fp16::ONE, Fp16::ONE, ninf), ninf);
    assert_eq!(fma(nan, Fp16::ONE, Fp16::ONE), Fp16::QNAN);
    // Overflow: 255.9 * 256 rounds past the largest finite value.
    assert_eq!(fma(Fp16(0x5BFF), Fp16(0x5C00), Fp16::MAX), inf);
    assert_eq!(oracle(0x7BFF, 0x3C00, 0x5000), fma(Fp16::MAX, Fp16::ONE, Fp16(0x5000)).to_bits());
}
