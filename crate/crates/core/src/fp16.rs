//! IEEE 754 binary16 values and the fused multiply-add used by every compute
//! element.
//!
//! All arithmetic is integer-only so results are bit-identical on every host.
//! Rounding is round-to-nearest, ties-to-even. Any NaN result is emitted as the
//! canonical quiet NaN [`Fp16::QNAN`].

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

/// A binary16 bit pattern. Equality is bitwise: `+0 != -0` and identical NaN
/// patterns compare equal.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fp16(pub u16);

const EXP_MASK: u16 = 0x7C00;
const FRAC_MASK: u16 = 0x03FF;
const SIGN_MASK: u16 = 0x8000;

impl Fp16 {
    pub const ZERO: Fp16 = Fp16(0x0000);
    pub const NEG_ZERO: Fp16 = Fp16(0x8000);
    pub const ONE: Fp16 = Fp16(0x3C00);
    pub const MAX: Fp16 = Fp16(0x7BFF);
    pub const INFINITY: Fp16 = Fp16(0x7C00);
    pub const NEG_INFINITY: Fp16 = Fp16(0xFC00);
    pub const QNAN: Fp16 = Fp16(0x7E00);

    pub const fn from_bits(bits: u16) -> Self {
        Fp16(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    pub const fn is_sign_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }

    pub const fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & FRAC_MASK != 0
    }

    pub const fn is_infinite(self) -> bool {
        self.0 & !SIGN_MASK == EXP_MASK
    }

    pub const fn is_zero(self) -> bool {
        self.0 & !SIGN_MASK == 0
    }

    pub const fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    /// Magnitude of a finite value as `significand * 2^exponent`.
    const fn unpack(self) -> (u32, i32) {
        let exp = ((self.0 & EXP_MASK) >> 10) as i32;
        let frac = (self.0 & FRAC_MASK) as u32;
        if exp == 0 {
            (frac, -24)
        } else {
            (frac | 0x400, exp - 25)
        }
    }

    /// Exact value as `f64` (every binary16 value is representable). Display
    /// and diagnostics only; arithmetic never goes through host floats.
    pub fn to_f64(self) -> f64 {
        if self.is_nan() {
            return f64::NAN;
        }
        let sign = if self.is_sign_negative() { -1.0 } else { 1.0 };
        if self.is_infinite() {
            return sign * f64::INFINITY;
        }
        let (mant, exp) = self.unpack();
        sign * f64::from(mant) * 2f64.powi(exp)
    }

    /// Round an exact rational to the nearest binary16 value, ties to even.
    /// Magnitudes at or beyond `65520` overflow to infinity.
    pub fn from_rational(r: &BigRational) -> Fp16 {
        if r.is_zero() {
            return Fp16::ZERO;
        }
        let sign = if r.is_negative() { SIGN_MASK } else { 0 };
        let num = r.numer().abs();
        let den = r.denom().abs();

        // floor(log2(|r|)), starting from the bit-length estimate.
        let mut e = num.bits() as i64 - den.bits() as i64;
        if !ge_pow2(&num, &den, e) {
            e -= 1;
        }
        let quantum = (e - 10).max(-24);

        // |r| / 2^quantum = scaled_num / scaled_den
        let (scaled_num, scaled_den) = if quantum >= 0 {
            (num, den << quantum as usize)
        } else {
            (num << (-quantum) as usize, den)
        };
        let mut q = &scaled_num / &scaled_den;
        let rem = &scaled_num - &q * &scaled_den;
        let twice = rem << 1usize;
        if twice > scaled_den || (twice == scaled_den && (&q & BigInt::one()) == BigInt::one()) {
            q += 1;
        }
        let q: u64 = match u64::try_from(q) {
            Ok(v) => v,
            Err(_) => return Fp16(sign | EXP_MASK),
        };
        encode_rounded(sign, q, quantum)
    }

    /// Fused multiply-add `self * b + c` with a single rounding.
    pub fn mul_add(self, b: Fp16, c: Fp16) -> Fp16 {
        fma(self, b, c)
    }
}

/// `num/den >= 2^e`
fn ge_pow2(num: &BigInt, den: &BigInt, e: i64) -> bool {
    if e >= 0 {
        num >= &(den << e as usize)
    } else {
        &(num << (-e) as usize) >= den
    }
}

/// Assemble a rounded magnitude `q * 2^quantum` where `quantum >= -24` and
/// `q` already carries round-to-nearest-even.
fn encode_rounded(sign: u16, mut q: u64, mut quantum: i64) -> Fp16 {
    if q >= 2048 {
        // carry out of the significand after rounding
        q >>= 1;
        quantum += 1;
    }
    if q < 1024 {
        debug_assert_eq!(quantum, -24);
        return Fp16(sign | q as u16);
    }
    let biased = quantum + 25;
    if biased >= 31 {
        return Fp16(sign | EXP_MASK);
    }
    Fp16(sign | ((biased as u16) << 10) | (q as u16 - 1024))
}

/// Round `mag * 2^scale` (with `mag > 0`) to binary16.
fn round_scaled(sign: u16, mag: u128, scale: i32) -> Fp16 {
    let msb = 127 - mag.leading_zeros() as i32;
    let quantum = (msb + scale - 10).max(-24);
    let shift = quantum - scale;
    let q = if shift <= 0 {
        mag << (-shift) as u32
    } else {
        let shift = shift as u32;
        let q = mag >> shift;
        let rem = mag & ((1u128 << shift) - 1);
        let half = 1u128 << (shift - 1);
        if rem > half || (rem == half && q & 1 == 1) {
            q + 1
        } else {
            q
        }
    };
    encode_rounded(sign, q as u64, i64::from(quantum))
}

/// Fused multiply-add: round-to-nearest-even of the exact `a * b + c`.
///
/// The exact sum is formed as a signed integer multiple of `2^-48`, which
/// holds every product and addend of finite binary16 operands without loss.
pub fn fma(a: Fp16, b: Fp16, c: Fp16) -> Fp16 {
    if a.is_nan() || b.is_nan() || c.is_nan() {
        return Fp16::QNAN;
    }
    let prod_neg = a.is_sign_negative() ^ b.is_sign_negative();
    if a.is_infinite() || b.is_infinite() {
        if a.is_zero() || b.is_zero() {
            return Fp16::QNAN;
        }
        if c.is_infinite() && c.is_sign_negative() != prod_neg {
            return Fp16::QNAN;
        }
        return if prod_neg { Fp16::NEG_INFINITY } else { Fp16::INFINITY };
    }
    if c.is_infinite() {
        return c;
    }

    let (ma, ea) = a.unpack();
    let (mb, eb) = b.unpack();
    let (mc, ec) = c.unpack();
    let product = i128::from(ma * mb) << (ea + eb + 48) as u32;
    let addend = i128::from(mc) << (ec + 48) as u32;
    let sum = (if prod_neg { -product } else { product })
        + (if c.is_sign_negative() { -addend } else { addend });

    if sum == 0 {
        // Exact zero: -0 only when both terms are negative zeros.
        let neg = product == 0 && addend == 0 && prod_neg && c.is_sign_negative();
        return if neg { Fp16::NEG_ZERO } else { Fp16::ZERO };
    }
    let sign = if sum < 0 { SIGN_MASK } else { 0 };
    round_scaled(sign, sum.unsigned_abs(), -48)
}

impl fmt::Debug for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp16({:#06x} = {})", self.0, self.to_f64())
    }
}

impl fmt::Display for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl From<u16> for Fp16 {
    fn from(bits: u16) -> Self {
        Fp16(bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn pow2(e: i32) -> BigRational {
        if e >= 0 {
            BigRational::from_integer(BigInt::one() << e as usize)
        } else {
            BigRational::new(BigInt::one(), BigInt::one() << (-e) as usize)
        }
    }

    #[test]
    fn fma_identity_and_zero() {
        assert_eq!(fma(Fp16::ONE, Fp16::ONE, Fp16::ZERO), Fp16(0x3C00));
        for c in [0x0000u16, 0x8000, 0x3C00, 0xC500, 0x0001, 0x7BFF] {
            for x in [0x3C00u16, 0x1234, 0xFBFF, 0x0003] {
                let got = fma(Fp16::ZERO, Fp16(x), Fp16(c));
                if c == 0x8000 {
                    // (+0 * +x) + (-0) = +0 under round-to-nearest
                    let expect = if Fp16(x).is_sign_negative() { 0x8000 } else { 0x0000 };
                    assert_eq!(got, Fp16(expect));
                } else {
                    assert_eq!(got, Fp16(c));
                }
            }
        }
    }

    #[test]
    fn fma_rounds_once() {
        // (1 + 2^-10)^2 = 1 + 2^-9 + 2^-20; the tail is below half an ulp.
        assert_eq!(fma(Fp16(0x3C01), Fp16(0x3C01), Fp16::ZERO), Fp16(0x3C02));
    }

    #[test]
    fn specials() {
        assert_eq!(fma(Fp16::INFINITY, Fp16::ZERO, Fp16::ONE), Fp16::QNAN);
        assert_eq!(fma(Fp16::INFINITY, Fp16::ONE, Fp16::NEG_INFINITY), Fp16::QNAN);
        assert_eq!(fma(Fp16::INFINITY, Fp16(0xBC00), Fp16::ONE), Fp16::NEG_INFINITY);
        assert_eq!(fma(Fp16::ONE, Fp16::ONE, Fp16::NEG_INFINITY), Fp16::NEG_INFINITY);
        assert_eq!(fma(Fp16(0x7C01), Fp16::ONE, Fp16::ONE), Fp16::QNAN);
        assert_eq!(fma(Fp16::MAX, Fp16::MAX, Fp16::ZERO), Fp16::INFINITY);
        assert_eq!(fma(Fp16::NEG_ZERO, Fp16::ONE, Fp16::NEG_ZERO), Fp16::NEG_ZERO);
        // exact cancellation gives +0
        assert_eq!(fma(Fp16::ONE, Fp16::ONE, Fp16(0xBC00)), Fp16::ZERO);
    }

    #[test]
    fn from_rational_examples() {
        assert_eq!(Fp16::from_rational(&ratio(0, 1)), Fp16(0x0000));
        assert_eq!(Fp16::from_rational(&ratio(1, 1)), Fp16(0x3C00));
        // half of the smallest subnormal ties to even (zero)
        assert_eq!(Fp16::from_rational(&pow2(-25)), Fp16(0x0000));
        assert_eq!(Fp16::from_rational(&(pow2(-25) * ratio(3, 1))), Fp16(0x0002));
        assert_eq!(Fp16::from_rational(&pow2(-24)), Fp16(0x0001));
        assert_eq!(Fp16::from_rational(&ratio(-65504, 1)), Fp16(0xFBFF));
        assert_eq!(Fp16::from_rational(&ratio(65519, 1)), Fp16(0x7BFF));
        assert_eq!(Fp16::from_rational(&ratio(65520, 1)), Fp16::INFINITY);
        assert_eq!(Fp16::from_rational(&ratio(-1, 3)), Fp16(0xB555));
    }

    #[test]
    fn to_f64_is_exact() {
        assert_eq!(Fp16(0x0001).to_f64(), 2f64.powi(-24));
        assert_eq!(Fp16(0x7BFF).to_f64(), 65504.0);
        assert_eq!(Fp16(0xC000).to_f64(), -2.0);
    }
}
