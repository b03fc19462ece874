use std::fmt;

use serde::{Deserialize, Serialize};

use super::BvError;

/// Widest supported bitvector.
pub const MAX_WIDTH: u32 = 64;

/// A concrete `width`-bit value. The stored value is always reduced modulo
/// `2^width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawBitVector", into = "RawBitVector")]
pub struct BitVector {
    width: u32,
    value: u64,
}

#[derive(Serialize, Deserialize)]
struct RawBitVector {
    width: u32,
    value: u64,
}

impl TryFrom<RawBitVector> for BitVector {
    type Error = BvError;

    fn try_from(raw: RawBitVector) -> Result<Self, Self::Error> {
        BitVector::exact(raw.width, raw.value)
    }
}

impl From<BitVector> for RawBitVector {
    fn from(bv: BitVector) -> Self {
        RawBitVector {
            width: bv.width,
            value: bv.value,
        }
    }
}

/// All-ones mask for `width` bits (`width` in 1..=64).
#[inline]
pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

pub(crate) fn check_width(width: u32) -> Result<(), BvError> {
    if (1..=MAX_WIDTH).contains(&width) {
        Ok(())
    } else {
        Err(BvError::InvalidWidth(width))
    }
}

impl BitVector {
    /// Builds a value, reducing `value` modulo `2^width`.
    pub fn new(width: u32, value: u64) -> Result<Self, BvError> {
        check_width(width)?;
        Ok(Self {
            width,
            value: value & mask(width),
        })
    }

    /// Builds a value, rejecting literals that do not fit in `width` bits.
    pub fn exact(width: u32, value: u64) -> Result<Self, BvError> {
        check_width(width)?;
        if value & !mask(width) != 0 {
            return Err(BvError::LiteralOutOfRange { width, value });
        }
        Ok(Self { width, value })
    }

    /// Two's-complement encoding of a signed integer.
    pub fn from_signed(width: u32, value: i64) -> Result<Self, BvError> {
        Self::new(width, value as u64)
    }

    pub(crate) fn from_raw(width: u32, value: u64) -> Self {
        debug_assert!((1..=MAX_WIDTH).contains(&width));
        Self {
            width,
            value: value & mask(width),
        }
    }

    pub fn zero(width: u32) -> Result<Self, BvError> {
        Self::new(width, 0)
    }

    pub fn ones(width: u32) -> Result<Self, BvError> {
        Self::new(width, u64::MAX)
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.value
    }

    /// The value read as a two's-complement signed integer.
    pub fn as_signed(&self) -> i64 {
        if self.width == 64 {
            return self.value as i64;
        }
        let sign = 1u64 << (self.width - 1);
        if self.value & sign != 0 {
            (self.value | !mask(self.width)) as i64
        } else {
            self.value as i64
        }
    }

    pub fn bit(&self, index: u32) -> bool {
        index < self.width && (self.value >> index) & 1 == 1
    }

    #[inline]
    pub fn popcount(&self) -> u32 {
        self.value.count_ones()
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = self.width.div_ceil(4) as usize;
        write!(f, "0x{:0digits$x}[{}]", self.value, self.width)
    }
}

/// Hamming weight: number of set bits.
pub fn popcount(v: BitVector) -> u32 {
    v.popcount()
}

/// Hamming distance `ω(a ⊕ b)`.
pub fn hamming_distance(a: BitVector, b: BitVector) -> Result<u32, BvError> {
    same_width(a, b)?;
    Ok((a.value ^ b.value).count_ones())
}

/// Differential Hamming weight `|ω(a) − ω(b)|`.
pub fn diff_hw(a: BitVector, b: BitVector) -> Result<u32, BvError> {
    same_width(a, b)?;
    Ok(a.popcount().abs_diff(b.popcount()))
}

fn same_width(a: BitVector, b: BitVector) -> Result<(), BvError> {
    if a.width != b.width {
        return Err(BvError::WidthMismatch {
            op: "compare",
            left: a.width,
            right: b.width,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bv(w: u32, v: u64) -> BitVector {
        BitVector::new(w, v).unwrap()
    }

    #[test]
    fn construction_reduces_modulo_width() {
        assert_eq!(bv(8, 0x1ff).value(), 0xff);
        assert_eq!(bv(64, u64::MAX).value(), u64::MAX);
        assert!(BitVector::new(0, 1).is_err());
        assert!(BitVector::new(65, 1).is_err());
        assert!(BitVector::exact(8, 0x100).is_err());
        assert_eq!(BitVector::from_signed(16, -32768).unwrap().value(), 0x8000);
        assert_eq!(bv(16, 0x8000).as_signed(), -32768);
        assert_eq!(bv(8, 0x7f).as_signed(), 127);
    }

    #[test]
    fn popcount_examples() {
        assert_eq!(popcount(bv(8, 0xff)), 8);
        assert_eq!(popcount(bv(8, 0x00)), 0);
        assert_eq!(popcount(bv(16, 0x5a3c)), 8);
    }

    #[test]
    fn hamming_distance_examples() {
        assert_eq!(hamming_distance(bv(8, 0xf0), bv(8, 0x0f)).unwrap(), 8);
        assert_eq!(hamming_distance(bv(8, 0x5a), bv(8, 0x5a)).unwrap(), 0);
        // 0x5A3C ^ 0xA5C3 = 0xFFFF
        assert_eq!(
            hamming_distance(bv(16, 0x5a3c), bv(16, 0xa5c3)).unwrap(),
            16
        );
        assert!(hamming_distance(bv(8, 1), bv(16, 1)).is_err());
    }

    #[test]
    fn diff_hw_examples() {
        assert_eq!(diff_hw(bv(8, 0xf0), bv(8, 0x0f)).unwrap(), 0);
        assert_eq!(diff_hw(bv(8, 0x00), bv(8, 0xff)).unwrap(), 8);
        assert_eq!(diff_hw(bv(8, 0x01), bv(8, 0x07)).unwrap(), 2);
        assert!(diff_hw(bv(8, 1), bv(4, 1)).is_err());
    }

    #[test]
    fn diff_hw_bounded_by_distance_exhaustive() {
        for w in 1..=8u32 {
            for a in 0..(1u64 << w) {
                for b in 0..(1u64 << w) {
                    let (a, b) = (bv(w, a), bv(w, b));
                    let d = hamming_distance(a, b).unwrap();
                    assert!(diff_hw(a, b).unwrap() <= d);
                    assert_eq!(d, popcount(bv(w, a.value() ^ b.value())));
                }
            }
        }
    }
}
