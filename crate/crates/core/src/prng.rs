//! SHA-256 counter-mode generator seeded by a dice ceremony.
//!
//! Draw `k` hashes the UTF-8 bytes `"<seed>,<k>"` (counter in plain decimal)
//! and reads the digest as a big-endian 256-bit integer `d`. The uniform
//! value is `d / 2^256` rounded toward zero to the target float type.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;

/// Number of ten-sided dice rolled to form a seed.
pub const SEED_DIGITS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeedError {
    #[error("seed must have exactly {SEED_DIGITS} digits, got {len} (position {len} is where it ends)")]
    Length { len: usize },
    #[error("seed character {found:?} at position {position} is not a decimal digit")]
    NonDigit { position: usize, found: char },
}

/// A 20-digit decimal seed, as rolled in a public ceremony.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DiceSeed(String);

impl DiceSeed {
    pub fn new(digits: &str) -> Result<Self, SeedError> {
        // Positions are reported 1-based to match how the dice were rolled.
        for (i, c) in digits.chars().enumerate() {
            if !c.is_ascii_digit() {
                return Err(SeedError::NonDigit {
                    position: i + 1,
                    found: c,
                });
            }
        }
        let len = digits.chars().count();
        if len != SEED_DIGITS {
            return Err(SeedError::Length { len });
        }
        Ok(Self(digits.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for DiceSeed {
    type Err = SeedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for DiceSeed {
    type Error = SeedError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<DiceSeed> for String {
    fn from(seed: DiceSeed) -> Self {
        seed.0
    }
}

impl fmt::Display for DiceSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Deterministic uniform stream. The full state is `(seed, counter)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generator {
    seed: DiceSeed,
    counter: u64,
}

impl Generator {
    pub fn new(seed: DiceSeed) -> Self {
        Self::at(seed, 0)
    }

    /// Resume a stream after `counter` draws.
    pub fn at(seed: DiceSeed, counter: u64) -> Self {
        Self { seed, counter }
    }

    pub fn seed(&self) -> &DiceSeed {
        &self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Digest for draw number `counter`, without advancing.
    pub fn digest_at(&self, counter: u64) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.as_str().as_bytes());
        hasher.update(b",");
        hasher.update(counter.to_string().as_bytes());
        hasher.finalize().into()
    }

    /// Next value on `[0, 1)`.
    pub fn next_uniform<F: Scalar>(&mut self) -> F {
        let digest = self.digest_at(self.counter);
        self.counter += 1;
        digest_to_unit(&digest)
    }

    /// Convenience for the common double-precision case.
    pub fn next_f64(&mut self) -> f64 {
        self.next_uniform()
    }
}

/// `d / 2^256` rounded toward zero, where `d` is the big-endian digest.
pub fn digest_to_unit<F: Scalar>(digest: &[u8; 32]) -> F {
    let Some(first) = digest.iter().position(|&b| b != 0) else {
        return F::zero();
    };
    let leading = first as u32 * 8 + digest[first].leading_zeros();

    // 64-bit window starting at the most significant set bit.
    let mut window = 0u64;
    for bit in 0..64u32 {
        let idx = leading + bit;
        if idx >= 256 {
            break;
        }
        let byte = digest[(idx / 8) as usize];
        if byte & (0x80 >> (idx % 8)) != 0 {
            window |= 1 << (63 - bit);
        }
    }
    let digits = F::MANTISSA_DIGITS;
    let mantissa = window >> (64 - digits);
    let exponent = (leading + digits) as i32;
    F::from_count(mantissa) * F::lit(2.0).powi(-exponent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(s: &str) -> DiceSeed {
        DiceSeed::new(s).unwrap()
    }

    #[test]
    fn seed_validation() {
        assert!(DiceSeed::new("00000000000000000000").is_ok());
        assert!(DiceSeed::new("12345678901234567890").is_ok());
        assert_eq!(
            DiceSeed::new("1234567890123456789"),
            Err(SeedError::Length { len: 19 })
        );
        assert_eq!(
            DiceSeed::new("123456789012345678901"),
            Err(SeedError::Length { len: 21 })
        );
        assert_eq!(
            DiceSeed::new("1234a678901234567890"),
            Err(SeedError::NonDigit {
                position: 5,
                found: 'a'
            })
        );
        assert!(DiceSeed::new("").is_err());
    }

    #[test]
    fn new_generator_starts_at_zero() {
        let g = Generator::new(seed("00000000000000000000"));
        assert_eq!(g.counter(), 0);
    }

    // Golden values computed with Python's hashlib and exact rational floor.
    #[test]
    fn golden_f64() {
        let mut g = Generator::new(seed("00000000000000000000"));
        let expect = [
            0x3fe32b4a001701e4u64,
            0x3fdf40ad12e46a70,
            0x3fe0efcb7b340f41,
            0x3fe8ca0640bf97dd,
        ];
        for bits in expect {
            assert_eq!(g.next_f64().to_bits(), bits);
        }
        assert_eq!(g.counter(), 4);

        let mut g = Generator::new(seed("12345678901234567890"));
        let expect = [
            0x3fed087e16095512u64,
            0x3fd369652a2ad819,
            0x3fe5c461d82d7dce,
            0x3fe2a3d135dad0c2,
        ];
        for bits in expect {
            assert_eq!(g.next_f64().to_bits(), bits);
        }
    }

    #[test]
    fn golden_f32() {
        let mut g = Generator::new(seed("00000000000000000000"));
        for bits in [0x3f195a50u32, 0x3efa0568, 0x3f077e5b, 0x3f465032] {
            assert_eq!(g.next_uniform::<f32>().to_bits(), bits);
        }
    }

    #[test]
    fn digest_edges() {
        assert_eq!(digest_to_unit::<f64>(&[0u8; 32]), 0.0);
        let max = [0xffu8; 32];
        let u: f64 = digest_to_unit(&max);
        assert!(u < 1.0);
        assert_eq!(u, 1.0 - f64::EPSILON / 2.0);
        let mut tiny = [0u8; 32];
        tiny[31] = 1;
        assert_eq!(digest_to_unit::<f64>(&tiny), 2f64.powi(-256));
        let mut half = [0u8; 32];
        half[0] = 0x80;
        assert_eq!(digest_to_unit::<f32>(&half), 0.5);
    }

    #[test]
    fn serde_resumes_stream() {
        let mut g = Generator::new(seed("31415926535897932384"));
        for _ in 0..7 {
            g.next_f64();
        }
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"{"seed":"31415926535897932384","counter":7}"#);
        let mut restored: Generator = serde_json::from_str(&json).unwrap();
        assert_eq!(restored.next_f64().to_bits(), g.next_f64().to_bits());
        assert!(serde_json::from_str::<Generator>(r#"{"seed":"12","counter":0}"#).is_err());
    }
}
