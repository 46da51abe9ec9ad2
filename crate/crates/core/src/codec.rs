//! Uniform-binning tokenizer for continuous coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("vocabulary size must be at least 2, got {0}")]
    VocabTooSmall(usize),
    #[error("half-range must be positive and finite, got {0}")]
    BadHalfRange(f64),
    #[error("cannot encode non-finite coordinate {0}")]
    NonFinite(f64),
    #[error("token {token} out of range for vocabulary {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
}

/// Partition of `[-half_range, half_range]` into `vocab` equal bins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenCodec {
    half_range: f64,
    vocab: usize,
}

/// Half-range used for sine trajectories (`|x| <= 1`).
pub const SINE_HALF_RANGE: f64 = 1.0;
/// Half-range used for Kepler positions; orbits stay within `a_max (1 + e_max) = 3.6`.
pub const KEPLER_HALF_RANGE: f64 = 4.0;

impl TokenCodec {
    pub fn new(half_range: f64, vocab: usize) -> Result<Self, CodecError> {
        if vocab < 2 {
            return Err(CodecError::VocabTooSmall(vocab));
        }
        if !(half_range > 0.0 && half_range.is_finite()) {
            return Err(CodecError::BadHalfRange(half_range));
        }
        Ok(TokenCodec { half_range, vocab })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn half_range(&self) -> f64 {
        self.half_range
    }

    /// Width of one bin, `2L / V`.
    pub fn bin_width(&self) -> f64 {
        2.0 * self.half_range / self.vocab as f64
    }

    /// `floor((x/L + 1) V / 2)`, clamped into `[0, V-1]`.
    pub fn encode(&self, x: f64) -> Result<usize, CodecError> {
        if !x.is_finite() {
            return Err(CodecError::NonFinite(x));
        }
        let k = ((x / self.half_range + 1.0) * self.vocab as f64 / 2.0).floor();
        Ok(k.clamp(0.0, (self.vocab - 1) as f64) as usize)
    }

    /// Center of bin `k`.
    pub fn decode(&self, k: usize) -> Result<f64, CodecError> {
        if k >= self.vocab {
            return Err(CodecError::TokenOutOfRange {
                token: k,
                vocab: self.vocab,
            });
        }
        Ok(((k as f64 + 0.5) * 2.0 / self.vocab as f64 - 1.0) * self.half_range)
    }

    /// Bin centers for every token, in token order.
    pub fn centers(&self) -> Vec<f64> {
        (0..self.vocab)
            .map(|k| ((k as f64 + 0.5) * 2.0 / self.vocab as f64 - 1.0) * self.half_range)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_edges_and_midpoint() {
        let c = TokenCodec::new(50.0, 7000).unwrap();
        assert_eq!(c.encode(0.0).unwrap(), 3500);
        assert_eq!(c.encode(-50.0).unwrap(), 0);
        // (1 + 1) * 3500 = 7000 overflows the vocabulary and is clamped
        assert_eq!(c.encode(50.0).unwrap(), 6999);
        assert_eq!(c.encode(1e9).unwrap(), 6999);
        assert_eq!(c.encode(-1e9).unwrap(), 0);
    }

    #[test]
    fn decode_bin_centers() {
        let c = TokenCodec::new(50.0, 7000).unwrap();
        assert!((c.decode(3500).unwrap() - 0.5 * 2.0 / 7000.0 * 50.0).abs() < 1e-12);
        assert!((c.decode(3500).unwrap() - 0.0071429).abs() < 1e-7);
        assert!((c.decode(0).unwrap() - (-49.992857)).abs() < 1e-6);
        let two = TokenCodec::new(1.0, 2).unwrap();
        assert_eq!(two.decode(0).unwrap(), -0.5);
        assert_eq!(two.decode(1).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        let c = TokenCodec::new(1.0, 4).unwrap();
        assert!(matches!(c.encode(f64::NAN), Err(CodecError::NonFinite(_))));
        assert!(matches!(c.decode(4), Err(CodecError::TokenOutOfRange { .. })));
        assert!(TokenCodec::new(1.0, 1).is_err());
        assert!(TokenCodec::new(0.0, 8).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_one_bin(x in -0.999_999f64..0.999_999, vocab in 2usize..8000, l in 0.1f64..100.0) {
            let c = TokenCodec::new(l, vocab).unwrap();
            let y = c.decode(c.encode(x * l).unwrap()).unwrap();
            prop_assert!((y - x * l).abs() <= l / vocab as f64 * (1.0 + 1e-12));
        }

        #[test]
        fn monotone(a in -2.0f64..2.0, b in -2.0f64..2.0, vocab in 2usize..5000) {
            let c = TokenCodec::new(1.0, vocab).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(c.encode(lo).unwrap() <= c.encode(hi).unwrap());
        }

        #[test]
        fn idempotent_on_centers(k in 0usize..7000) {
            let c = TokenCodec::new(4.0, 7000).unwrap();
            let x = c.decode(k).unwrap();
            prop_assert_eq!(c.encode(x).unwrap(), k);
        }
    }
}
