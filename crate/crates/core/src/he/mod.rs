//! Leveled slot-homomorphic encryption.
//!
//! Two backends implement the same contract:
//!
//! - [`ckks`]: RNS CKKS over `Z_Q[X]/(X^d + 1)` with NTT arithmetic, hybrid key
//!   switching through one special prime, and power-of-two Galois keys.
//! - [`clear`]: the slots in the clear, with the same level and scale
//!   bookkeeping, so depth and key errors surface identically.
//!
//! Server code is written against [`Evaluator`], which is built from evaluation
//! keys only. Decryption lives behind [`Decryptor`], which only the client holds.

pub mod ckks;
pub mod clear;
pub(crate) mod wire;

use std::fmt::Debug;

use thiserror::Error;

use crate::params::{HeParams, ParamsDigest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("expected {expected} slot values, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("operands not aligned: {0}")]
    Alignment(String),
    #[error("multiplicative depth exhausted: ciphertext is at level 0")]
    DepthExhausted,
    #[error("missing key: {0}")]
    MissingKey(String),
    #[error("parameter digest mismatch: expected {expected}, found {found}")]
    ParamsMismatch { expected: ParamsDigest, found: ParamsDigest },
    #[error("malformed encoding: {0}")]
    Format(String),
    #[error("cannot encode: {0}")]
    Encode(String),
    #[error("cannot decode: {0}")]
    Decode(String),
}

pub type HeResult<T> = Result<T, HeError>;

/// Ciphertext metadata common to both backends.
pub trait HeCiphertext: Clone + Send + Sync + Debug + 'static {
    fn level(&self) -> usize;
    fn scale(&self) -> f64;
    fn params_digest(&self) -> ParamsDigest;
    fn to_bytes(&self) -> Vec<u8>;
}

/// Server-side homomorphic operations. Holds no secret material.
pub trait Evaluator: Send + Sync + 'static {
    type Ciphertext: HeCiphertext;
    type Plaintext: Clone + Send + Sync + Debug;

    fn params(&self) -> &HeParams;

    /// Encodes `values` (length `slot_count`) at the given level and scale.
    fn encode(&self, values: &[f64], level: usize, scale: f64) -> HeResult<Self::Plaintext>;

    fn decode(&self, plaintext: &Self::Plaintext) -> HeResult<Vec<f64>>;

    /// Encodes a multiplicand for [`Evaluator::mul_plain`] at `level` with scale
    /// equal to the prime that the following rescale removes, so the product
    /// keeps the ciphertext's scale.
    fn encode_multiplier(&self, values: &[f64], level: usize) -> HeResult<Self::Plaintext> {
        let scale = self.params().data_primes()[level] as f64;
        self.encode(values, level, scale)
    }

    /// Transparent encryption of zero, used to seed an empty registry shard.
    fn zero(&self, level: usize, scale: f64) -> HeResult<Self::Ciphertext>;

    fn add(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> HeResult<Self::Ciphertext>;
    fn sub(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> HeResult<Self::Ciphertext>;
    fn add_plain(&self, a: &Self::Ciphertext, p: &Self::Plaintext) -> HeResult<Self::Ciphertext>;
    /// Slotwise product followed by a rescale; consumes one level.
    fn mul_plain(&self, a: &Self::Ciphertext, p: &Self::Plaintext) -> HeResult<Self::Ciphertext>;
    /// Slotwise product, relinearized and rescaled; consumes one level.
    fn mul(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> HeResult<Self::Ciphertext>;
    /// Cyclic rotation: positive `steps` moves slot `i + steps` into slot `i`.
    fn rotate(&self, a: &Self::Ciphertext, steps: i64) -> HeResult<Self::Ciphertext>;
    /// Drops moduli down to `level` without touching the scale.
    fn drop_to_level(&self, a: &Self::Ciphertext, level: usize) -> HeResult<Self::Ciphertext>;

    fn ciphertext_from_bytes(&self, bytes: &[u8]) -> HeResult<Self::Ciphertext>;
}

/// Client-side public-key encryption of slot vectors.
pub trait Encryptor: Send + Sync {
    type Ciphertext: HeCiphertext;

    fn params(&self) -> &HeParams;

    /// Encodes at the top level and default scale, then encrypts.
    fn encrypt_values(&self, values: &[f64]) -> HeResult<Self::Ciphertext>;
}

/// Secret-key decryption. Only ever constructed on the client.
pub trait Decryptor: Send + Sync {
    type Ciphertext: HeCiphertext;

    fn params(&self) -> &HeParams;

    fn decrypt(&self, c: &Self::Ciphertext) -> HeResult<Vec<f64>>;
}

/// Power-of-two decomposition of a rotation into left steps `2^t`,
/// `t < log2(slots)`. Returns the exponents t in ascending order.
pub fn rotation_decomposition(steps: i64, slots: usize) -> Vec<u32> {
    let normalized = steps.rem_euclid(slots as i64) as u64;
    (0..slots.trailing_zeros()).filter(|t| normalized >> t & 1 == 1).collect()
}

/// Relative scale tolerance for combining two ciphertexts.
pub(crate) const SCALE_TOLERANCE: f64 = 1.0 / (1u64 << 30) as f64;

pub(crate) fn scales_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= SCALE_TOLERANCE * a.abs().max(b.abs())
}

pub(crate) fn check_len(values: &[f64], slots: usize) -> HeResult<()> {
    if values.len() != slots {
        return Err(HeError::Shape { expected: slots, actual: values.len() });
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(HeError::Encode(format!("non-finite slot value {v}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposition_covers_negative_steps() {
        assert_eq!(rotation_decomposition(0, 2048), Vec::<u32>::new());
        assert_eq!(rotation_decomposition(3, 2048), vec![0, 1]);
        assert_eq!(rotation_decomposition(2048 + 16, 2048), vec![4]);
        // -1 == 2047 == 2^0 + ... + 2^10
        assert_eq!(rotation_decomposition(-1, 2048), (0..11).collect::<Vec<_>>());
    }
}
