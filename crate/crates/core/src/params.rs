//! Encryption parameter sets and their digests.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::he::HeError;
use crate::math::prime::ntt_primes;

/// Width of one packed feature vector; the registry block size.
pub const BLOCK: usize = 16;

/// Which named parameter set a [`HeParams`] came from. Seeded key generation is
/// only allowed under [`Profile::Test`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Production,
    Test,
    Custom,
}

/// 16-byte identifier binding ciphertexts and keys to one parameter set.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamsDigest(pub [u8; 16]);

impl fmt::Debug for ParamsDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParamsDigest({})", hex::encode(self.0))
    }
}

impl ParamsDigest {
    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl fmt::Display for ParamsDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeParams {
    profile: Profile,
    poly_degree: usize,
    modulus_chain: Vec<u32>,
    scale_bits: u32,
    /// Data primes q_0..q_L followed by the key-switching prime.
    primes: Vec<u64>,
    digest: ParamsDigest,
}

impl HeParams {
    /// d = 16,384, chain [60, 40, 40, 40, 60], scale 2^40.
    pub fn production() -> Self {
        Self::build(Profile::Production, 16384, vec![60, 40, 40, 40, 60], 40)
            .expect("production parameters are valid")
    }

    /// d = 4,096 with the production chain shape.
    pub fn test_profile() -> Self {
        Self::build(Profile::Test, 4096, vec![60, 40, 40, 40, 60], 40)
            .expect("test parameters are valid")
    }

    /// Arbitrary parameter set. The last chain entry is the key-switching prime;
    /// the first is the base prime that holds the final result.
    pub fn custom(poly_degree: usize, modulus_chain: Vec<u32>, scale_bits: u32) -> Result<Self, HeError> {
        Self::build(Profile::Custom, poly_degree, modulus_chain, scale_bits)
    }

    pub fn from_profile(profile: Profile) -> Result<Self, HeError> {
        match profile {
            Profile::Production => Ok(Self::production()),
            Profile::Test => Ok(Self::test_profile()),
            Profile::Custom => Err(HeError::Params("custom profile needs explicit parameters".into())),
        }
    }

    fn build(profile: Profile, poly_degree: usize, modulus_chain: Vec<u32>, scale_bits: u32) -> Result<Self, HeError> {
        if !poly_degree.is_power_of_two() || poly_degree < 16 {
            return Err(HeError::Params(format!("poly_degree {poly_degree} is not a power of two >= 16")));
        }
        if poly_degree > 1 << 16 {
            return Err(HeError::Params(format!("poly_degree {poly_degree} too large")));
        }
        if modulus_chain.len() < 2 {
            return Err(HeError::Params("modulus chain needs a data prime and a special prime".into()));
        }
        if let Some(b) = modulus_chain.iter().find(|&&b| !(20..=61).contains(&b)) {
            return Err(HeError::Params(format!("prime size {b} bits outside 20..=61")));
        }
        if scale_bits == 0 || scale_bits >= modulus_chain[0] {
            return Err(HeError::Params(format!("scale_bits {scale_bits} must be below the base prime size")));
        }
        let special_bits = *modulus_chain.last().unwrap();
        if modulus_chain.iter().any(|&b| b > special_bits) {
            return Err(HeError::Params("key-switching prime must be the largest in the chain".into()));
        }

        // Hand out the largest available primes per bit size, in chain order.
        let mut primes = Vec::with_capacity(modulus_chain.len());
        for &bits in &modulus_chain {
            let p = ntt_primes(bits, poly_degree, 1, &primes)[0];
            primes.push(p);
        }

        let mut h = Sha256::new();
        h.update(b"encmatch-params-v1");
        h.update((poly_degree as u64).to_le_bytes());
        h.update(scale_bits.to_le_bytes());
        for p in &primes {
            h.update(p.to_le_bytes());
        }
        let full = h.finalize();
        let mut digest = [0u8; 16];
        digest.copy_from_slice(&full[..16]);

        Ok(Self {
            profile,
            poly_degree,
            modulus_chain,
            scale_bits,
            primes,
            digest: ParamsDigest(digest),
        })
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn poly_degree(&self) -> usize {
        self.poly_degree
    }

    pub fn slot_count(&self) -> usize {
        self.poly_degree / 2
    }

    pub fn modulus_chain(&self) -> &[u32] {
        &self.modulus_chain
    }

    pub fn total_modulus_bits(&self) -> u32 {
        self.modulus_chain.iter().sum()
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn default_scale(&self) -> f64 {
        2f64.powi(self.scale_bits as i32)
    }

    /// Number of rescales a fresh ciphertext supports.
    pub fn max_level(&self) -> usize {
        self.modulus_chain.len() - 2
    }

    /// Data primes q_0..q_L.
    pub fn data_primes(&self) -> &[u64] {
        &self.primes[..self.primes.len() - 1]
    }

    pub fn special_prime(&self) -> u64 {
        *self.primes.last().unwrap()
    }

    pub fn digest(&self) -> ParamsDigest {
        self.digest
    }

    /// Registered vectors one ciphertext can hold.
    pub fn registry_capacity(&self) -> usize {
        self.slot_count() / BLOCK
    }

    /// log2(slot_count): number of power-of-two rotation keys.
    pub fn rotation_key_count(&self) -> usize {
        self.slot_count().trailing_zeros() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn production_profile_shape() {
        let p = HeParams::production();
        assert_eq!(p.poly_degree(), 16384);
        assert_eq!(p.slot_count(), 8192);
        assert_eq!(p.total_modulus_bits(), 240);
        assert_eq!(p.scale_bits(), 40);
        assert_eq!(p.max_level(), 3);
        assert_eq!(p.registry_capacity(), 512);
        assert_eq!(p.data_primes().len(), 4);
        for (&q, &bits) in p.data_primes().iter().zip(p.modulus_chain()) {
            assert_eq!(64 - q.leading_zeros(), bits);
            assert_eq!(q % (2 * 16384), 1);
        }
        assert_ne!(p.data_primes()[0], p.special_prime());
    }

    #[test]
    fn test_profile_shape() {
        let p = HeParams::test_profile();
        assert_eq!(p.slot_count(), 2048);
        assert_eq!(p.registry_capacity(), 128);
        assert_eq!(p.rotation_key_count(), 11);
        assert_ne!(p.digest(), HeParams::production().digest());
    }

    #[test]
    fn rejects_bad_degree() {
        assert!(matches!(HeParams::custom(3000, vec![60, 40, 60], 40), Err(HeError::Params(_))));
        assert!(matches!(HeParams::custom(4096, vec![60], 40), Err(HeError::Params(_))));
    }
}
