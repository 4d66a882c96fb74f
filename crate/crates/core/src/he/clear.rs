//! Clear-slot reference backend.
//!
//! Slots are held as plain `f64`. Level, scale, rotation-key and relinearization
//! bookkeeping mirror the lattice backend so the same depth and key errors fire.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::params::{HeParams, ParamsDigest};

use super::wire::{expect_digest, Reader, Writer};
use super::{check_len, rotation_decomposition, scales_match};
use super::{Decryptor, Encryptor, Evaluator, HeCiphertext, HeError, HeResult};

const CLEAR_MAGIC: &[u8; 8] = b"EMCLEARC";

#[derive(Debug, Clone, PartialEq)]
pub struct ClearCiphertext {
    slots: Vec<f64>,
    level: usize,
    scale: f64,
    digest: ParamsDigest,
}

impl ClearCiphertext {
    pub fn slots(&self) -> &[f64] {
        &self.slots
    }
}

impl HeCiphertext for ClearCiphertext {
    fn level(&self) -> usize {
        self.level
    }

    fn scale(&self) -> f64 {
        self.scale
    }

    fn params_digest(&self) -> ParamsDigest {
        self.digest
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(CLEAR_MAGIC, self.digest, 16 + self.slots.len() * 8);
        w.u32(self.level as u32);
        w.f64(self.scale);
        w.u32(1);
        for &v in &self.slots {
            w.f64(v);
        }
        w.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearPlaintext {
    slots: Vec<f64>,
    level: usize,
    scale: f64,
}

/// Stand-ins for the lattice keys: which rotations and relinearization the
/// evaluator may perform.
#[derive(Debug, Clone)]
pub struct ClearEvaluationKeys {
    pub rotation_steps: BTreeSet<i64>,
    pub relin: bool,
}

impl ClearEvaluationKeys {
    /// Same power-of-two step set the lattice key generator produces.
    pub fn full(params: &HeParams) -> Self {
        Self {
            rotation_steps: (0..params.rotation_key_count()).map(|t| 1i64 << t).collect(),
            relin: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClearEvaluator {
    params: Arc<HeParams>,
    keys: ClearEvaluationKeys,
}

impl ClearEvaluator {
    pub fn new(params: HeParams, keys: ClearEvaluationKeys) -> Self {
        Self { params: Arc::new(params), keys }
    }

    pub fn with_full_keys(params: HeParams) -> Self {
        let keys = ClearEvaluationKeys::full(&params);
        Self::new(params, keys)
    }

    fn check(&self, c: &ClearCiphertext) -> HeResult<()> {
        expect_digest(c.digest, self.params.digest())
    }

    fn check_pair(&self, a: &ClearCiphertext, b: &ClearCiphertext) -> HeResult<()> {
        self.check(a)?;
        self.check(b)?;
        if a.level != b.level {
            return Err(HeError::Alignment(format!("levels {} and {}", a.level, b.level)));
        }
        if !scales_match(a.scale, b.scale) {
            return Err(HeError::Alignment(format!("scales {} and {}", a.scale, b.scale)));
        }
        Ok(())
    }

    fn rescaled_scale(&self, scale: f64, level: usize) -> f64 {
        scale / self.params.data_primes()[level] as f64
    }

    fn map2(&self, a: &ClearCiphertext, b: &[f64], f: impl Fn(f64, f64) -> f64) -> ClearCiphertext {
        ClearCiphertext {
            slots: a.slots.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            level: a.level,
            scale: a.scale,
            digest: a.digest,
        }
    }
}

impl Evaluator for ClearEvaluator {
    type Ciphertext = ClearCiphertext;
    type Plaintext = ClearPlaintext;

    fn params(&self) -> &HeParams {
        &self.params
    }

    fn encode(&self, values: &[f64], level: usize, scale: f64) -> HeResult<ClearPlaintext> {
        check_len(values, self.params.slot_count())?;
        if level > self.params.max_level() {
            return Err(HeError::Encode(format!("level {level} above maximum {}", self.params.max_level())));
        }
        if !(scale.is_finite() && scale >= 1.0) {
            return Err(HeError::Encode(format!("invalid scale {scale}")));
        }
        Ok(ClearPlaintext { slots: values.to_vec(), level, scale })
    }

    fn decode(&self, plaintext: &ClearPlaintext) -> HeResult<Vec<f64>> {
        if plaintext.slots.len() != self.params.slot_count() {
            return Err(HeError::Decode("slot count mismatch".into()));
        }
        Ok(plaintext.slots.clone())
    }

    fn zero(&self, level: usize, scale: f64) -> HeResult<ClearCiphertext> {
        if level > self.params.max_level() {
            return Err(HeError::Alignment(format!("level {level} above maximum")));
        }
        Ok(ClearCiphertext {
            slots: vec![0.0; self.params.slot_count()],
            level,
            scale,
            digest: self.params.digest(),
        })
    }

    fn add(&self, a: &ClearCiphertext, b: &ClearCiphertext) -> HeResult<ClearCiphertext> {
        self.check_pair(a, b)?;
        Ok(self.map2(a, &b.slots, |x, y| x + y))
    }

    fn sub(&self, a: &ClearCiphertext, b: &ClearCiphertext) -> HeResult<ClearCiphertext> {
        self.check_pair(a, b)?;
        Ok(self.map2(a, &b.slots, |x, y| x - y))
    }

    fn add_plain(&self, a: &ClearCiphertext, p: &ClearPlaintext) -> HeResult<ClearCiphertext> {
        self.check(a)?;
        if a.level != p.level {
            return Err(HeError::Alignment(format!("ciphertext level {} vs plaintext level {}", a.level, p.level)));
        }
        if !scales_match(a.scale, p.scale) {
            return Err(HeError::Alignment(format!("ciphertext scale {} vs plaintext scale {}", a.scale, p.scale)));
        }
        Ok(self.map2(a, &p.slots, |x, y| x + y))
    }

    fn mul_plain(&self, a: &ClearCiphertext, p: &ClearPlaintext) -> HeResult<ClearCiphertext> {
        self.check(a)?;
        if a.level != p.level {
            return Err(HeError::Alignment(format!("ciphertext level {} vs plaintext level {}", a.level, p.level)));
        }
        if a.level == 0 {
            return Err(HeError::DepthExhausted);
        }
        let mut out = self.map2(a, &p.slots, |x, y| x * y);
        out.scale = self.rescaled_scale(a.scale * p.scale, a.level);
        out.level -= 1;
        Ok(out)
    }

    fn mul(&self, a: &ClearCiphertext, b: &ClearCiphertext) -> HeResult<ClearCiphertext> {
        self.check_pair(a, b)?;
        if a.level == 0 {
            return Err(HeError::DepthExhausted);
        }
        if !self.keys.relin {
            return Err(HeError::MissingKey("relinearization key".into()));
        }
        let mut out = self.map2(a, &b.slots, |x, y| x * y);
        out.scale = self.rescaled_scale(a.scale * b.scale, a.level);
        out.level -= 1;
        Ok(out)
    }

    fn rotate(&self, a: &ClearCiphertext, steps: i64) -> HeResult<ClearCiphertext> {
        self.check(a)?;
        let n = self.params.slot_count();
        for t in rotation_decomposition(steps, n) {
            if !self.keys.rotation_steps.contains(&(1i64 << t)) {
                return Err(HeError::MissingKey(format!("galois key for step {}", 1i64 << t)));
            }
        }
        let k = steps.rem_euclid(n as i64) as usize;
        let mut slots = a.slots.clone();
        slots.rotate_left(k);
        Ok(ClearCiphertext { slots, ..a.clone() })
    }

    fn drop_to_level(&self, a: &ClearCiphertext, level: usize) -> HeResult<ClearCiphertext> {
        self.check(a)?;
        if level > a.level {
            return Err(HeError::Alignment(format!("cannot raise level {} to {level}", a.level)));
        }
        Ok(ClearCiphertext { level, ..a.clone() })
    }

    fn ciphertext_from_bytes(&self, bytes: &[u8]) -> HeResult<ClearCiphertext> {
        let (mut r, digest) = Reader::open(bytes, CLEAR_MAGIC)?;
        expect_digest(digest, self.params.digest())?;
        let level = r.u32()? as usize;
        if level > self.params.max_level() {
            return Err(HeError::Format(format!("level {level} above maximum")));
        }
        let scale = r.f64()?;
        if r.u32()? != 1 {
            return Err(HeError::Format("clear ciphertexts have one component".into()));
        }
        let slots = (0..self.params.slot_count()).map(|_| r.f64()).collect::<HeResult<Vec<_>>>()?;
        r.finish()?;
        Ok(ClearCiphertext { slots, level, scale, digest })
    }
}

/// "Encrypts" by wrapping the slots at the top level and default scale.
#[derive(Debug, Clone)]
pub struct ClearEncryptor {
    params: Arc<HeParams>,
}

impl ClearEncryptor {
    pub fn new(params: HeParams) -> Self {
        Self { params: Arc::new(params) }
    }
}

impl Encryptor for ClearEncryptor {
    type Ciphertext = ClearCiphertext;

    fn params(&self) -> &HeParams {
        &self.params
    }

    fn encrypt_values(&self, values: &[f64]) -> HeResult<ClearCiphertext> {
        check_len(values, self.params.slot_count())?;
        Ok(ClearCiphertext {
            slots: values.to_vec(),
            level: self.params.max_level(),
            scale: self.params.default_scale(),
            digest: self.params.digest(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ClearDecryptor {
    params: Arc<HeParams>,
}

impl ClearDecryptor {
    pub fn new(params: HeParams) -> Self {
        Self { params: Arc::new(params) }
    }
}

impl Decryptor for ClearDecryptor {
    type Ciphertext = ClearCiphertext;

    fn params(&self) -> &HeParams {
        &self.params
    }

    fn decrypt(&self, c: &ClearCiphertext) -> HeResult<Vec<f64>> {
        expect_digest(c.digest, self.params.digest())?;
        Ok(c.slots.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_group_law_is_exact() {
        let params = HeParams::test_profile();
        let eval = ClearEvaluator::with_full_keys(params.clone());
        let enc = ClearEncryptor::new(params);
        let v: Vec<f64> = (0..2048).map(|i| i as f64).collect();
        let c = enc.encrypt_values(&v).unwrap();
        for (a, b) in [(3i64, 5i64), (-16, 2047), (1000, 1100)] {
            let lhs = eval.rotate(&eval.rotate(&c, a).unwrap(), b).unwrap();
            let rhs = eval.rotate(&c, (a + b).rem_euclid(2048)).unwrap();
            assert_eq!(lhs.slots, rhs.slots);
        }
        assert_eq!(eval.rotate(&c, 3).unwrap().slots[0], 3.0);
    }

    #[test]
    fn depth_and_key_errors_mirror_lattice() {
        let params = HeParams::test_profile();
        let enc = ClearEncryptor::new(params.clone());
        let c = enc.encrypt_values(&vec![1.0; 2048]).unwrap();
        let eval = ClearEvaluator::with_full_keys(params.clone());
        let mut x = c.clone();
        for expected in [2, 1, 0] {
            x = eval.mul(&x, &x).unwrap();
            assert_eq!(x.level, expected);
        }
        assert_eq!(eval.mul(&x, &x), Err(HeError::DepthExhausted));

        let no_keys = ClearEvaluator::new(params, ClearEvaluationKeys { rotation_steps: BTreeSet::new(), relin: false });
        assert!(matches!(no_keys.rotate(&c, 1), Err(HeError::MissingKey(_))));
        assert!(matches!(no_keys.mul(&c, &c), Err(HeError::MissingKey(_))));
        assert!(no_keys.rotate(&c, 0).is_ok());
    }
}
