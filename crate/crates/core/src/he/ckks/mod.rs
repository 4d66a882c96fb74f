//! RNS CKKS backend.
//!
//! Polynomials live in NTT form over the data primes `q_0..q_l` of their level.
//! Key switching uses one digit per data prime and a single special prime `P`
//! (the last entry of the modulus chain) for the mod-down.

mod cipher;
mod encoder;
mod evaluator;
mod keys;

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::math::modulus::Modulus;
use crate::math::ntt::NttTable;
use crate::params::HeParams;

pub use cipher::{CkksCiphertext, CkksDecryptor, CkksEncryptor, CkksPlaintext};
pub use evaluator::CkksEvaluator;
pub use keys::{EvaluationKeys, GaloisKeys, KeyBundle, PublicKey, RelinKey, SecretKey, SwitchingKey};

use encoder::Encoder;

/// Standard deviation of the discrete Gaussian error.
pub(crate) const ERROR_STD: f64 = 3.2;

/// Residues of one polynomial, one vector of length `d` per prime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnsPoly {
    pub(crate) res: Vec<Vec<u64>>,
}

impl RnsPoly {
    pub(crate) fn zero(count: usize, degree: usize) -> Self {
        Self { res: vec![vec![0u64; degree]; count] }
    }

    pub fn residue_count(&self) -> usize {
        self.res.len()
    }

    pub(crate) fn add_assign(&mut self, other: &RnsPoly, tables: &[&NttTable]) {
        for ((a, b), t) in self.res.iter_mut().zip(&other.res).zip(tables) {
            let q = t.modulus();
            for (x, &y) in a.iter_mut().zip(b) {
                *x = q.add(*x, y);
            }
        }
    }

    pub(crate) fn sub_assign(&mut self, other: &RnsPoly, tables: &[&NttTable]) {
        for ((a, b), t) in self.res.iter_mut().zip(&other.res).zip(tables) {
            let q = t.modulus();
            for (x, &y) in a.iter_mut().zip(b) {
                *x = q.sub(*x, y);
            }
        }
    }

    pub(crate) fn mul(&self, other: &RnsPoly, tables: &[&NttTable]) -> RnsPoly {
        let res = self
            .res
            .iter()
            .zip(&other.res)
            .zip(tables)
            .map(|((a, b), t)| {
                let q = t.modulus();
                a.iter().zip(b).map(|(&x, &y)| q.mul(x, y)).collect()
            })
            .collect();
        RnsPoly { res }
    }

    pub(crate) fn truncate(&mut self, count: usize) {
        self.res.truncate(count);
    }
}

#[derive(Debug)]
pub struct CkksContext {
    params: HeParams,
    data: Vec<NttTable>,
    special: NttTable,
    encoder: Encoder,
    /// `rescale_inv[l][i] = q_l^{-1} mod q_i` for `i < l`.
    rescale_inv: Vec<Vec<u64>>,
    /// `P^{-1} mod q_i`.
    special_inv: Vec<u64>,
    /// `P mod q_i`.
    special_mod: Vec<u64>,
    /// NTT-domain slot permutations keyed by Galois element.
    automorphisms: HashMap<u64, Vec<u32>>,
}

impl CkksContext {
    pub fn new(params: HeParams) -> Arc<Self> {
        let d = params.poly_degree();
        let data: Vec<NttTable> = params
            .data_primes()
            .iter()
            .map(|&q| NttTable::new(Modulus::new(q), d))
            .collect();
        let special = NttTable::new(Modulus::new(params.special_prime()), d);
        let rescale_inv = (0..data.len())
            .map(|l| {
                (0..l)
                    .map(|i| {
                        let qi = data[i].modulus();
                        qi.inv(data[l].modulus().value()).expect("distinct primes")
                    })
                    .collect()
            })
            .collect();
        let p = special.modulus().value();
        let special_inv = data.iter().map(|t| t.modulus().inv(p).expect("distinct primes")).collect();
        let special_mod = data.iter().map(|t| t.modulus().reduce(p)).collect();

        let exponents = ntt_exponents(&data[0]);
        let mut position = vec![0u32; 2 * d];
        for (k, &e) in exponents.iter().enumerate() {
            position[e as usize] = k as u32;
        }
        let two_d = 2 * d as u64;
        let mut automorphisms = HashMap::new();
        for t in 0..params.rotation_key_count() {
            let g = pow_mod(5, 1 << t, two_d);
            let perm = exponents
                .iter()
                .map(|&e| position[((g * e as u64) % two_d) as usize])
                .collect();
            automorphisms.insert(g, perm);
        }

        Arc::new(Self {
            encoder: Encoder::new(d),
            params,
            data,
            special,
            rescale_inv,
            special_inv,
            special_mod,
            automorphisms,
        })
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub(crate) fn degree(&self) -> usize {
        self.params.poly_degree()
    }

    /// Tables for the data primes `q_0..=q_level`.
    pub(crate) fn level_tables(&self, level: usize) -> Vec<&NttTable> {
        self.data[..=level].iter().collect()
    }

    /// Tables for `q_0..=q_level` followed by the special prime.
    pub(crate) fn extended_tables(&self, level: usize) -> Vec<&NttTable> {
        let mut t = self.level_tables(level);
        t.push(&self.special);
        t
    }

    pub(crate) fn data_table(&self, i: usize) -> &NttTable {
        &self.data[i]
    }

    pub(crate) fn special_table(&self) -> &NttTable {
        &self.special
    }

    pub(crate) fn max_level(&self) -> usize {
        self.data.len() - 1
    }

    /// Reduces signed coefficients into NTT form over the given primes.
    pub(crate) fn signed_to_ntt(&self, coeffs: &[i64], tables: &[&NttTable]) -> RnsPoly {
        let res = tables
            .iter()
            .map(|t| {
                let q = t.modulus();
                let mut r: Vec<u64> = coeffs.iter().map(|&c| q.reduce_i64(c)).collect();
                t.forward(&mut r);
                r
            })
            .collect();
        RnsPoly { res }
    }

    pub(crate) fn sample_uniform<R: Rng>(&self, rng: &mut R, tables: &[&NttTable]) -> RnsPoly {
        let d = self.degree();
        let res = tables
            .iter()
            .map(|t| {
                let q = t.modulus().value();
                (0..d).map(|_| rng.random_range(0..q)).collect()
            })
            .collect();
        RnsPoly { res }
    }

    pub(crate) fn sample_ternary<R: Rng>(&self, rng: &mut R) -> Vec<i64> {
        (0..self.degree()).map(|_| rng.random_range(-1i64..=1)).collect()
    }

    pub(crate) fn sample_error<R: Rng>(&self, rng: &mut R) -> Vec<i64> {
        let normal = Normal::new(0.0, ERROR_STD).expect("valid deviation");
        let bound = 6.0 * ERROR_STD;
        (0..self.degree())
            .map(|_| normal.sample(rng).clamp(-bound, bound).round() as i64)
            .collect()
    }

    pub(crate) fn automorphism(&self, galois_elt: u64) -> Option<&[u32]> {
        self.automorphisms.get(&galois_elt).map(|v| v.as_slice())
    }

    pub(crate) fn rescale_inv(&self, level: usize, i: usize) -> u64 {
        self.rescale_inv[level][i]
    }

    pub(crate) fn special_inv(&self, i: usize) -> u64 {
        self.special_inv[i]
    }

    pub(crate) fn special_mod(&self, i: usize) -> u64 {
        self.special_mod[i]
    }

    pub(crate) fn encoder(&self) -> &Encoder {
        &self.encoder
    }
}

pub(crate) fn pow_mod(base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    let mut b = base % m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = ((acc as u128 * b as u128) % m as u128) as u64;
        }
        b = ((b as u128 * b as u128) % m as u128) as u64;
        exp >>= 1;
    }
    acc
}

/// For each NTT output position k, the odd exponent e such that position k
/// holds `m(w^e)` for a fixed primitive 2d-th root w. Derived by transforming
/// the monomial X, so it does not depend on the butterfly ordering. The Galois
/// map `X -> X^g` sends `w^e` to `w^(g e)` for any such w.
fn ntt_exponents(table: &NttTable) -> Vec<u32> {
    let d = table.degree();
    let q = table.modulus();
    let mut x = vec![0u64; d];
    x[1] = 1;
    table.forward(&mut x);
    let w = x[0];
    let mut powers: HashMap<u64, u32> = HashMap::with_capacity(2 * d);
    let mut acc = 1u64;
    for e in 0..2 * d as u32 {
        powers.insert(acc, e);
        acc = q.mul(acc, w);
    }
    debug_assert_eq!(powers.len(), 2 * d);
    x.iter().map(|v| powers[v]).collect()
}
