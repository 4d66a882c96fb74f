//! Key generation and key files.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::he::wire::{expect_digest, Reader, Writer};
use crate::he::{HeError, HeResult};
use crate::params::{HeParams, Profile};

use super::{pow_mod, CkksContext, RnsPoly};

const PUBLIC_MAGIC: &[u8; 8] = b"EMPUBKEY";
const GALOIS_MAGIC: &[u8; 8] = b"EMGALKEY";
const RELIN_MAGIC: &[u8; 8] = b"EMRLNKEY";
const SECRET_MAGIC: &[u8; 8] = b"EMSECKEY";

/// Ternary secret in NTT form over every data prime and the special prime.
#[derive(Clone)]
pub struct SecretKey {
    pub(crate) s: RnsPoly,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// `(b, a)` with `b = -a s + e` over the data primes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    pub(crate) b: RnsPoly,
    pub(crate) a: RnsPoly,
}

/// One `(b_j, a_j)` pair per data prime `q_j`, each over all data primes plus
/// the special prime, encrypting `P * s'` in the `q_j` residue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchingKey {
    pub(crate) digits: Vec<(RnsPoly, RnsPoly)>,
}

impl SwitchingKey {
    pub fn byte_size(&self) -> usize {
        self.digits
            .iter()
            .map(|(b, a)| (b.res.len() + a.res.len()) * b.res[0].len() * 8)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelinKey {
    pub(crate) key: SwitchingKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaloisKey {
    pub(crate) galois_elt: u64,
    pub(crate) key: SwitchingKey,
}

/// Rotation keys indexed by left-rotation step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GaloisKeys {
    pub(crate) keys: BTreeMap<i64, GaloisKey>,
}

impl GaloisKeys {
    pub fn steps(&self) -> impl Iterator<Item = i64> + '_ {
        self.keys.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub(crate) fn get(&self, step: i64) -> Option<&GaloisKey> {
        self.keys.get(&step)
    }
}

/// Everything a server needs; never contains the secret key.
#[derive(Debug, Clone)]
pub struct EvaluationKeys {
    pub relin: Option<RelinKey>,
    pub galois: GaloisKeys,
}

/// Output of key generation. Split it with [`KeyBundle::evaluation_keys`] and
/// friends before anything leaves the client.
#[derive(Debug, Clone)]
pub struct KeyBundle {
    ctx: Arc<CkksContext>,
    pub secret: SecretKey,
    pub public: PublicKey,
    pub relin: RelinKey,
    pub galois: GaloisKeys,
}

impl KeyBundle {
    /// Generates all four keys. A seed is only accepted for the test profile.
    pub fn generate(params: &HeParams, seed: Option<u64>) -> HeResult<Self> {
        Self::generate_with_context(CkksContext::new(params.clone()), seed)
    }

    pub fn generate_with_context(ctx: Arc<CkksContext>, seed: Option<u64>) -> HeResult<Self> {
        let mut rng = match seed {
            Some(_) if ctx.params().profile() != Profile::Test => {
                return Err(HeError::Params("seeded key generation is only allowed in the test profile".into()))
            }
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_os_rng(),
        };
        let all = ctx.extended_tables(ctx.max_level());
        let data = ctx.level_tables(ctx.max_level());

        let s_coeffs = ctx.sample_ternary(&mut rng);
        let s = ctx.signed_to_ntt(&s_coeffs, &all);
        let secret = SecretKey { s };

        let a = ctx.sample_uniform(&mut rng, &data);
        let e = ctx.signed_to_ntt(&ctx.sample_error(&mut rng), &data);
        let mut s_data = secret.s.clone();
        s_data.truncate(data.len());
        let mut b = e;
        b.sub_assign(&a.mul(&s_data, &data), &data);
        let public = PublicKey { b, a };

        let s_squared = secret.s.mul(&secret.s, &all);
        let relin = RelinKey { key: switching_key(&ctx, &mut rng, &secret, &s_squared) };

        let mut galois = GaloisKeys::default();
        let two_d = 2 * ctx.degree() as u64;
        for t in 0..ctx.params().rotation_key_count() {
            let step = 1i64 << t;
            let g = pow_mod(5, step as u64, two_d);
            let rotated = apply_galois_signed(&s_coeffs, g);
            let s_g = ctx.signed_to_ntt(&rotated, &all);
            let key = switching_key(&ctx, &mut rng, &secret, &s_g);
            galois.keys.insert(step, GaloisKey { galois_elt: g, key });
        }

        Ok(Self { ctx, secret, public, relin, galois })
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    pub fn evaluation_keys(&self) -> EvaluationKeys {
        EvaluationKeys { relin: Some(self.relin.clone()), galois: self.galois.clone() }
    }
}

/// `X -> X^g` on signed coefficients.
fn apply_galois_signed(coeffs: &[i64], g: u64) -> Vec<i64> {
    let d = coeffs.len();
    let mut out = vec![0i64; d];
    for (i, &c) in coeffs.iter().enumerate() {
        let e = (g as usize * i) % (2 * d);
        if e < d {
            out[e] += c;
        } else {
            out[e - d] -= c;
        }
    }
    out
}

fn switching_key(ctx: &CkksContext, rng: &mut ChaCha20Rng, secret: &SecretKey, target: &RnsPoly) -> SwitchingKey {
    let all = ctx.extended_tables(ctx.max_level());
    let digits = (0..=ctx.max_level())
        .map(|j| {
            let a = ctx.sample_uniform(rng, &all);
            let mut b = ctx.signed_to_ntt(&ctx.sample_error(rng), &all);
            b.sub_assign(&a.mul(&secret.s, &all), &all);
            let q = all[j].modulus();
            let p_mod = ctx.special_mod(j);
            for (x, &t) in b.res[j].iter_mut().zip(&target.res[j]) {
                *x = q.add(*x, q.mul(p_mod, t));
            }
            (b, a)
        })
        .collect();
    SwitchingKey { digits }
}

fn write_poly(w: &mut Writer, p: &RnsPoly) {
    for r in &p.res {
        w.u64s(r);
    }
}

fn read_poly(r: &mut Reader<'_>, ctx: &CkksContext, count: usize, with_special: bool) -> HeResult<RnsPoly> {
    let tables = if with_special {
        let mut t = ctx.level_tables(count - 2);
        t.push(ctx.special_table());
        t
    } else {
        ctx.level_tables(count - 1)
    };
    let d = ctx.degree();
    let res = tables
        .iter()
        .map(|t| r.u64s_below(d, t.modulus().value()))
        .collect::<HeResult<_>>()?;
    Ok(RnsPoly { res })
}

fn write_switching_key(w: &mut Writer, k: &SwitchingKey) {
    w.u32(k.digits.len() as u32);
    w.u32(k.digits[0].0.res.len() as u32);
    for (b, a) in &k.digits {
        write_poly(w, b);
        write_poly(w, a);
    }
}

fn read_switching_key(r: &mut Reader<'_>, ctx: &CkksContext) -> HeResult<SwitchingKey> {
    let digits = r.u32()? as usize;
    let residues = r.u32()? as usize;
    if digits != ctx.max_level() + 1 || residues != ctx.max_level() + 2 {
        return Err(HeError::Format(format!("switching key shape {digits}x{residues} does not match parameters")));
    }
    let digits = (0..digits)
        .map(|_| Ok((read_poly(r, ctx, residues, true)?, read_poly(r, ctx, residues, true)?)))
        .collect::<HeResult<_>>()?;
    Ok(SwitchingKey { digits })
}

impl SecretKey {
    pub fn to_bytes(&self, ctx: &CkksContext) -> Vec<u8> {
        let mut w = Writer::new(SECRET_MAGIC, ctx.params().digest(), self.s.res.len() * ctx.degree() * 8);
        w.u32(self.s.res.len() as u32);
        write_poly(&mut w, &self.s);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], ctx: &CkksContext) -> HeResult<Self> {
        let (mut r, digest) = Reader::open(bytes, SECRET_MAGIC)?;
        expect_digest(digest, ctx.params().digest())?;
        let count = r.u32()? as usize;
        if count != ctx.max_level() + 2 {
            return Err(HeError::Format("secret key residue count mismatch".into()));
        }
        let s = read_poly(&mut r, ctx, count, true)?;
        r.finish()?;
        Ok(Self { s })
    }
}

impl PublicKey {
    pub fn to_bytes(&self, ctx: &CkksContext) -> Vec<u8> {
        let mut w = Writer::new(PUBLIC_MAGIC, ctx.params().digest(), 2 * self.b.res.len() * ctx.degree() * 8);
        w.u32(self.b.res.len() as u32);
        write_poly(&mut w, &self.b);
        write_poly(&mut w, &self.a);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], ctx: &CkksContext) -> HeResult<Self> {
        let (mut r, digest) = Reader::open(bytes, PUBLIC_MAGIC)?;
        expect_digest(digest, ctx.params().digest())?;
        let count = r.u32()? as usize;
        if count != ctx.max_level() + 1 {
            return Err(HeError::Format("public key residue count mismatch".into()));
        }
        let b = read_poly(&mut r, ctx, count, false)?;
        let a = read_poly(&mut r, ctx, count, false)?;
        r.finish()?;
        Ok(Self { b, a })
    }
}

impl RelinKey {
    pub fn to_bytes(&self, ctx: &CkksContext) -> Vec<u8> {
        let mut w = Writer::new(RELIN_MAGIC, ctx.params().digest(), self.key.byte_size() + 8);
        write_switching_key(&mut w, &self.key);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], ctx: &CkksContext) -> HeResult<Self> {
        let (mut r, digest) = Reader::open(bytes, RELIN_MAGIC)?;
        expect_digest(digest, ctx.params().digest())?;
        let key = read_switching_key(&mut r, ctx)?;
        r.finish()?;
        Ok(Self { key })
    }
}

impl GaloisKeys {
    pub fn to_bytes(&self, ctx: &CkksContext) -> Vec<u8> {
        let size: usize = self.keys.values().map(|k| k.key.byte_size() + 24).sum();
        let mut w = Writer::new(GALOIS_MAGIC, ctx.params().digest(), size + 4);
        w.u32(self.keys.len() as u32);
        for (&step, k) in &self.keys {
            w.i64(step);
            w.u64(k.galois_elt);
            write_switching_key(&mut w, &k.key);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], ctx: &CkksContext) -> HeResult<Self> {
        let (mut r, digest) = Reader::open(bytes, GALOIS_MAGIC)?;
        expect_digest(digest, ctx.params().digest())?;
        let count = r.u32()? as usize;
        let two_d = 2 * ctx.degree() as u64;
        let slots = ctx.params().slot_count() as i64;
        let mut keys = BTreeMap::new();
        for _ in 0..count {
            let step = r.i64()?;
            let galois_elt = r.u64()?;
            if step <= 0 || step >= slots || step.count_ones() != 1 {
                return Err(HeError::Format(format!("rotation step {step} is not a supported power of two")));
            }
            if galois_elt != pow_mod(5, step as u64, two_d) {
                return Err(HeError::Format(format!("galois element {galois_elt} does not match step {step}")));
            }
            let key = read_switching_key(&mut r, ctx)?;
            keys.insert(step, GaloisKey { galois_elt, key });
        }
        r.finish()?;
        Ok(Self { keys })
    }
}
