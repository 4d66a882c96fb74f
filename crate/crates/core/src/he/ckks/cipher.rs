use std::sync::Arc;

use crate::he::wire::{expect_digest, Reader, Writer};
use crate::he::{check_len, Decryptor, Encryptor, HeCiphertext, HeError, HeResult};
use crate::params::{HeParams, ParamsDigest};

use super::keys::{PublicKey, SecretKey};
use super::{CkksContext, RnsPoly};

pub(crate) const CIPHERTEXT_MAGIC: &[u8; 8] = b"EMCKKSCT";

/// Encoded slot vector in NTT form over `q_0..=q_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct CkksPlaintext {
    pub(crate) poly: RnsPoly,
    pub(crate) level: usize,
    pub(crate) scale: f64,
}

impl CkksPlaintext {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CkksCiphertext {
    pub(crate) parts: Vec<RnsPoly>,
    pub(crate) level: usize,
    pub(crate) scale: f64,
    pub(crate) digest: ParamsDigest,
}

impl CkksCiphertext {
    pub fn component_count(&self) -> usize {
        self.parts.len()
    }

    pub fn from_bytes(bytes: &[u8], ctx: &CkksContext) -> HeResult<Self> {
        let (mut r, digest) = Reader::open(bytes, CIPHERTEXT_MAGIC)?;
        expect_digest(digest, ctx.params().digest())?;
        let level = r.u32()? as usize;
        if level > ctx.max_level() {
            return Err(HeError::Format(format!("level {level} above maximum {}", ctx.max_level())));
        }
        let scale = r.f64()?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(HeError::Format(format!("invalid scale {scale}")));
        }
        let components = r.u32()? as usize;
        if !(2..=3).contains(&components) {
            return Err(HeError::Format(format!("unsupported component count {components}")));
        }
        let d = ctx.degree();
        let mut parts = Vec::with_capacity(components);
        for _ in 0..components {
            let res = (0..=level)
                .map(|i| r.u64s_below(d, ctx.data_table(i).modulus().value()))
                .collect::<HeResult<_>>()?;
            parts.push(RnsPoly { res });
        }
        r.finish()?;
        Ok(Self { parts, level, scale, digest })
    }
}

impl HeCiphertext for CkksCiphertext {
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
        let d = self.parts[0].res[0].len();
        let mut w = Writer::new(CIPHERTEXT_MAGIC, self.digest, 16 + self.parts.len() * (self.level + 1) * d * 8);
        w.u32(self.level as u32);
        w.f64(self.scale);
        w.u32(self.parts.len() as u32);
        for p in &self.parts {
            for r in &p.res {
                w.u64s(r);
            }
        }
        w.finish()
    }
}

/// Rounds `values * scale` onto the polynomial ring at `level`.
pub(crate) fn encode(ctx: &CkksContext, values: &[f64], level: usize, scale: f64) -> HeResult<CkksPlaintext> {
    check_len(values, ctx.params().slot_count())?;
    if level > ctx.max_level() {
        return Err(HeError::Encode(format!("level {level} above maximum {}", ctx.max_level())));
    }
    if !(scale.is_finite() && scale >= 1.0) {
        return Err(HeError::Encode(format!("invalid scale {scale}")));
    }
    let coeffs = ctx.encoder().embed_inverse(values);
    let limit = 2f64.powi(62);
    let mut ints = Vec::with_capacity(coeffs.len());
    for c in coeffs {
        let x = (c * scale).round();
        if x.abs() >= limit {
            return Err(HeError::Encode("scaled value exceeds 62 bits".into()));
        }
        ints.push(x as i64);
    }
    let poly = ctx.signed_to_ntt(&ints, &ctx.level_tables(level));
    Ok(CkksPlaintext { poly, level, scale })
}

/// Decodes from the base prime only: every value this crate decrypts is far
/// below `q_0 / 2`, so its centered residue mod `q_0` is the value itself.
pub(crate) fn decode_base(ctx: &CkksContext, base_ntt: &[u64], scale: f64) -> Vec<f64> {
    let t = ctx.data_table(0);
    let mut coeffs = base_ntt.to_vec();
    t.inverse(&mut coeffs);
    let q = t.modulus();
    let real: Vec<f64> = coeffs.iter().map(|&c| q.center(c) as f64 / scale).collect();
    ctx.encoder().embed(&real)
}

pub(crate) fn decode(ctx: &CkksContext, p: &CkksPlaintext) -> HeResult<Vec<f64>> {
    if p.poly.res.len() != p.level + 1 || p.poly.res.iter().any(|r| r.len() != ctx.degree()) {
        return Err(HeError::Decode("plaintext residues do not match its level".into()));
    }
    if !(p.scale.is_finite() && p.scale > 0.0) {
        return Err(HeError::Decode(format!("invalid scale {}", p.scale)));
    }
    let out = decode_base(ctx, &p.poly.res[0], p.scale);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(HeError::Decode("non-finite slot".into()));
    }
    Ok(out)
}

/// Public-key encryptor. Randomness comes from the thread-local CSPRNG.
#[derive(Debug, Clone)]
pub struct CkksEncryptor {
    ctx: Arc<CkksContext>,
    pk: PublicKey,
}

impl CkksEncryptor {
    pub fn new(ctx: Arc<CkksContext>, pk: PublicKey) -> Self {
        Self { ctx, pk }
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    pub fn encode(&self, values: &[f64]) -> HeResult<CkksPlaintext> {
        encode(&self.ctx, values, self.ctx.max_level(), self.ctx.params().default_scale())
    }

    /// Encrypts a plaintext at the top level: `(b u + e0 + m, a u + e1)`.
    pub fn encrypt(&self, p: &CkksPlaintext) -> HeResult<CkksCiphertext> {
        let top = self.ctx.max_level();
        if p.level != top || p.poly.res.len() != top + 1 {
            return Err(HeError::Alignment(format!("plaintext at level {} must be at level {top}", p.level)));
        }
        let mut rng = rand::rng();
        let tables = self.ctx.level_tables(top);
        let u = self.ctx.signed_to_ntt(&self.ctx.sample_ternary(&mut rng), &tables);
        let mut c0 = self.pk.b.mul(&u, &tables);
        c0.add_assign(&self.ctx.signed_to_ntt(&self.ctx.sample_error(&mut rng), &tables), &tables);
        c0.add_assign(&p.poly, &tables);
        let mut c1 = self.pk.a.mul(&u, &tables);
        c1.add_assign(&self.ctx.signed_to_ntt(&self.ctx.sample_error(&mut rng), &tables), &tables);
        Ok(CkksCiphertext {
            parts: vec![c0, c1],
            level: top,
            scale: p.scale,
            digest: self.ctx.params().digest(),
        })
    }
}

impl Encryptor for CkksEncryptor {
    type Ciphertext = CkksCiphertext;

    fn params(&self) -> &HeParams {
        self.ctx.params()
    }

    fn encrypt_values(&self, values: &[f64]) -> HeResult<CkksCiphertext> {
        self.encrypt(&self.encode(values)?)
    }
}

#[derive(Debug, Clone)]
pub struct CkksDecryptor {
    ctx: Arc<CkksContext>,
    sk: SecretKey,
}

impl CkksDecryptor {
    pub fn new(ctx: Arc<CkksContext>, sk: SecretKey) -> Self {
        Self { ctx, sk }
    }
}

impl Decryptor for CkksDecryptor {
    type Ciphertext = CkksCiphertext;

    fn params(&self) -> &HeParams {
        self.ctx.params()
    }

    fn decrypt(&self, c: &CkksCiphertext) -> HeResult<Vec<f64>> {
        expect_digest(c.digest, self.ctx.params().digest())?;
        let q = self.ctx.data_table(0).modulus();
        let s = &self.sk.s.res[0];
        // c0 + c1 s + c2 s^2 over q_0, evaluated Horner-style in NTT form.
        let mut acc = c.parts.last().unwrap().res[0].clone();
        for part in c.parts.iter().rev().skip(1) {
            for ((x, &si), &pi) in acc.iter_mut().zip(s).zip(&part.res[0]) {
                *x = q.add(q.mul(*x, si), pi);
            }
        }
        Ok(decode_base(&self.ctx, &acc, c.scale))
    }
}
