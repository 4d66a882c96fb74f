use std::sync::Arc;

use crate::he::wire::expect_digest;
use crate::he::{rotation_decomposition, scales_match, Evaluator, HeError, HeResult};
use crate::params::HeParams;

use super::cipher::{decode, encode};
use super::keys::{EvaluationKeys, SwitchingKey};
use super::{CkksCiphertext, CkksContext, CkksPlaintext, RnsPoly};

#[derive(Debug, Clone)]
pub struct CkksEvaluator {
    ctx: Arc<CkksContext>,
    keys: EvaluationKeys,
}

impl CkksEvaluator {
    pub fn new(ctx: Arc<CkksContext>, keys: EvaluationKeys) -> Self {
        Self { ctx, keys }
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    pub fn keys(&self) -> &EvaluationKeys {
        &self.keys
    }

    fn check(&self, c: &CkksCiphertext) -> HeResult<()> {
        expect_digest(c.digest, self.ctx.params().digest())
    }

    fn check_pair(&self, a: &CkksCiphertext, b: &CkksCiphertext) -> HeResult<()> {
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

    fn check_plain(&self, a: &CkksCiphertext, p: &CkksPlaintext) -> HeResult<()> {
        self.check(a)?;
        if a.level != p.level {
            return Err(HeError::Alignment(format!("ciphertext level {} vs plaintext level {}", a.level, p.level)));
        }
        Ok(())
    }

    /// Returns `(d0, d1)` over `q_0..=q_level` with `d0 + d1 s ~ c s'`, where
    /// `s'` is the key's source secret. `c` is in NTT form.
    fn key_switch(&self, c: &[Vec<u64>], level: usize, key: &SwitchingKey) -> (RnsPoly, RnsPoly) {
        let ctx = &*self.ctx;
        let d = ctx.degree();
        let ext = ctx.extended_tables(level);
        let special_idx = level + 1;
        let key_special = ctx.max_level() + 1;
        let mut acc0 = RnsPoly::zero(level + 2, d);
        let mut acc1 = RnsPoly::zero(level + 2, d);
        let mut lifted = vec![0u64; d];

        for (j, cj_ntt) in c.iter().enumerate().take(level + 1) {
            let tj = ctx.data_table(j);
            let mut centered = cj_ntt.clone();
            tj.inverse(&mut centered);
            let qj = tj.modulus();
            let centered: Vec<i64> = centered.iter().map(|&x| qj.center(x)).collect();
            let (kb, ka) = &key.digits[j];

            for (i, t) in ext.iter().enumerate() {
                let q = t.modulus();
                let digit: &[u64] = if i == j {
                    cj_ntt
                } else {
                    for (dst, &x) in lifted.iter_mut().zip(&centered) {
                        *dst = q.reduce_i64(x);
                    }
                    t.forward(&mut lifted);
                    &lifted
                };
                let ki = if i == special_idx { key_special } else { i };
                let (b, a) = (&kb.res[ki], &ka.res[ki]);
                let (o0, o1) = (&mut acc0.res[i], &mut acc1.res[i]);
                for k in 0..d {
                    o0[k] = q.add(o0[k], q.mul(digit[k], b[k]));
                    o1[k] = q.add(o1[k], q.mul(digit[k], a[k]));
                }
            }
        }
        (self.mod_down(acc0, level), self.mod_down(acc1, level))
    }

    /// Divides by the special prime with rounding, dropping its residue.
    fn mod_down(&self, mut x: RnsPoly, level: usize) -> RnsPoly {
        let ctx = &*self.ctx;
        let sp = ctx.special_table();
        let mut top = x.res.pop().expect("special residue");
        sp.inverse(&mut top);
        let centered: Vec<i64> = top.iter().map(|&v| sp.modulus().center(v)).collect();
        let mut tmp = vec![0u64; top.len()];
        for i in 0..=level {
            let t = ctx.data_table(i);
            let q = t.modulus();
            for (dst, &v) in tmp.iter_mut().zip(&centered) {
                *dst = q.reduce_i64(v);
            }
            t.forward(&mut tmp);
            let inv = ctx.special_inv(i);
            for (r, &v) in x.res[i].iter_mut().zip(&tmp) {
                *r = q.mul(q.sub(*r, v), inv);
            }
        }
        x
    }

    /// Divides every part by `q_level` and drops that prime.
    fn rescale(&self, mut c: CkksCiphertext) -> CkksCiphertext {
        let ctx = &*self.ctx;
        let l = c.level;
        let tl = ctx.data_table(l);
        let mut tmp = vec![0u64; ctx.degree()];
        for part in c.parts.iter_mut() {
            let mut top = part.res.pop().expect("top residue");
            tl.inverse(&mut top);
            let centered: Vec<i64> = top.iter().map(|&v| tl.modulus().center(v)).collect();
            for i in 0..l {
                let t = ctx.data_table(i);
                let q = t.modulus();
                for (dst, &v) in tmp.iter_mut().zip(&centered) {
                    *dst = q.reduce_i64(v);
                }
                t.forward(&mut tmp);
                let inv = ctx.rescale_inv(l, i);
                for (r, &v) in part.res[i].iter_mut().zip(&tmp) {
                    *r = q.mul(q.sub(*r, v), inv);
                }
            }
        }
        c.scale /= tl.modulus().value() as f64;
        c.level = l - 1;
        c
    }

    fn relinearize(&self, mut c: CkksCiphertext) -> HeResult<CkksCiphertext> {
        if c.parts.len() == 2 {
            return Ok(c);
        }
        let relin = self
            .keys
            .relin
            .as_ref()
            .ok_or_else(|| HeError::MissingKey("relinearization key".into()))?;
        let c2 = c.parts.pop().expect("third component");
        let (d0, d1) = self.key_switch(&c2.res, c.level, &relin.key);
        let tables = self.ctx.level_tables(c.level);
        c.parts[0].add_assign(&d0, &tables);
        c.parts[1].add_assign(&d1, &tables);
        Ok(c)
    }

    /// One key-switched left rotation by `step`, a power of two.
    fn rotate_once(&self, c: &CkksCiphertext, step: i64) -> HeResult<CkksCiphertext> {
        let gk = self
            .keys
            .galois
            .get(step)
            .ok_or_else(|| HeError::MissingKey(format!("galois key for step {step}")))?;
        let perm = self
            .ctx
            .automorphism(gk.galois_elt)
            .ok_or_else(|| HeError::MissingKey(format!("automorphism {}", gk.galois_elt)))?;
        let permute = |p: &RnsPoly| RnsPoly {
            res: p.res.iter().map(|r| perm.iter().map(|&k| r[k as usize]).collect()).collect(),
        };
        let mut c0 = permute(&c.parts[0]);
        let c1 = permute(&c.parts[1]);
        let (d0, d1) = self.key_switch(&c1.res, c.level, &gk.key);
        c0.add_assign(&d0, &self.ctx.level_tables(c.level));
        Ok(CkksCiphertext { parts: vec![c0, d1], level: c.level, scale: c.scale, digest: c.digest })
    }
}

impl Evaluator for CkksEvaluator {
    type Ciphertext = CkksCiphertext;
    type Plaintext = CkksPlaintext;

    fn params(&self) -> &HeParams {
        self.ctx.params()
    }

    fn encode(&self, values: &[f64], level: usize, scale: f64) -> HeResult<CkksPlaintext> {
        encode(&self.ctx, values, level, scale)
    }

    fn decode(&self, plaintext: &CkksPlaintext) -> HeResult<Vec<f64>> {
        decode(&self.ctx, plaintext)
    }

    fn zero(&self, level: usize, scale: f64) -> HeResult<CkksCiphertext> {
        if level > self.ctx.max_level() {
            return Err(HeError::Alignment(format!("level {level} above maximum")));
        }
        let zero = RnsPoly::zero(level + 1, self.ctx.degree());
        Ok(CkksCiphertext {
            parts: vec![zero.clone(), zero],
            level,
            scale,
            digest: self.ctx.params().digest(),
        })
    }

    fn add(&self, a: &CkksCiphertext, b: &CkksCiphertext) -> HeResult<CkksCiphertext> {
        self.check_pair(a, b)?;
        let tables = self.ctx.level_tables(a.level);
        let mut out = a.clone();
        if b.parts.len() > out.parts.len() {
            out.parts.push(RnsPoly::zero(a.level + 1, self.ctx.degree()));
        }
        for (o, p) in out.parts.iter_mut().zip(&b.parts) {
            o.add_assign(p, &tables);
        }
        Ok(out)
    }

    fn sub(&self, a: &CkksCiphertext, b: &CkksCiphertext) -> HeResult<CkksCiphertext> {
        self.check_pair(a, b)?;
        let tables = self.ctx.level_tables(a.level);
        let mut out = a.clone();
        if b.parts.len() > out.parts.len() {
            out.parts.push(RnsPoly::zero(a.level + 1, self.ctx.degree()));
        }
        for (o, p) in out.parts.iter_mut().zip(&b.parts) {
            o.sub_assign(p, &tables);
        }
        Ok(out)
    }

    fn add_plain(&self, a: &CkksCiphertext, p: &CkksPlaintext) -> HeResult<CkksCiphertext> {
        self.check_plain(a, p)?;
        if !scales_match(a.scale, p.scale) {
            return Err(HeError::Alignment(format!("ciphertext scale {} vs plaintext scale {}", a.scale, p.scale)));
        }
        let mut out = a.clone();
        out.parts[0].add_assign(&p.poly, &self.ctx.level_tables(a.level));
        Ok(out)
    }

    fn mul_plain(&self, a: &CkksCiphertext, p: &CkksPlaintext) -> HeResult<CkksCiphertext> {
        self.check_plain(a, p)?;
        if a.level == 0 {
            return Err(HeError::DepthExhausted);
        }
        let tables = self.ctx.level_tables(a.level);
        let out = CkksCiphertext {
            parts: a.parts.iter().map(|c| c.mul(&p.poly, &tables)).collect(),
            level: a.level,
            scale: a.scale * p.scale,
            digest: a.digest,
        };
        Ok(self.rescale(out))
    }

    fn mul(&self, a: &CkksCiphertext, b: &CkksCiphertext) -> HeResult<CkksCiphertext> {
        self.check_pair(a, b)?;
        if a.level == 0 {
            return Err(HeError::DepthExhausted);
        }
        if a.parts.len() != 2 || b.parts.len() != 2 {
            return Err(HeError::Alignment("operands must be relinearized".into()));
        }
        if self.keys.relin.is_none() {
            return Err(HeError::MissingKey("relinearization key".into()));
        }
        let tables = self.ctx.level_tables(a.level);
        let c0 = a.parts[0].mul(&b.parts[0], &tables);
        let mut c1 = a.parts[0].mul(&b.parts[1], &tables);
        c1.add_assign(&a.parts[1].mul(&b.parts[0], &tables), &tables);
        let c2 = a.parts[1].mul(&b.parts[1], &tables);
        let product = CkksCiphertext {
            parts: vec![c0, c1, c2],
            level: a.level,
            scale: a.scale * b.scale,
            digest: a.digest,
        };
        Ok(self.rescale(self.relinearize(product)?))
    }

    fn rotate(&self, a: &CkksCiphertext, steps: i64) -> HeResult<CkksCiphertext> {
        self.check(a)?;
        if a.parts.len() != 2 {
            return Err(HeError::Alignment("rotation needs a relinearized ciphertext".into()));
        }
        let exponents = rotation_decomposition(steps, self.ctx.params().slot_count());
        for &t in &exponents {
            if self.keys.galois.get(1 << t).is_none() {
                return Err(HeError::MissingKey(format!("galois key for step {}", 1i64 << t)));
            }
        }
        let mut out = a.clone();
        for t in exponents {
            out = self.rotate_once(&out, 1 << t)?;
        }
        Ok(out)
    }

    fn drop_to_level(&self, a: &CkksCiphertext, level: usize) -> HeResult<CkksCiphertext> {
        self.check(a)?;
        if level > a.level {
            return Err(HeError::Alignment(format!("cannot raise level {} to {level}", a.level)));
        }
        let mut out = a.clone();
        for p in out.parts.iter_mut() {
            p.truncate(level + 1);
        }
        out.level = level;
        Ok(out)
    }

    fn ciphertext_from_bytes(&self, bytes: &[u8]) -> HeResult<CkksCiphertext> {
        CkksCiphertext::from_bytes(bytes, &self.ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::ckks::{CkksDecryptor, CkksEncryptor, KeyBundle};
    use crate::he::{Decryptor, Encryptor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        enc: CkksEncryptor,
        dec: CkksDecryptor,
        eval: CkksEvaluator,
    }

    fn small() -> Fixture {
        let params = HeParams::custom(64, vec![60, 40, 40, 40, 60], 40).unwrap();
        let keys = KeyBundle::generate(&params, None).unwrap();
        let ctx = keys.context().clone();
        Fixture {
            enc: CkksEncryptor::new(ctx.clone(), keys.public.clone()),
            dec: CkksDecryptor::new(ctx.clone(), keys.secret.clone()),
            eval: CkksEvaluator::new(ctx, keys.evaluation_keys()),
        }
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn square_and_rescale_small_ring() {
        let f = small();
        let v = random(32, 1);
        let c = f.enc.encrypt_values(&v).unwrap();
        let sq = f.eval.mul(&c, &c).unwrap();
        assert_eq!(sq.level, 2);
        let expect: Vec<f64> = v.iter().map(|x| x * x).collect();
        assert!(max_err(&f.dec.decrypt(&sq).unwrap(), &expect) < 1e-6);
    }

    #[test]
    fn rotation_at_every_level() {
        let f = small();
        let v = random(32, 2);
        let mut c = f.enc.encrypt_values(&v).unwrap();
        let ones = vec![1.0; 32];
        loop {
            for step in [1i64, 5, -3] {
                let r = f.eval.rotate(&c, step).unwrap();
                let expect: Vec<f64> = (0..32).map(|i| v[(i as i64 + step).rem_euclid(32) as usize]).collect();
                assert!(max_err(&f.dec.decrypt(&r).unwrap(), &expect) < 1e-6, "level {} step {step}", c.level);
            }
            if c.level == 0 {
                break;
            }
            let p = f.eval.encode_multiplier(&ones, c.level).unwrap();
            c = f.eval.mul_plain(&c, &p).unwrap();
        }
    }
}
