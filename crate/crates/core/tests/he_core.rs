use std::sync::{Arc, OnceLock};

use encmatch_core::he::ckks::{CkksContext, CkksDecryptor, CkksEncryptor, CkksEvaluator, KeyBundle};
use encmatch_core::he::clear::{ClearEncryptor, ClearEvaluator};
use encmatch_core::he::{Decryptor, Encryptor, Evaluator, HeCiphertext, HeError};
use encmatch_core::params::HeParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Lattice {
    params: HeParams,
    keys: KeyBundle,
    eval: CkksEvaluator,
    enc: CkksEncryptor,
    dec: CkksDecryptor,
}

fn lattice() -> &'static Lattice {
    static L: OnceLock<Lattice> = OnceLock::new();
    L.get_or_init(|| {
        let params = HeParams::test_profile();
        let keys = KeyBundle::generate(&params, Some(7)).unwrap();
        let ctx = Arc::clone(keys.context());
        Lattice {
            eval: CkksEvaluator::new(Arc::clone(&ctx), keys.evaluation_keys()),
            enc: CkksEncryptor::new(Arc::clone(&ctx), keys.public.clone()),
            dec: CkksDecryptor::new(ctx, keys.secret.clone()),
            params,
            keys,
        }
    })
}

fn random(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encode_decode_roundtrip() {
    let l = lattice();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for level in 0..=l.params.max_level() {
        let v = random(&mut rng, l.params.slot_count());
        let pt = l.eval.encode(&v, level, l.params.default_scale()).unwrap();
        let back = l.eval.decode(&pt).unwrap();
        assert!(max_err(&v, &back) <= 2f64.powi(-20), "level {level}");
    }
}

#[test]
fn encrypt_decrypt_within_bound() {
    let l = lattice();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for _ in 0..5 {
        let v = random(&mut rng, l.params.slot_count());
        let back = l.dec.decrypt(&l.enc.encrypt_values(&v).unwrap()).unwrap();
        assert!(max_err(&v, &back) <= 1e-4);
    }
}

#[test]
fn homomorphism_matches_clear_backend() {
    let l = lattice();
    let p = &l.params;
    let n = p.slot_count();
    let clear = ClearEvaluator::with_full_keys(p.clone());
    let cenc = ClearEncryptor::new(p.clone());
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..120 {
        let v = random(&mut rng, n);
        let w = random(&mut rng, n);
        let (a, b) = (l.enc.encrypt_values(&v).unwrap(), l.enc.encrypt_values(&w).unwrap());
        let (ca, cb) = (cenc.encrypt_values(&v).unwrap(), cenc.encrypt_values(&w).unwrap());
        let steps = rng.random_range(-(n as i64)..n as i64);
        let (got, want) = match trial % 6 {
            0 => (l.eval.add(&a, &b).unwrap(), clear.add(&ca, &cb).unwrap().slots().to_vec()),
            1 => (l.eval.sub(&a, &b).unwrap(), clear.sub(&ca, &cb).unwrap().slots().to_vec()),
            2 => {
                let pt = l.eval.encode(&w, a.level(), a.scale()).unwrap();
                let cpt = clear.encode(&w, a.level(), a.scale()).unwrap();
                (l.eval.add_plain(&a, &pt).unwrap(), clear.add_plain(&ca, &cpt).unwrap().slots().to_vec())
            }
            3 => {
                let pt = l.eval.encode_multiplier(&w, a.level()).unwrap();
                let cpt = clear.encode_multiplier(&w, a.level()).unwrap();
                (l.eval.mul_plain(&a, &pt).unwrap(), clear.mul_plain(&ca, &cpt).unwrap().slots().to_vec())
            }
            4 => (l.eval.mul(&a, &b).unwrap(), clear.mul(&ca, &cb).unwrap().slots().to_vec()),
            _ => (l.eval.rotate(&a, steps).unwrap(), clear.rotate(&ca, steps).unwrap().slots().to_vec()),
        };
        let e = max_err(&l.dec.decrypt(&got).unwrap(), &want);
        assert!(e <= 1e-2, "trial {trial}: error {e}");
        worst = worst.max(e);
    }
    eprintln!("worst homomorphism error over 120 trials: {worst:.3e}");
}

#[test]
fn level_law_and_depth_exhaustion() {
    let l = lattice();
    let v = vec![0.5; l.params.slot_count()];
    let mut c = l.enc.encrypt_values(&v).unwrap();
    assert_eq!(c.level(), 3);
    let r = l.eval.rotate(&c, 5).unwrap();
    assert_eq!(r.level(), 3);
    for expected in [2, 1, 0] {
        c = l.eval.mul(&c, &c).unwrap();
        assert_eq!(c.level(), expected);
    }
    assert_eq!(l.eval.mul(&c, &c).unwrap_err(), HeError::DepthExhausted);
    let pt = l.eval.encode(&v, 0, c.scale()).unwrap();
    assert_eq!(l.eval.mul_plain(&c, &pt).unwrap_err(), HeError::DepthExhausted);
    // 0.5^8
    let got = l.dec.decrypt(&c).unwrap();
    assert!(max_err(&got, &vec![0.5f64.powi(8); v.len()]) < 1e-3);
}

#[test]
fn serialized_size_shrinks_with_depth() {
    let l = lattice();
    let v = vec![0.25; l.params.slot_count()];
    let mut c = l.enc.encrypt_values(&v).unwrap();
    let mut sizes = vec![c.to_bytes().len()];
    for _ in 0..3 {
        c = l.eval.mul(&c, &c).unwrap();
        sizes.push(c.to_bytes().len());
    }
    assert!(sizes.windows(2).all(|w| w[0] > w[1]), "{sizes:?}");
    let d = l.params.poly_degree();
    for (k, s) in sizes.iter().enumerate() {
        let residues = l.params.max_level() + 1 - k;
        assert_eq!(*s, 42 + 2 * residues * d * 8);
    }
    let ctx = l.keys.context();
    assert!(l.keys.galois.to_bytes(ctx).len() > l.keys.relin.to_bytes(ctx).len());
    assert_eq!(l.keys.galois.len(), 11);
}

#[test]
fn encryption_is_probabilistic() {
    let l = lattice();
    let v = vec![1.0; l.params.slot_count()];
    let a = l.enc.encrypt_values(&v).unwrap().to_bytes();
    let b = l.enc.encrypt_values(&v).unwrap().to_bytes();
    assert_ne!(a, b);
}

#[test]
fn ciphertexts_from_other_parameters_rejected() {
    let l = lattice();
    let other = HeParams::custom(4096, vec![60, 40, 40, 60], 40).unwrap();
    let foreign = ClearEvaluator::with_full_keys(other.clone());
    assert!(matches!(foreign.ciphertext_from_bytes(&l.enc.encrypt_values(&vec![0.0; 2048]).unwrap().to_bytes()), Err(HeError::Format(_) | HeError::ParamsMismatch { .. })));

    let keys = KeyBundle::generate(&other, None).unwrap();
    let c = CkksEncryptor::new(Arc::clone(keys.context()), keys.public.clone())
        .encrypt_values(&vec![0.0; 2048])
        .unwrap();
    assert!(matches!(l.eval.ciphertext_from_bytes(&c.to_bytes()), Err(HeError::ParamsMismatch { .. })));
    assert!(matches!(l.eval.add(&c, &c), Err(HeError::ParamsMismatch { .. })));

    let mut bytes = l.enc.encrypt_values(&vec![0.0; 2048]).unwrap().to_bytes();
    bytes[0] = b'X';
    assert!(matches!(l.eval.ciphertext_from_bytes(&bytes), Err(HeError::Format(_))));
}

#[test]
fn seeded_keygen_is_test_only_and_deterministic() {
    let p = HeParams::test_profile();
    let a = KeyBundle::generate(&p, Some(99)).unwrap();
    let b = KeyBundle::generate(&p, Some(99)).unwrap();
    let ctx = a.context();
    assert_eq!(a.public.to_bytes(ctx), b.public.to_bytes(ctx));
    assert_eq!(a.secret.to_bytes(ctx), b.secret.to_bytes(ctx));
    assert!(matches!(KeyBundle::generate(&HeParams::production(), Some(1)), Err(HeError::Params(_))));
}

#[test]
fn key_files_roundtrip() {
    let l = lattice();
    let ctx: &Arc<CkksContext> = l.keys.context();
    let dir = tempfile::tempdir().unwrap();
    encmatch_core::transport::keyfiles::write_bundle(&l.keys, dir.path()).unwrap();
    let pk = encmatch_core::transport::keyfiles::read_public(&dir.path().join("public.key"), ctx).unwrap();
    assert_eq!(pk.to_bytes(ctx), l.keys.public.to_bytes(ctx));
    let ek = encmatch_core::transport::keyfiles::read_evaluation(&dir.path().join("relin.key"), &dir.path().join("galois.key"), ctx).unwrap();
    assert_eq!(ek.galois.len(), 11);
    assert!(encmatch_core::transport::keyfiles::read_public(&dir.path().join("secret.key"), ctx).is_err());
}
