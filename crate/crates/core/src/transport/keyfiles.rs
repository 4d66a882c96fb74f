//! Reading and writing the four lattice key files.

use std::path::Path;
use std::sync::Arc;

use crate::error::Result;
use crate::he::ckks::{CkksContext, EvaluationKeys, GaloisKeys, KeyBundle, PublicKey, RelinKey, SecretKey};

pub const PUBLIC_FILE: &str = "public.key";
pub const GALOIS_FILE: &str = "galois.key";
pub const RELIN_FILE: &str = "relin.key";
pub const SECRET_FILE: &str = "secret.key";

/// Writes `public.key`, `galois.key`, `relin.key` and `secret.key` into `dir`.
pub fn write_bundle(bundle: &KeyBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ctx = bundle.context();
    std::fs::write(dir.join(PUBLIC_FILE), bundle.public.to_bytes(ctx))?;
    std::fs::write(dir.join(GALOIS_FILE), bundle.galois.to_bytes(ctx))?;
    std::fs::write(dir.join(RELIN_FILE), bundle.relin.to_bytes(ctx))?;
    std::fs::write(dir.join(SECRET_FILE), bundle.secret.to_bytes(ctx))?;
    Ok(())
}

pub fn read_public(path: &Path, ctx: &Arc<CkksContext>) -> Result<PublicKey> {
    Ok(PublicKey::from_bytes(&std::fs::read(path)?, ctx)?)
}

pub fn read_secret(path: &Path, ctx: &Arc<CkksContext>) -> Result<SecretKey> {
    Ok(SecretKey::from_bytes(&std::fs::read(path)?, ctx)?)
}

/// Evaluation keys from the relinearization and Galois key files.
pub fn read_evaluation(relin: &Path, galois: &Path, ctx: &Arc<CkksContext>) -> Result<EvaluationKeys> {
    Ok(EvaluationKeys {
        relin: Some(RelinKey::from_bytes(&std::fs::read(relin)?, ctx)?),
        galois: GaloisKeys::from_bytes(&std::fs::read(galois)?, ctx)?,
    })
}
