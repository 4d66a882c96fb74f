//! Pieces of the `encmatch` binary shared with its tests: key generation,
//! synthetic fixtures, the client tool session and the cluster benchmark.

pub mod bench;
pub mod session;

use std::path::Path;

use encmatch_core::he::ckks::KeyBundle;
use encmatch_core::model::ModelParams;
use encmatch_core::oracle::{gen_synthetic, Synthetic, SyntheticSpec};
use encmatch_core::params::{HeParams, Profile};
use encmatch_core::transport::keyfiles;
use encmatch_core::Result;

pub use session::{ClientSession, Outcome};

pub fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    match s {
        "production" => Ok(Profile::Production),
        "test" => Ok(Profile::Test),
        _ => Err(format!("unknown profile {s:?}, expected production or test")),
    }
}

/// Generates a key bundle and writes the four key files into `dir`.
pub fn keygen(profile: Profile, dir: &Path, seed: Option<u64>) -> Result<()> {
    let params = HeParams::from_profile(profile)?;
    let bundle = KeyBundle::generate(&params, seed)?;
    keyfiles::write_bundle(&bundle, dir)
}

/// Model file matching a synthetic fixture: identity FC-16 map, zero FC-16
/// bias and negative unit FC-1 weights.
pub fn model_for(spec: &SyntheticSpec) -> ModelParams {
    ModelParams {
        a_matrix: None,
        fc16_bias: spec.fc16_bias().to_vec(),
        fc1_weights: spec.fc1_weights().to_vec(),
        fc1_bias: spec.fc1_bias,
        threshold: spec.threshold,
    }
}

/// Writes the fixture feature files and `model.json` into `dir`.
pub fn fixture(population: usize, seed: u64, queries: usize, dir: &Path) -> Result<Synthetic> {
    let syn = gen_synthetic(&SyntheticSpec { queries, ..SyntheticSpec::new(population, seed) })?;
    syn.write_fixture(dir)?;
    model_for(&syn.spec).save(&dir.join("model.json"))?;
    Ok(syn)
}
