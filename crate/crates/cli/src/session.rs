//! Client tool: finalizes features, encrypts them, talks to the main server
//! and decides on the decrypted result.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use encmatch_core::client::{decide, finalize_features, pack_query, pack_registration, Decision, DecisionParams, FeatureFile, FeatureVector16};
use encmatch_core::he::ckks::{CkksContext, CkksDecryptor, CkksEncryptor, CkksEvaluator, EvaluationKeys};
use encmatch_core::he::Evaluator;
use encmatch_core::model::ModelParams;
use encmatch_core::transport::{keyfiles, Role, ServiceClient, ServiceConfig};
use encmatch_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Match { user_id: String, global_index: usize, probability: f64 },
    NoMatch,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Match { user_id, global_index, probability } => {
                write!(f, "match {user_id} (index {global_index}, probability {probability:.4})")
            }
            Outcome::NoMatch => f.write_str("no_match"),
        }
    }
}

pub struct ClientSession {
    enc: CkksEncryptor,
    dec: CkksDecryptor,
    /// Only parses reply ciphertexts; holds no keys.
    reader: CkksEvaluator,
    model: ModelParams,
    client: ServiceClient,
}

impl ClientSession {
    pub fn open(cfg: &ServiceConfig) -> Result<Self> {
        if cfg.role != Role::ClientTool {
            return Err(Error::Config("expected a client-tool config".into()));
        }
        cfg.validate()?;
        let ctx = CkksContext::new(cfg.params()?);
        let pk = keyfiles::read_public(cfg.require(&cfg.public_key, "public_key")?, &ctx)?;
        let sk = keyfiles::read_secret(cfg.require(&cfg.secret_key, "secret_key")?, &ctx)?;
        let model = ModelParams::load(cfg.require(&cfg.model_path, "model_path")?)?;
        let server = cfg.server.clone().ok_or_else(|| Error::Config("config lacks server".into()))?;
        let client = ServiceClient::new(server, ctx.params().digest()).with_timeout(cfg.deadline() * 6);
        Ok(Self {
            enc: CkksEncryptor::new(Arc::clone(&ctx), pk),
            dec: CkksDecryptor::new(Arc::clone(&ctx), sk),
            reader: CkksEvaluator::new(ctx, EvaluationKeys { relin: None, galois: Default::default() }),
            model,
            client,
        })
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn finalize(&self, raw: &[f64]) -> Result<FeatureVector16> {
        finalize_features(raw, &self.model.fc16()?)
    }

    /// The single vector of a feature file, mapped through FC-16.
    pub fn features(&self, path: &Path) -> Result<FeatureVector16> {
        self.finalize(FeatureFile::read(path)?.single()?)
    }

    pub fn enroll(&self, u: &FeatureVector16, user_id: &str) -> Result<usize> {
        self.client.enroll(&pack_registration(&self.enc, u)?, user_id)
    }

    /// Authenticates `u`; `threshold` overrides the model's.
    pub fn authenticate(&self, u: &FeatureVector16, threshold: Option<f64>) -> Result<Outcome> {
        let mut dp = self.model.decision()?;
        if let Some(t) = threshold {
            dp = DecisionParams::new(dp.fc1_bias, t)?;
        }
        let reply = self.client.authenticate(&pack_query(&self.enc, u)?)?;
        let cts = reply
            .results
            .iter()
            .map(|(_, bytes)| self.reader.ciphertext_from_bytes(bytes))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(match decide(&self.dec, &cts, &reply.occupancy, &dp)? {
            Decision::Match { global_index, probability } => {
                Outcome::Match { user_id: self.client.identity(global_index)?, global_index, probability }
            }
            Decision::NoMatch => Outcome::NoMatch,
        })
    }
}
