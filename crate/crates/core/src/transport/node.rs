//! Builds a running main or worker server on the lattice backend from a
//! [`ServiceConfig`].

use std::sync::Arc;

use crate::auth::ServerModel;
use crate::cluster::{Coordinator, LocalWorker, ShardWorker};
use crate::error::{Error, Result};
use crate::he::ckks::{CkksContext, CkksEvaluator, EvaluationKeys};
use crate::model::ModelParams;
use crate::registry::{IdentityMap, Registry, ShardStore};

use super::client::RemoteWorker;
use super::config::{Role, ServiceConfig};
use super::keyfiles;
use super::server::{Handler, MainService, Server, WorkerService};

fn scoring_parts(cfg: &ServiceConfig, ctx: &Arc<CkksContext>) -> Result<(Arc<CkksEvaluator>, Arc<ServerModel<CkksEvaluator>>)> {
    let keys = keyfiles::read_evaluation(
        cfg.require(&cfg.relin_key, "relin_key")?,
        cfg.require(&cfg.galois_key, "galois_key")?,
        ctx,
    )?;
    let eval = Arc::new(CkksEvaluator::new(Arc::clone(ctx), keys));
    let model = ModelParams::load(cfg.require(&cfg.model_path, "model_path")?)?.server()?;
    let model = Arc::new(ServerModel::new(&*eval, model)?);
    Ok((eval, model))
}

/// Request handler for `cfg`'s role.
pub fn build_handler(cfg: &ServiceConfig) -> Result<Arc<dyn Handler>> {
    cfg.validate()?;
    let ctx = CkksContext::new(cfg.params()?);
    // Loading the public key checks the deployment's keys match the profile.
    keyfiles::read_public(cfg.require(&cfg.public_key, "public_key")?, &ctx)?;
    let dir = cfg.require(&cfg.registry_path, "registry_path")?.to_path_buf();
    match cfg.role {
        Role::Main if cfg.scores_locally() => {
            let (eval, model) = scoring_parts(cfg, &ctx)?;
            let reg = Registry::load(&*eval, &dir)?;
            let coord = Coordinator::single(eval, model, reg.shards, reg.identities, Some(dir))?;
            Ok(Arc::new(MainService::new(coord)))
        }
        Role::Main => {
            let empty = EvaluationKeys { relin: None, galois: Default::default() };
            let eval = Arc::new(CkksEvaluator::new(ctx, empty));
            let identities = IdentityMap::load(&dir)?;
            let workers: Vec<Arc<dyn ShardWorker<_>>> = cfg
                .workers
                .iter()
                .map(|a| Arc::new(RemoteWorker::new(a.clone(), Arc::clone(&eval), cfg.deadline())) as Arc<dyn ShardWorker<_>>)
                .collect();
            let coord = Coordinator::new(eval, cfg.cluster_plan()?, workers, identities, Some(dir), cfg.deadline())?;
            Ok(Arc::new(MainService::new(coord)))
        }
        Role::Worker => {
            let (eval, model) = scoring_parts(cfg, &ctx)?;
            let store = ShardStore::load(&*eval, &dir, cfg.worker_range()?)?;
            let name = format!("worker {}", cfg.worker_index.unwrap_or(0) + 1);
            let worker = LocalWorker::new(eval, model, store, Some(dir), name);
            Ok(Arc::new(WorkerService::new(worker)))
        }
        Role::ClientTool => Err(Error::Config("client-tool configs do not run a server".into())),
    }
}

/// Binds the configured address and starts serving.
pub fn start(cfg: &ServiceConfig) -> Result<Server> {
    let handler = build_handler(cfg)?;
    Server::bind(cfg.listen_addr()?, handler)
}
