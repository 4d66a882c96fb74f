//! Service configuration file (JSON).

use std::net::SocketAddr;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cluster::{plan, ClusterPlan};
use crate::error::{Error, Result};
use crate::params::{HeParams, Profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Main,
    Worker,
    ClientTool,
}

fn default_deadline_ms() -> u64 {
    10_000
}

fn default_profile() -> Profile {
    Profile::Production
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub role: Role,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    /// Address a main or worker server binds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<String>,
    /// Worker endpoints in shard order. Empty on a main server means it holds
    /// every shard itself.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workers: Vec<String>,
    /// Shard count the static topology is planned for; shards beyond it go to
    /// the last worker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planned_shards: Option<usize>,
    /// Position of this worker in `workers`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_key: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub galois_key: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relin_key: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret_key: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    /// Main server address used by the client tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<String>,
    #[serde(default = "default_deadline_ms")]
    pub deadline_ms: u64,
}

impl ServiceConfig {
    pub fn new(role: Role, profile: Profile) -> Self {
        Self {
            role,
            profile,
            listen: None,
            workers: Vec::new(),
            planned_shards: None,
            worker_index: None,
            registry_path: None,
            public_key: None,
            galois_key: None,
            relin_key: None,
            secret_key: None,
            model_path: None,
            server: None,
            deadline_ms: default_deadline_ms(),
        }
    }

    /// Parses and validates. Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.registry_path,
            &mut self.public_key,
            &mut self.galois_key,
            &mut self.relin_key,
            &mut self.secret_key,
            &mut self.model_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.profile == Profile::Custom {
            return Err(Error::Config("profile must be \"production\" or \"test\"".into()));
        }
        let missing = |what: &str| Error::Config(format!("{:?} config requires {what}", self.role));
        match self.role {
            Role::Main | Role::Worker => {
                if self.secret_key.is_some() {
                    return Err(Error::Config("server configs must not reference a secret key".into()));
                }
                self.listen.as_ref().ok_or_else(|| missing("listen"))?;
                self.registry_path.as_ref().ok_or_else(|| missing("registry_path"))?;
                self.public_key.as_ref().ok_or_else(|| missing("public_key"))?;
                if self.scores_locally() {
                    self.galois_key.as_ref().ok_or_else(|| missing("galois_key"))?;
                    self.relin_key.as_ref().ok_or_else(|| missing("relin_key"))?;
                    self.model_path.as_ref().ok_or_else(|| missing("model_path"))?;
                }
                if self.role == Role::Worker {
                    let i = self.worker_index.ok_or_else(|| missing("worker_index"))?;
                    if i >= self.workers.len() {
                        return Err(Error::Config(format!("worker_index {i} outside {} workers", self.workers.len())));
                    }
                }
                if !self.workers.is_empty() {
                    self.planned_shards.ok_or_else(|| missing("planned_shards"))?;
                }
            }
            Role::ClientTool => {
                self.public_key.as_ref().ok_or_else(|| missing("public_key"))?;
                self.secret_key.as_ref().ok_or_else(|| missing("secret_key"))?;
                self.model_path.as_ref().ok_or_else(|| missing("model_path"))?;
                self.server.as_ref().ok_or_else(|| missing("server"))?;
            }
        }
        if self.deadline_ms == 0 {
            return Err(Error::Config("deadline_ms must be positive".into()));
        }
        Ok(())
    }

    /// True when this server holds shards and evaluates the pipeline.
    pub fn scores_locally(&self) -> bool {
        self.role == Role::Worker || (self.role == Role::Main && self.workers.is_empty())
    }

    pub fn params(&self) -> Result<HeParams> {
        Ok(HeParams::from_profile(self.profile)?)
    }

    pub fn deadline(&self) -> Duration {
        Duration::from_millis(self.deadline_ms)
    }

    pub fn listen_addr(&self) -> Result<SocketAddr> {
        let l = self.listen.as_deref().ok_or_else(|| Error::Config("no listen address".into()))?;
        l.parse().map_err(|_| Error::Config(format!("bad listen address {l:?}")))
    }

    pub fn cluster_plan(&self) -> Result<ClusterPlan> {
        plan(self.planned_shards.unwrap_or(0), self.workers.len().max(1))
    }

    /// Shard indices a worker accepts.
    pub fn worker_range(&self) -> Result<Range<usize>> {
        let i = self.worker_index.ok_or_else(|| Error::Config("not a worker".into()))?;
        Ok(self.cluster_plan()?.accepts(i))
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field.as_deref().ok_or_else(|| Error::Config(format!("config lacks {name}")))
    }
}
