//! Privacy-preserving fingerprint matching over CKKS-encrypted feature vectors.

pub mod auth;
pub mod client;
pub mod cluster;
pub mod error;
pub mod he;
pub mod math;
pub mod model;
pub mod oracle;
pub mod params;
pub mod registry;
pub mod transport;

pub use auth::{full_auth, score_shard, CompressedResult, ServerModel};
pub use client::{decide, finalize_features, pack_query, pack_registration, pack_shard, recover_index, Decision, DecisionParams, Fc16Params, FeatureVector16};
pub use cluster::{plan, ClusterPlan, Coordinator};
pub use error::{Error, Result, Stage};
pub use he::{Decryptor, Encryptor, Evaluator, HeCiphertext, HeError};
pub use model::{ModelParams, ServerModelParams};
pub use params::{HeParams, Profile, BLOCK};
pub use registry::{allocate, Occupancy, Registry, RegistryShard};
