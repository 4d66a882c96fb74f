//! Fixtures shared by the criterion benches.

use std::sync::Arc;

use encmatch_core::auth::ServerModel;
use encmatch_core::client::{pack_query, pack_shard, FeatureVector16};
use encmatch_core::he::ckks::{CkksCiphertext, CkksEncryptor, CkksEvaluator, KeyBundle};
use encmatch_core::model::ServerModelParams;
use encmatch_core::params::HeParams;
use encmatch_core::registry::RegistryShard;

pub struct Setup {
    pub params: HeParams,
    pub eval: CkksEvaluator,
    pub enc: CkksEncryptor,
    pub model: ServerModel<CkksEvaluator>,
    pub query: CkksCiphertext,
    pub shards: Vec<RegistryShard<CkksCiphertext>>,
}

/// Keys, a model and `shard_count` full shards of deterministic vectors.
pub fn setup(params: HeParams, shard_count: usize) -> Setup {
    let keys = KeyBundle::generate(&params, None).expect("keygen");
    let ctx = Arc::clone(keys.context());
    let eval = CkksEvaluator::new(Arc::clone(&ctx), keys.evaluation_keys());
    let enc = CkksEncryptor::new(ctx, keys.public.clone());
    let model = ServerModel::new(&eval, ServerModelParams { fc16_bias: [0.0; 16], fc1_weights: [-1.0; 16] }).expect("model");
    let cap = params.registry_capacity();
    let shards = (0..shard_count)
        .map(|s| {
            let users: Vec<_> = (0..cap)
                .map(|j| FeatureVector16(std::array::from_fn(|t| ((s * cap + j) * 16 + t) as f64 % 7.0 / 7.0)))
                .collect();
            pack_shard(&enc, s, &users).expect("pack")
        })
        .collect();
    let query = pack_query(&enc, &FeatureVector16([0.25; 16])).expect("query");
    Setup { params, eval, enc, model, query, shards }
}
