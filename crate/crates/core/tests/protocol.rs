use std::sync::Arc;
use std::time::Duration;

use encmatch_core::auth::{full_auth, CompressedResult, ServerModel};
use encmatch_core::client::{best_match, decide, pack_query, pack_registration, recover_index, Decision, DecisionParams, FeatureVector16};
use encmatch_core::cluster::{aggregate, fan_out, plan, Coordinator, LocalWorker, ShardWorker, DEFAULT_DEADLINE};
use encmatch_core::error::Error;
use encmatch_core::he::ckks::{CkksDecryptor, CkksEncryptor, CkksEvaluator, EvaluationKeys, KeyBundle};
use encmatch_core::he::clear::{ClearCiphertext, ClearDecryptor, ClearEncryptor, ClearEvaluator};
use encmatch_core::he::{Decryptor, Evaluator};
use encmatch_core::model::{ModelParams, ServerModelParams};
use encmatch_core::oracle::{clear_score, gen_synthetic, SyntheticSpec};
use encmatch_core::params::{HeParams, Profile};
use encmatch_core::registry::{IdentityMap, Occupancy, Registry, RegistryShard, ShardStore};
use encmatch_core::transport::config::{Role, ServiceConfig};
use encmatch_core::transport::{keyfiles, node, ServiceClient};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random_vector(rng: &mut ChaCha20Rng) -> FeatureVector16 {
    FeatureVector16(std::array::from_fn(|_| rng.random_range(-1.5..1.5)))
}

fn random_model(rng: &mut ChaCha20Rng) -> ServerModelParams {
    ServerModelParams {
        fc16_bias: std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
        fc1_weights: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
    }
}

/// Scores read back through recover_index, keyed by global index.
fn decrypted_scores<D: Decryptor>(dec: &D, results: &[CompressedResult<D::Ciphertext>], n: usize) -> Vec<f64> {
    let cap = dec.params().registry_capacity();
    let slots = dec.params().slot_count();
    let mut out = vec![f64::NAN; n];
    for r in results {
        let v = dec.decrypt(&r.ciphertext).unwrap();
        for (s, &x) in v.iter().enumerate() {
            let g = r.group * slots + recover_index(s, cap).unwrap();
            if g < n {
                out[g] = x;
            }
        }
    }
    out
}

#[test]
fn lattice_pipeline_matches_clear_oracle() {
    let params = HeParams::test_profile();
    let keys = KeyBundle::generate(&params, Some(21)).unwrap();
    let ctx = Arc::clone(keys.context());
    let eval = CkksEvaluator::new(Arc::clone(&ctx), keys.evaluation_keys());
    let enc = CkksEncryptor::new(Arc::clone(&ctx), keys.public.clone());
    let dec = CkksDecryptor::new(ctx, keys.secret.clone());
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let model_params = random_model(&mut rng);
    let model = ServerModel::new(&eval, model_params).unwrap();

    for n in [1usize, 129, 300] {
        let mut clear = encmatch_core::oracle::ClearRegistry::new();
        let mut reg = Registry::new(params.registry_capacity());
        for i in 0..n {
            let v = random_vector(&mut rng);
            clear.push(v, format!("u{i}"));
            reg.enroll(&eval, &pack_registration(&enc, &v).unwrap(), &format!("u{i}")).unwrap();
        }
        let snap = reg.shards.snapshot();
        let shards: Vec<_> = snap.iter().map(|s| &**s).collect();
        for _ in 0..2 {
            let u = random_vector(&mut rng);
            let results = full_auth(&eval, &model, &pack_query(&enc, &u).unwrap(), &shards).unwrap();
            assert_eq!(results.len(), 1);
            let got = decrypted_scores(&dec, &results, n);
            let want = clear_score(&clear, &u, &model_params.fc16_bias, &model_params.fc1_weights);
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-2, "N={n}: max error {err}");
        }
    }
}

struct ClearCluster {
    params: HeParams,
    eval: Arc<ClearEvaluator>,
    model: Arc<ServerModel<ClearEvaluator>>,
    enc: ClearEncryptor,
    dec: ClearDecryptor,
    registry: Registry<ClearCiphertext>,
}

fn clear_cluster(n: usize, seed: u64) -> ClearCluster {
    let params = HeParams::test_profile();
    let eval = Arc::new(ClearEvaluator::with_full_keys(params.clone()));
    let enc = ClearEncryptor::new(params.clone());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let model = Arc::new(ServerModel::new(&*eval, random_model(&mut rng)).unwrap());
    let mut registry = Registry::new(params.registry_capacity());
    for i in 0..n {
        let c = pack_registration(&enc, &random_vector(&mut rng)).unwrap();
        registry.enroll(&*eval, &c, &format!("user{i}")).unwrap();
    }
    ClearCluster { dec: ClearDecryptor::new(params.clone()), params, eval, model, enc, registry }
}

impl ClearCluster {
    /// Splits the registry across `w` in-process workers.
    fn workers(&self, w: usize) -> (encmatch_core::cluster::ClusterPlan, Vec<Arc<dyn ShardWorker<ClearCiphertext>>>) {
        let cap = self.params.registry_capacity();
        let p = plan(self.registry.shard_count(), w).unwrap();
        let workers = (0..w)
            .map(|i| {
                let mut store = ShardStore::for_range(cap, p.accepts(i));
                for s in self.registry.shards.snapshot() {
                    if p.accepts(i).contains(&s.shard_index) {
                        store.import_shard((*s).clone()).unwrap();
                    }
                }
                let lw = LocalWorker::new(Arc::clone(&self.eval), Arc::clone(&self.model), store, None, format!("w{i}"));
                Arc::new(lw) as Arc<dyn ShardWorker<ClearCiphertext>>
            })
            .collect();
        (p, workers)
    }
}

#[test]
fn distribution_is_transparent_on_clear_backend() {
    let n = 20 * 128 + 5;
    let cl = clear_cluster(n, 9);
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let q = pack_query(&cl.enc, &random_vector(&mut rng)).unwrap();
    let snap = cl.registry.shards.snapshot();
    let shards: Vec<_> = snap.iter().map(|s| &**s).collect();
    let single = full_auth(&*cl.eval, &cl.model, &q, &shards).unwrap();
    assert_eq!(single.len(), 2);
    for w in 1..=4 {
        let (p, workers) = cl.workers(w);
        let partials = fan_out(&p, &workers, &q, 21, DEFAULT_DEADLINE).unwrap();

        // Partials of one group have disjoint support.
        for g in 0..2 {
            let parts: Vec<_> = partials.iter().flatten().filter(|r| r.group == g).collect();
            for (i, a) in parts.iter().enumerate() {
                for b in &parts[i + 1..] {
                    let overlap = a.ciphertext.slots().iter().zip(b.ciphertext.slots()).any(|(x, y)| x * y != 0.0);
                    assert!(!overlap, "workers overlap in group {g}");
                }
            }
        }

        let agg = aggregate(&*cl.eval, &p, partials, 21).unwrap();
        assert_eq!(agg.len(), single.len());
        for (a, s) in agg.iter().zip(&single) {
            assert_eq!(a.group, s.group);
            assert_eq!(a.ciphertext.slots(), s.ciphertext.slots(), "{w} workers");
        }
    }
}

struct Failing;

impl ShardWorker<ClearCiphertext> for Failing {
    fn describe(&self) -> String {
        "10.0.0.2:7000".into()
    }
    fn score(&self, _: &ClearCiphertext) -> encmatch_core::Result<Vec<CompressedResult<ClearCiphertext>>> {
        Err(Error::Io(std::io::Error::new(std::io::ErrorKind::ConnectionRefused, "connection refused")))
    }
    fn enroll(&self, _: &ClearCiphertext, _: usize) -> encmatch_core::Result<()> {
        Ok(())
    }
    fn import(&self, _: RegistryShard<ClearCiphertext>) -> encmatch_core::Result<()> {
        Ok(())
    }
}

struct Slow(Arc<dyn ShardWorker<ClearCiphertext>>);

impl ShardWorker<ClearCiphertext> for Slow {
    fn describe(&self) -> String {
        "slow".into()
    }
    fn score(&self, q: &ClearCiphertext) -> encmatch_core::Result<Vec<CompressedResult<ClearCiphertext>>> {
        std::thread::sleep(Duration::from_millis(500));
        self.0.score(q)
    }
    fn enroll(&self, c: &ClearCiphertext, g: usize) -> encmatch_core::Result<()> {
        self.0.enroll(c, g)
    }
    fn import(&self, s: RegistryShard<ClearCiphertext>) -> encmatch_core::Result<()> {
        self.0.import(s)
    }
}

#[test]
fn worker_faults_abort_authentication() {
    let cl = clear_cluster(10 * 128, 2);
    let q = pack_query(&cl.enc, &FeatureVector16([0.0; 16])).unwrap();
    let (p, mut workers) = cl.workers(3);
    workers[1] = Arc::new(Failing);
    let err = fan_out(&p, &workers, &q, 10, DEFAULT_DEADLINE).unwrap_err();
    assert!(matches!(err, Error::WorkerFault { worker: 2, ref shards, .. } if *shards == (3..6)));
    assert!(err.to_string().contains("shards 3..5"), "{err}");

    let (p, mut workers) = cl.workers(3);
    workers[2] = Arc::new(Slow(Arc::clone(&workers[2])));
    let err = fan_out(&p, &workers, &q, 10, Duration::from_millis(100)).unwrap_err();
    assert!(matches!(err, Error::WorkerFault { worker: 3, .. }), "{err}");

    // A worker answering without its groups is caught at aggregation.
    let (p, workers) = cl.workers(3);
    let mut partials = fan_out(&p, &workers, &q, 10, DEFAULT_DEADLINE).unwrap();
    partials[0].clear();
    assert!(matches!(aggregate(&*cl.eval, &p, partials, 10), Err(Error::IncompleteAggregation(_))));
}

#[test]
fn coordinator_routes_enrollment_and_decides() {
    let params = HeParams::test_profile();
    let cap = params.registry_capacity();
    let eval = Arc::new(ClearEvaluator::with_full_keys(params.clone()));
    let enc = ClearEncryptor::new(params.clone());
    let dec = ClearDecryptor::new(params.clone());
    let syn = gen_synthetic(&SyntheticSpec { queries: 20, ..SyntheticSpec::new(cap + 40, 5) }).unwrap();
    let model = Arc::new(
        ServerModel::new(&*eval, ServerModelParams { fc16_bias: syn.spec.fc16_bias(), fc1_weights: syn.spec.fc1_weights() }).unwrap(),
    );
    let p = plan(2, 2).unwrap();
    let workers: Vec<Arc<LocalWorker<ClearEvaluator>>> = (0..2)
        .map(|i| Arc::new(LocalWorker::new(Arc::clone(&eval), Arc::clone(&model), ShardStore::for_range(cap, p.accepts(i)), None, "w")))
        .collect();
    let dyn_workers = workers.iter().map(|w| Arc::clone(w) as Arc<dyn ShardWorker<ClearCiphertext>>).collect();
    let coord = Coordinator::new(Arc::clone(&eval), p, dyn_workers, IdentityMap::new(), None, DEFAULT_DEADLINE).unwrap();

    let empty = coord.authenticate(&pack_query(&enc, &syn.imposters[0]).unwrap()).unwrap();
    assert!(empty.results.is_empty());
    assert_eq!(empty.occupancy.count(), 0);

    for e in syn.registry.entries() {
        assert_eq!(coord.enroll(&pack_registration(&enc, &e.features).unwrap(), &e.user_id).unwrap(), e.global_index);
    }
    // Index cap lands at shard 1, local 0; index cap + 1 at local 1.
    assert_eq!(workers[0].store().len(), 1);
    assert!(workers[1].store().get(1).unwrap().occupancy.get(1));

    let dp = DecisionParams::new(syn.spec.fc1_bias, syn.spec.threshold).unwrap();
    for g in &syn.genuine {
        let resp = coord.authenticate(&pack_query(&enc, &g.features).unwrap()).unwrap();
        let cts: Vec<_> = resp.results.iter().map(|r| r.ciphertext.clone()).collect();
        match decide(&dec, &cts, &resp.occupancy, &dp).unwrap() {
            Decision::Match { global_index, .. } => {
                assert_eq!(global_index, g.target);
                assert_eq!(coord.lookup_identity(global_index).unwrap(), syn.registry.entries()[g.target].user_id);
            }
            Decision::NoMatch => panic!("genuine query rejected"),
        }
    }
    for q in &syn.imposters {
        let resp = coord.authenticate(&pack_query(&enc, q).unwrap()).unwrap();
        let cts: Vec<_> = resp.results.iter().map(|r| r.ciphertext.clone()).collect();
        assert_eq!(decide(&dec, &cts, &resp.occupancy, &dp).unwrap(), Decision::NoMatch);
    }
}

#[test]
fn masked_slots_are_zero_for_unoccupied_indices() {
    let cl = clear_cluster(130, 3);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let q = pack_query(&cl.enc, &random_vector(&mut rng)).unwrap();
    let snap = cl.registry.shards.snapshot();
    let shards: Vec<_> = snap.iter().map(|s| &**s).collect();
    let out = full_auth(&*cl.eval, &cl.model, &q, &shards).unwrap();
    let slots = cl.dec.decrypt(&out[0].ciphertext).unwrap();
    let occ = Occupancy::prefix(130, 2048);
    for (s, &v) in slots.iter().enumerate() {
        let g = recover_index(s, 128).unwrap();
        if !occ.get(g) {
            assert_eq!(v, 0.0, "slot {s} (index {g})");
        }
    }
    assert!(best_match(&[slots], &occ, 128).unwrap().0 < 130);
}

/// Main server plus two workers on loopback, lattice backend.
#[test]
fn tcp_cluster_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let params = HeParams::test_profile();
    let cap = params.registry_capacity();
    let keys = KeyBundle::generate(&params, Some(5)).unwrap();
    keyfiles::write_bundle(&keys, &dir.path().join("keys")).unwrap();
    let syn = gen_synthetic(&SyntheticSpec { queries: 3, ..SyntheticSpec::new(cap + 3, 12) }).unwrap();
    let model = ModelParams {
        a_matrix: None,
        fc16_bias: syn.spec.fc16_bias().to_vec(),
        fc1_weights: syn.spec.fc1_weights().to_vec(),
        fc1_bias: syn.spec.fc1_bias,
        threshold: syn.spec.threshold,
    };
    model.save(&dir.path().join("model.json")).unwrap();

    let free_port = || std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let worker_addrs = vec![free_port(), free_port()];
    let base = |role| ServiceConfig {
        public_key: Some(dir.path().join("keys/public.key")),
        galois_key: Some(dir.path().join("keys/galois.key")),
        relin_key: Some(dir.path().join("keys/relin.key")),
        model_path: Some(dir.path().join("model.json")),
        workers: worker_addrs.clone(),
        planned_shards: Some(2),
        ..ServiceConfig::new(role, Profile::Test)
    };
    let mut servers = Vec::new();
    for (i, addr) in worker_addrs.iter().enumerate() {
        let cfg = ServiceConfig {
            listen: Some(addr.clone()),
            worker_index: Some(i),
            registry_path: Some(dir.path().join(format!("worker{i}"))),
            ..base(Role::Worker)
        };
        servers.push(node::start(&cfg).unwrap());
    }
    let main_cfg = ServiceConfig {
        listen: Some("127.0.0.1:0".into()),
        registry_path: Some(dir.path().join("main")),
        galois_key: None,
        relin_key: None,
        model_path: None,
        ..base(Role::Main)
    };
    let main = node::start(&main_cfg).unwrap();

    let ctx = Arc::clone(keys.context());
    let enc = CkksEncryptor::new(Arc::clone(&ctx), keys.public.clone());
    let dec = CkksDecryptor::new(ctx, keys.secret.clone());
    let client = ServiceClient::new(main.addr().to_string(), params.digest());
    assert_eq!(client.health().unwrap().get("role"), Some("main"));

    let auth = |u: &FeatureVector16| {
        let reply = client.authenticate(&pack_query(&enc, u).unwrap()).unwrap();
        let eval = CkksEvaluator::new(Arc::clone(keys.context()), EvaluationKeys { relin: None, galois: Default::default() });
        let cts: Vec<_> = reply.results.iter().map(|(_, b)| eval.ciphertext_from_bytes(b).unwrap()).collect();
        (reply, cts)
    };
    let (empty, _) = auth(&syn.imposters[0]);
    assert!(empty.results.is_empty());
    assert_eq!(empty.occupancy.count(), 0);

    for e in syn.registry.entries() {
        let idx = client.enroll(&pack_registration(&enc, &e.features).unwrap(), &e.user_id).unwrap();
        assert_eq!(idx, e.global_index);
    }
    let dp = model.decision().unwrap();
    let g = &syn.genuine[0];
    let (reply, cts) = auth(&g.features);
    assert_eq!(reply.results.len(), 1);
    match decide(&dec, &cts, &reply.occupancy, &dp).unwrap() {
        Decision::Match { global_index, .. } => {
            assert_eq!(global_index, g.target);
            assert_eq!(client.identity(global_index).unwrap(), syn.registry.entries()[g.target].user_id);
        }
        Decision::NoMatch => panic!("genuine query rejected"),
    }
    let (reply, cts) = auth(&syn.imposters[1]);
    assert_eq!(decide(&dec, &cts, &reply.occupancy, &dp).unwrap(), Decision::NoMatch);

    assert!(matches!(client.identity(10_000), Err(Error::Remote { status: 404, .. })));
    let wrong = ServiceClient::new(main.addr().to_string(), HeParams::production().digest());
    let err = wrong.enroll(&pack_registration(&enc, &syn.imposters[0]).unwrap(), "x").unwrap_err();
    assert!(matches!(err, Error::Remote { status: 412, .. }), "{err}");
    let garbage = encmatch_core::transport::Envelope::new(encmatch_core::transport::MessageType::Enroll)
        .header("params-digest", params.digest())
        .header("user-id", "mallory")
        .with_payload(vec![1, 2, 3]);
    let err = encmatch_core::transport::client::call(&main.addr().to_string(), &garbage, None).unwrap_err();
    assert!(matches!(err, Error::Remote { status: 400, .. }), "{err}");

    // Shards persisted by the worker reload byte-identically.
    let w1 = node::build_handler(&ServiceConfig {
        listen: Some(worker_addrs[1].clone()),
        worker_index: Some(1),
        registry_path: Some(dir.path().join("worker1")),
        ..base(Role::Worker)
    });
    assert!(w1.is_ok());
    assert!(dir.path().join("worker1/shard-00001.ct").exists());
    assert!(!dir.path().join("worker0/shard-00001.ct").exists());

    // Stopping a worker turns authentication into a retryable fault.
    servers.pop().unwrap().shutdown();
    let err = client.authenticate(&pack_query(&enc, &g.features).unwrap()).unwrap_err();
    assert!(matches!(err, Error::Remote { status: 503, .. }), "{err}");
    main.shutdown();
    for s in servers {
        s.shutdown();
    }
}
