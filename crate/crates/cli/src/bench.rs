//! Cluster benchmark. Packs a synthetic registry into shards offline, spawns
//! one `encmatch serve` process per worker, and times authentication round
//! trips through an in-process main server for each worker count.

use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use encmatch_core::client::{decide, pack_query, pack_shard, Decision, DecisionParams};
use encmatch_core::cluster::plan;
use encmatch_core::he::ckks::{CkksCiphertext, CkksDecryptor, CkksEncryptor, CkksEvaluator, EvaluationKeys, KeyBundle};
use encmatch_core::he::Evaluator;
use encmatch_core::oracle::Synthetic;
use encmatch_core::params::{HeParams, ParamsDigest, Profile};
use encmatch_core::registry::{IdentityMap, RegistryShard, ShardStore};
use encmatch_core::transport::{keyfiles, node, Role, ServiceClient, ServiceConfig};
use encmatch_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub workers: Vec<usize>,
    pub population: usize,
    /// Timed authentications per worker count, after one warm-up.
    pub queries: usize,
    pub profile: Profile,
    pub seed: u64,
    /// The `encmatch` binary used to spawn workers.
    pub exe: PathBuf,
    /// Scratch directory for keys, fixture and shard files.
    pub dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub workers: usize,
    pub shards_per_worker: Vec<usize>,
    pub latencies: Vec<Duration>,
    /// Queries whose decision named the enrolled target.
    pub correct: usize,
}

impl BenchRow {
    pub fn mean(&self) -> Duration {
        self.latencies.iter().sum::<Duration>() / self.latencies.len().max(1) as u32
    }

    pub fn min(&self) -> Duration {
        self.latencies.iter().copied().min().unwrap_or_default()
    }

    pub fn max(&self) -> Duration {
        self.latencies.iter().copied().max().unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub population: usize,
    pub shards: usize,
    pub poly_degree: usize,
    pub cores: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Mean latency of the first row divided by that of `workers`.
    pub fn speedup(&self, workers: usize) -> Option<f64> {
        let base = self.rows.first()?.mean().as_secs_f64();
        let row = self.rows.iter().find(|r| r.workers == workers)?;
        Some(base / row.mean().as_secs_f64())
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "N={} shards={} d={} cores={}\nworkers  shards/worker  mean_ms  min_ms  max_ms  speedup  correct\n",
            self.population, self.shards, self.poly_degree, self.cores
        );
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        for r in &self.rows {
            let split: Vec<String> = r.shards_per_worker.iter().map(usize::to_string).collect();
            writeln!(
                out,
                "{:<8} {:<14} {:>7.1} {:>7.1} {:>7.1} {:>7.2}x  {}/{}",
                r.workers,
                split.join("/"),
                ms(r.mean()),
                ms(r.min()),
                ms(r.max()),
                self.speedup(r.workers).unwrap_or(f64::NAN),
                r.correct,
                r.latencies.len()
            )
            .unwrap();
        }
        out
    }
}

/// Kills spawned workers on drop, including on early returns.
struct Children(Vec<Child>);

impl Drop for Children {
    fn drop(&mut self) {
        for c in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn free_port() -> Result<String> {
    Ok(TcpListener::bind("127.0.0.1:0")?.local_addr()?.to_string())
}

fn wait_ready(addr: &str, digest: ParamsDigest, children: &mut Children) -> Result<()> {
    let client = ServiceClient::new(addr, digest).with_timeout(Duration::from_secs(5));
    let start = Instant::now();
    loop {
        if client.health().is_ok() {
            return Ok(());
        }
        for c in &mut children.0 {
            if let Some(status) = c.try_wait()? {
                return Err(Error::Config(format!("worker process exited early with {status}")));
            }
        }
        if start.elapsed() > Duration::from_secs(180) {
            return Err(Error::Config(format!("worker at {addr} did not become ready")));
        }
        thread::sleep(Duration::from_millis(100));
    }
}

struct Prepared {
    params: HeParams,
    keys_dir: PathBuf,
    model_path: PathBuf,
    shards: Vec<RegistryShard<CkksCiphertext>>,
    identities: IdentityMap,
    syn: Synthetic,
    enc: CkksEncryptor,
    dec: CkksDecryptor,
    reader: CkksEvaluator,
    decision: DecisionParams,
}

pub fn run(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.workers.is_empty() || opts.workers.contains(&0) || opts.queries == 0 {
        return Err(Error::Config("need positive worker counts and at least one query".into()));
    }
    let prep = prepare(opts)?;
    let mut rows = Vec::new();
    for &w in &opts.workers {
        rows.push(run_cluster(opts, &prep, w)?);
    }
    Ok(BenchReport {
        population: opts.population,
        shards: prep.shards.len(),
        poly_degree: prep.params.poly_degree(),
        cores: thread::available_parallelism().map(usize::from).unwrap_or(1),
        rows,
    })
}

fn prepare(opts: &BenchOptions) -> Result<Prepared> {
    let params = HeParams::from_profile(opts.profile)?;
    let keys_dir = opts.dir.join("keys");
    let bundle = KeyBundle::generate(&params, None)?;
    keyfiles::write_bundle(&bundle, &keys_dir)?;
    let ctx = Arc::clone(bundle.context());
    let enc = CkksEncryptor::new(Arc::clone(&ctx), bundle.public.clone());
    let dec = CkksDecryptor::new(Arc::clone(&ctx), bundle.secret.clone());
    let reader = CkksEvaluator::new(ctx, EvaluationKeys { relin: None, galois: Default::default() });

    let fixture_dir = opts.dir.join("fixture");
    let syn = crate::fixture(opts.population, opts.seed, opts.queries + 1, &fixture_dir)?;
    let users: Vec<_> = syn.registry.entries().iter().map(|e| e.features).collect();
    let shards = users
        .chunks(params.registry_capacity())
        .enumerate()
        .map(|(s, chunk)| pack_shard(&enc, s, chunk))
        .collect::<Result<Vec<_>>>()?;
    let mut identities = IdentityMap::new();
    for e in syn.registry.entries() {
        identities.push(&e.user_id)?;
    }
    let decision = crate::model_for(&syn.spec).decision()?;
    Ok(Prepared {
        params,
        keys_dir,
        model_path: fixture_dir.join("model.json"),
        shards,
        identities,
        syn,
        enc,
        dec,
        reader,
        decision,
    })
}

fn run_cluster(opts: &BenchOptions, prep: &Prepared, w: usize) -> Result<BenchRow> {
    let root = opts.dir.join(format!("cluster-{w}"));
    let cap = prep.params.registry_capacity();
    let digest = prep.params.digest();
    let p = plan(prep.shards.len(), w)?;
    let addrs = (0..w).map(|_| free_port()).collect::<Result<Vec<_>>>()?;
    let key = |name: &str| Some(prep.keys_dir.join(name));
    let base = ServiceConfig {
        public_key: key(keyfiles::PUBLIC_FILE),
        galois_key: key(keyfiles::GALOIS_FILE),
        relin_key: key(keyfiles::RELIN_FILE),
        model_path: Some(prep.model_path.clone()),
        workers: addrs.clone(),
        planned_shards: Some(prep.shards.len()),
        deadline_ms: 600_000,
        ..ServiceConfig::new(Role::Worker, opts.profile)
    };

    let mut children = Children(Vec::new());
    for (i, addr) in addrs.iter().enumerate() {
        let dir = root.join(format!("worker{i}"));
        let mut store = ShardStore::for_range(cap, p.accepts(i));
        for s in prep.shards.iter().filter(|s| p.accepts(i).contains(&s.shard_index)) {
            store.import_shard(s.clone())?;
        }
        store.persist(&dir)?;
        let cfg = ServiceConfig {
            listen: Some(addr.clone()),
            worker_index: Some(i),
            registry_path: Some(dir),
            ..base.clone()
        };
        let path = root.join(format!("worker{i}.json"));
        cfg.save(&path)?;
        children.0.push(spawn_worker(&opts.exe, &path, &root.join(format!("worker{i}.log")))?);
    }
    for addr in &addrs {
        wait_ready(addr, digest, &mut children)?;
    }

    let main_dir = root.join("main");
    prep.identities.persist(&main_dir)?;
    let main_cfg = ServiceConfig {
        role: Role::Main,
        listen: Some("127.0.0.1:0".into()),
        registry_path: Some(main_dir),
        galois_key: None,
        relin_key: None,
        model_path: None,
        ..base
    };
    let main = node::start(&main_cfg)?;
    let client = ServiceClient::new(main.addr().to_string(), digest).with_timeout(Duration::from_secs(600));
    let result = time_queries(prep, &client, opts.queries);
    main.shutdown();
    drop(children);
    let (latencies, correct) = result?;
    Ok(BenchRow { workers: w, shards_per_worker: p.sizes(), latencies, correct })
}

fn spawn_worker(exe: &Path, config: &Path, log: &Path) -> Result<Child> {
    Ok(Command::new(exe)
        .arg("serve")
        .arg("--config")
        .arg(config)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(std::fs::File::create(log)?)
        .spawn()?)
}

/// One untimed warm-up, then `queries` timed genuine authentications.
fn time_queries(prep: &Prepared, client: &ServiceClient, queries: usize) -> Result<(Vec<Duration>, usize)> {
    let mut latencies = Vec::with_capacity(queries);
    let mut correct = 0;
    for (k, g) in prep.syn.genuine.iter().take(queries + 1).enumerate() {
        let q = pack_query(&prep.enc, &g.features)?;
        let start = Instant::now();
        let reply = client.authenticate(&q)?;
        let elapsed = start.elapsed();
        if k == 0 {
            continue;
        }
        latencies.push(elapsed);
        let cts = reply
            .results
            .iter()
            .map(|(_, b)| prep.reader.ciphertext_from_bytes(b))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if let Decision::Match { global_index, .. } = decide(&prep.dec, &cts, &reply.occupancy, &prep.decision)? {
            correct += usize::from(global_index == g.target);
        }
    }
    Ok((latencies, correct))
}
