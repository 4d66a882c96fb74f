//! Plaintext reference pipeline and synthetic fixtures. Nothing here touches
//! slot arithmetic from the encrypted path.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::client::{FeatureFile, FeatureRecord, FeatureVector16};
use crate::error::{Error, Result};
use crate::params::BLOCK;

/// Largest acceptable |encrypted - clear| score error.
pub const NOISE_BOUND: f64 = 1e-2;

/// Required separation, in multiples of [`NOISE_BOUND`], between a fixture's
/// decisions and the threshold or the runner-up.
pub const MARGIN_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClearEntry {
    pub global_index: usize,
    pub features: FeatureVector16,
    pub user_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClearRegistry {
    entries: Vec<ClearEntry>,
}

impl ClearRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends at the next sequential index.
    pub fn push(&mut self, features: FeatureVector16, user_id: impl Into<String>) -> usize {
        let global_index = self.entries.len();
        self.entries.push(ClearEntry { global_index, features, user_id: user_id.into() });
        global_index
    }

    pub fn entries(&self) -> &[ClearEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `sum_t w_t ((r_t - u_t) + b_t)^2` for one registered vector.
pub fn pair_score(r: &[f64; BLOCK], u: &[f64; BLOCK], b: &[f64; BLOCK], w: &[f64; BLOCK]) -> f64 {
    let mut s = 0.0;
    for t in 0..BLOCK {
        let d = (r[t] - u[t]) + b[t];
        s += w[t] * d * d;
    }
    s
}

/// Score of every registered index, in index order.
pub fn clear_score(reg: &ClearRegistry, u: &FeatureVector16, b: &[f64; BLOCK], w: &[f64; BLOCK]) -> Vec<f64> {
    reg.entries.iter().map(|e| pair_score(&e.features.0, &u.0, b, w)).collect()
}

/// Best index and its logit `score + fc1_bias`, lowest index on ties.
pub fn clear_best(scores: &[f64], fc1_bias: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        let z = s + fc1_bias;
        if best.is_none_or(|(_, bz)| z > bz) {
            best = Some((i, z));
        }
    }
    best
}

/// Synthetic population parameters. The model is fixed: w = -1, b = 0, so
/// scores are negated squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub population: usize,
    pub genuine_sigma: f64,
    pub embedding_scale: f64,
    pub queries: usize,
    pub fc1_bias: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(population: usize, seed: u64) -> Self {
        Self {
            population,
            genuine_sigma: 0.05,
            embedding_scale: 2.0,
            queries: 200,
            fc1_bias: 2.0,
            threshold: 0.2,
            seed,
        }
    }

    pub fn fc16_bias(&self) -> [f64; BLOCK] {
        [0.0; BLOCK]
    }

    pub fn fc1_weights(&self) -> [f64; BLOCK] {
        [-1.0; BLOCK]
    }

    /// Logit at which the sigmoid equals the threshold.
    pub fn threshold_logit(&self) -> f64 {
        (self.threshold / (1.0 - self.threshold)).ln()
    }
}

#[derive(Debug, Clone)]
pub struct GenuineQuery {
    pub target: usize,
    pub features: FeatureVector16,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub spec: SyntheticSpec,
    pub registry: ClearRegistry,
    pub genuine: Vec<GenuineQuery>,
    pub imposters: Vec<FeatureVector16>,
}

/// Deterministic population, genuine queries (a registered vector plus
/// Gaussian noise) and independent imposters. Rejects fixtures whose
/// decisions sit within `MARGIN_FACTOR * NOISE_BOUND` of flipping.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    if spec.population == 0 {
        return Err(Error::Spec("population must be positive".into()));
    }
    if !(spec.genuine_sigma >= 0.0 && spec.embedding_scale > 0.0) {
        return Err(Error::Spec("noise and scale must be non-negative and positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let embed = Normal::new(0.0, spec.embedding_scale).map_err(|e| Error::Spec(e.to_string()))?;
    let noise = Normal::new(0.0, spec.genuine_sigma).map_err(|e| Error::Spec(e.to_string()))?;
    let draw = |rng: &mut ChaCha20Rng, d: &Normal<f64>| FeatureVector16(std::array::from_fn(|_| d.sample(rng)));

    let mut registry = ClearRegistry::new();
    for i in 0..spec.population {
        let v = draw(&mut rng, &embed);
        registry.push(v, format!("user-{i:05}"));
    }
    let genuine = (0..spec.queries)
        .map(|_| {
            let target = rng.random_range(0..spec.population);
            let r = registry.entries[target].features.0;
            let n = draw(&mut rng, &noise);
            GenuineQuery { target, features: FeatureVector16(std::array::from_fn(|t| r[t] + n.0[t])) }
        })
        .collect();
    let imposters = (0..spec.queries).map(|_| draw(&mut rng, &embed)).collect();
    let syn = Synthetic { spec: spec.clone(), registry, genuine, imposters };
    check_margins(&syn)?;
    Ok(syn)
}

fn check_margins(syn: &Synthetic) -> Result<()> {
    let spec = &syn.spec;
    let margin = MARGIN_FACTOR * NOISE_BOUND;
    let thr = spec.threshold_logit();
    let (b, w) = (spec.fc16_bias(), spec.fc1_weights());
    for (k, q) in syn.genuine.iter().enumerate() {
        let z: Vec<f64> = clear_score(&syn.registry, &q.features, &b, &w).iter().map(|s| s + spec.fc1_bias).collect();
        let own = z[q.target];
        if own - thr < margin {
            return Err(Error::Spec(format!("genuine query {k} is within the margin of the threshold")));
        }
        let runner_up = z.iter().enumerate().filter(|&(i, _)| i != q.target).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
        if own - runner_up < margin {
            return Err(Error::Spec(format!("genuine query {k} is within the margin of another user")));
        }
    }
    for (k, q) in syn.imposters.iter().enumerate() {
        let best = clear_score(&syn.registry, q, &b, &w).iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s)) + spec.fc1_bias;
        if thr - best < margin {
            return Err(Error::Spec(format!("imposter query {k} is within the margin of the threshold")));
        }
    }
    Ok(())
}

impl Synthetic {
    /// Writes `registry.txt`, `genuine.txt` and `imposters.txt` in the
    /// feature-file format with the generating parameters in the header.
    pub fn write_fixture(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let s = &self.spec;
        let header = vec![
            format!("seed={}", s.seed),
            format!("population={}", s.population),
            format!("genuine_sigma={}", s.genuine_sigma),
            format!("embedding_scale={}", s.embedding_scale),
        ];
        let file = |records: Vec<FeatureRecord>| FeatureFile { header: header.clone(), records };
        file(self
            .registry
            .entries
            .iter()
            .map(|e| FeatureRecord { label: Some(e.user_id.clone()), values: e.features.0.to_vec() })
            .collect())
        .write(&dir.join("registry.txt"))?;
        file(self
            .genuine
            .iter()
            .map(|g| FeatureRecord {
                label: Some(self.registry.entries[g.target].user_id.clone()),
                values: g.features.0.to_vec(),
            })
            .collect())
        .write(&dir.join("genuine.txt"))?;
        file(self.imposters.iter().map(|v| FeatureRecord { label: None, values: v.0.to_vec() }).collect())
            .write(&dir.join("imposters.txt"))?;
        Ok(())
    }
}

/// Where global index `marker` ends up after packing, scoring and
/// compression, found by pushing a marker through plain slot vectors.
/// Returns `(output_group, slot)`.
pub fn layout_oracle(n: usize, marker: usize, capacity: usize, slot_count: usize) -> Option<(usize, usize)> {
    if marker >= n {
        return None;
    }
    let shards = n.div_ceil(capacity);
    let mut outputs: Vec<Vec<f64>> = vec![vec![0.0; slot_count]; shards.div_ceil(BLOCK)];
    for shard in 0..shards {
        // Registration: user vectors occupy slots 0..16, shifted right by 16 * local.
        let mut reg = vec![0.0; slot_count];
        for local in 0..capacity {
            let g = shard * capacity + local;
            if g >= n {
                break;
            }
            let mut v = vec![0.0; slot_count];
            for t in 0..BLOCK {
                v[t] = if g == marker { 1.0 } else { 0.0 };
            }
            v.rotate_right(BLOCK * local);
            for (a, b) in reg.iter_mut().zip(&v) {
                *a += b;
            }
        }
        // Scoring sums each 16-window; only window heads survive the mask.
        let mut scored = vec![0.0; slot_count];
        for local in 0..capacity {
            if shard * capacity + local < n {
                scored[BLOCK * local] = (0..BLOCK).map(|t| reg[(BLOCK * local + t) % slot_count]).sum();
            }
        }
        scored.rotate_right(shard % BLOCK);
        for (a, b) in outputs[shard / BLOCK].iter_mut().zip(&scored) {
            *a += b;
        }
    }
    outputs.iter().enumerate().find_map(|(g, out)| out.iter().position(|&v| v != 0.0).map(|s| (g, s)))
}
