//! Static cluster topology: shard ranges per worker, concurrent fan-out with
//! a deadline, and aggregation of partial compressed results.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::PathBuf;
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use crate::auth::{full_auth, output_count, CompressedResult, ServerModel};
use crate::error::{Error, Result};
use crate::he::{Evaluator, HeCiphertext};
use crate::params::BLOCK;
use crate::registry::{allocate, shard_count, IdentityMap, Occupancy, RegistryShard, ShardStore};

pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(10);

/// Contiguous shard ranges, one per worker, partitioning `0..shard_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPlan {
    ranges: Vec<Range<usize>>,
}

/// Splits `shard_count` shards into contiguous ranges whose sizes differ by
/// at most one. Larger ranges go to the last workers.
pub fn plan(shard_count: usize, workers: usize) -> Result<ClusterPlan> {
    if workers == 0 {
        return Err(Error::Config("a cluster needs at least one worker".into()));
    }
    let base = shard_count / workers;
    let extra = shard_count % workers;
    let mut start = 0;
    let ranges = (0..workers)
        .map(|w| {
            let len = base + usize::from(w >= workers - extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect();
    Ok(ClusterPlan { ranges })
}

impl ClusterPlan {
    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn worker_count(&self) -> usize {
        self.ranges.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    /// Worker owning `shard`. Shards past the planned total belong to the
    /// last worker.
    pub fn owner(&self, shard: usize) -> usize {
        self.ranges
            .iter()
            .position(|r| r.contains(&shard))
            .unwrap_or(self.ranges.len() - 1)
    }

    /// Shard indices a worker's store accepts: its range, open-ended for the
    /// last worker.
    pub fn accepts(&self, worker: usize) -> Range<usize> {
        let r = self.ranges[worker].clone();
        if worker + 1 == self.ranges.len() {
            r.start..usize::MAX
        } else {
            r
        }
    }

    /// Output groups worker `w` must contribute to when `existing` shards exist.
    pub fn required_groups(&self, worker: usize, existing: usize) -> BTreeSet<usize> {
        let r = self.accepts(worker);
        (r.start..r.end.min(existing)).map(|s| s / BLOCK).collect()
    }

    /// Shards owned by `worker` among the first `existing`, for error messages.
    fn span(&self, worker: usize, existing: usize) -> Range<usize> {
        let r = &self.ranges[worker];
        if worker + 1 == self.ranges.len() {
            r.start..r.end.max(existing)
        } else {
            r.clone()
        }
    }
}

/// A server holding a contiguous set of registry shards.
pub trait ShardWorker<C>: Send + Sync {
    fn describe(&self) -> String;

    /// Scores every held shard against the query and compresses per group.
    fn score(&self, query: &C) -> Result<Vec<CompressedResult<C>>>;

    fn enroll(&self, c_u: &C, global: usize) -> Result<()>;

    fn import(&self, shard: RegistryShard<C>) -> Result<()>;
}

/// In-process worker over a shard store, optionally persisted to disk.
pub struct LocalWorker<E: Evaluator> {
    eval: Arc<E>,
    model: Arc<ServerModel<E>>,
    store: RwLock<ShardStore<E::Ciphertext>>,
    dir: Option<PathBuf>,
    name: String,
}

impl<E: Evaluator> LocalWorker<E> {
    pub fn new(
        eval: Arc<E>,
        model: Arc<ServerModel<E>>,
        store: ShardStore<E::Ciphertext>,
        dir: Option<PathBuf>,
        name: impl Into<String>,
    ) -> Self {
        Self { eval, model, store: RwLock::new(store), dir, name: name.into() }
    }

    pub fn evaluator(&self) -> &Arc<E> {
        &self.eval
    }

    pub fn store(&self) -> std::sync::RwLockReadGuard<'_, ShardStore<E::Ciphertext>> {
        self.store.read().expect("shard store lock")
    }
}

impl<E: Evaluator> ShardWorker<E::Ciphertext> for LocalWorker<E> {
    fn describe(&self) -> String {
        self.name.clone()
    }

    fn score(&self, query: &E::Ciphertext) -> Result<Vec<CompressedResult<E::Ciphertext>>> {
        let snapshot = self.store().snapshot();
        let refs: Vec<_> = snapshot.iter().map(|s| &**s).collect();
        full_auth(&*self.eval, &self.model, query, &refs)
    }

    fn enroll(&self, c_u: &E::Ciphertext, global: usize) -> Result<()> {
        let mut store = self.store.write().expect("shard store lock");
        store.register(&*self.eval, c_u, global)?;
        if let Some(dir) = &self.dir {
            store.persist_shard(dir, allocate(global, store.capacity()).0)?;
        }
        Ok(())
    }

    fn import(&self, shard: RegistryShard<E::Ciphertext>) -> Result<()> {
        let idx = shard.shard_index;
        let mut store = self.store.write().expect("shard store lock");
        store.import_shard(shard)?;
        if let Some(dir) = &self.dir {
            store.persist_shard(dir, idx)?;
        }
        Ok(())
    }
}

/// Sends the query to every worker concurrently. Fails on the first fault or
/// when any worker misses the deadline; no partial answer is returned.
pub fn fan_out<C: HeCiphertext>(
    plan: &ClusterPlan,
    workers: &[Arc<dyn ShardWorker<C>>],
    query: &C,
    existing: usize,
    deadline: Duration,
) -> Result<Vec<Vec<CompressedResult<C>>>> {
    if workers.len() != plan.worker_count() {
        return Err(Error::Config(format!("{} workers for a plan of {}", workers.len(), plan.worker_count())));
    }
    let fault = |w: usize, reason: String| Error::WorkerFault {
        worker: w + 1,
        endpoint: workers[w].describe(),
        shards: plan.span(w, existing),
        reason,
    };
    let start = Instant::now();
    let query = Arc::new(query.clone());
    let (tx, rx) = mpsc::channel();
    for (w, worker) in workers.iter().enumerate() {
        let (tx, worker, query) = (tx.clone(), Arc::clone(worker), Arc::clone(&query));
        thread::spawn(move || {
            let _ = tx.send((w, worker.score(&query)));
        });
    }
    drop(tx);
    let mut results: Vec<Option<Vec<CompressedResult<C>>>> = vec![None; workers.len()];
    let mut pending = workers.len();
    while pending > 0 {
        let left = deadline.saturating_sub(start.elapsed());
        match rx.recv_timeout(left) {
            Ok((w, Ok(partial))) => {
                results[w] = Some(partial);
                pending -= 1;
            }
            Ok((w, Err(e))) => return Err(fault(w, e.to_string())),
            Err(_) => {
                let w = results.iter().position(Option::is_none).expect("a worker is pending");
                return Err(fault(w, format!("no response within {} ms", deadline.as_millis())));
            }
        }
    }
    Ok(results.into_iter().map(|r| r.expect("all workers answered")).collect())
}

/// Sums partial results per output group. Every worker must contribute to
/// each group its existing shards fall in; contributions for groups past the
/// existing shards (from a concurrent enrollment) are dropped.
pub fn aggregate<E: Evaluator>(
    eval: &E,
    plan: &ClusterPlan,
    partials: Vec<Vec<CompressedResult<E::Ciphertext>>>,
    existing: usize,
) -> Result<Vec<CompressedResult<E::Ciphertext>>> {
    let groups = output_count(existing);
    let mut sums: BTreeMap<usize, E::Ciphertext> = BTreeMap::new();
    for (w, partial) in partials.into_iter().enumerate() {
        let mut missing = plan.required_groups(w, existing);
        for r in partial {
            missing.remove(&r.group);
            if r.group >= groups {
                continue;
            }
            let sum = match sums.remove(&r.group) {
                None => r.ciphertext,
                Some(acc) => eval.add(&acc, &r.ciphertext)?,
            };
            sums.insert(r.group, sum);
        }
        if let Some(g) = missing.first() {
            return Err(Error::IncompleteAggregation(format!("worker {} sent nothing for output group {g}", w + 1)));
        }
    }
    if let Some(g) = (0..groups).find(|g| !sums.contains_key(g)) {
        return Err(Error::IncompleteAggregation(format!("no partial for output group {g}")));
    }
    Ok(sums.into_iter().map(|(group, ciphertext)| CompressedResult { group, ciphertext }).collect())
}

/// Main-server state: the plan, the workers and the identity map.
pub struct Coordinator<E: Evaluator> {
    eval: Arc<E>,
    plan: ClusterPlan,
    workers: Vec<Arc<dyn ShardWorker<E::Ciphertext>>>,
    identities: RwLock<IdentityMap>,
    enroll_lock: Mutex<()>,
    dir: Option<PathBuf>,
    deadline: Duration,
}

/// Authentication response: compressed results by ascending group and the
/// validity bitset over `groups * slot_count` global indices.
#[derive(Debug, Clone)]
pub struct AuthResponse<C> {
    pub results: Vec<CompressedResult<C>>,
    pub occupancy: Occupancy,
}

impl<E: Evaluator> Coordinator<E> {
    pub fn new(
        eval: Arc<E>,
        plan: ClusterPlan,
        workers: Vec<Arc<dyn ShardWorker<E::Ciphertext>>>,
        identities: IdentityMap,
        dir: Option<PathBuf>,
        deadline: Duration,
    ) -> Result<Self> {
        if workers.len() != plan.worker_count() {
            return Err(Error::Config(format!("{} workers for a plan of {}", workers.len(), plan.worker_count())));
        }
        Ok(Self {
            eval,
            plan,
            workers,
            identities: RwLock::new(identities),
            enroll_lock: Mutex::new(()),
            dir,
            deadline,
        })
    }

    /// Single server: one in-process worker holding every shard.
    pub fn single(
        eval: Arc<E>,
        model: Arc<ServerModel<E>>,
        store: ShardStore<E::Ciphertext>,
        identities: IdentityMap,
        dir: Option<PathBuf>,
    ) -> Result<Self> {
        let planned = shard_count(identities.len(), eval.params().registry_capacity());
        let worker = LocalWorker::new(Arc::clone(&eval), model, store, dir.clone(), "local");
        Self::new(eval, plan(planned, 1)?, vec![Arc::new(worker)], identities, dir, DEFAULT_DEADLINE)
    }

    pub fn evaluator(&self) -> &Arc<E> {
        &self.eval
    }

    pub fn plan(&self) -> &ClusterPlan {
        &self.plan
    }

    pub fn registered(&self) -> usize {
        self.identities.read().expect("identity lock").len()
    }

    fn capacity(&self) -> usize {
        self.eval.params().registry_capacity()
    }

    /// Allocates the next global index, registers on the owning worker and
    /// records the identity. Enrollments are serialized.
    pub fn enroll(&self, c_u: &E::Ciphertext, user_id: &str) -> Result<usize> {
        let _guard = self.enroll_lock.lock().expect("enroll lock");
        let global = self.identities.read().expect("identity lock").next_index();
        let (shard, _) = allocate(global, self.capacity());
        self.workers[self.plan.owner(shard)].enroll(c_u, global)?;
        let mut ids = self.identities.write().expect("identity lock");
        ids.push(user_id)?;
        if let Some(dir) = &self.dir {
            ids.persist(dir)?;
        }
        Ok(global)
    }

    /// Installs a client-encrypted shard holding `user_ids` in its first
    /// blocks. The shard must be the next one and the registry must end on a
    /// shard boundary.
    pub fn import(&self, shard: RegistryShard<E::Ciphertext>, user_ids: &[String]) -> Result<Range<usize>> {
        let _guard = self.enroll_lock.lock().expect("enroll lock");
        let cap = self.capacity();
        let n = self.identities.read().expect("identity lock").len();
        if n % cap != 0 || shard.shard_index != n / cap {
            return Err(Error::Config(format!(
                "bulk import must target the next empty shard ({}), got {}",
                n.div_ceil(cap),
                shard.shard_index
            )));
        }
        if user_ids.is_empty() || user_ids.len() > cap || shard.occupancy != Occupancy::prefix(user_ids.len(), cap) {
            return Err(Error::Shape("imported occupancy must cover exactly the listed identities".into()));
        }
        self.workers[self.plan.owner(shard.shard_index)].import(shard)?;
        let mut ids = self.identities.write().expect("identity lock");
        for id in user_ids {
            ids.push(id)?;
        }
        if let Some(dir) = &self.dir {
            ids.persist(dir)?;
        }
        Ok(n..n + user_ids.len())
    }

    pub fn lookup_identity(&self, global: usize) -> Result<String> {
        Ok(self.identities.read().expect("identity lock").lookup(global)?.to_owned())
    }

    pub fn authenticate(&self, query: &E::Ciphertext) -> Result<AuthResponse<E::Ciphertext>> {
        let ids = self.identities.read().expect("identity lock").clone();
        let existing = shard_count(ids.len(), self.capacity());
        let groups = output_count(existing).max(1);
        let occupancy = ids.occupancy(groups * self.eval.params().slot_count());
        if existing == 0 {
            return Ok(AuthResponse { results: Vec::new(), occupancy });
        }
        let partials = fan_out(&self.plan, &self.workers, query, existing, self.deadline)?;
        let results = aggregate(&*self.eval, &self.plan, partials, existing)?;
        Ok(AuthResponse { results, occupancy })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plan_examples() {
        assert_eq!(plan(10, 3).unwrap().sizes(), vec![3, 3, 4]);
        assert_eq!(plan(10, 1).unwrap().sizes(), vec![10]);
        assert_eq!(plan(10, 2).unwrap().sizes(), vec![5, 5]);
        assert_eq!(plan(10, 3).unwrap().ranges()[1], 3..6);
        assert!(matches!(plan(10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn owner_and_groups() {
        let p = plan(10, 3).unwrap();
        assert_eq!(p.owner(0), 0);
        assert_eq!(p.owner(5), 1);
        assert_eq!(p.owner(9), 2);
        assert_eq!(p.owner(40), 2);
        let p = plan(20, 2).unwrap();
        assert_eq!(p.required_groups(1, 20), BTreeSet::from([0, 1]));
        assert_eq!(p.required_groups(1, 5), BTreeSet::new());
    }

    #[test]
    fn worker_fault_names_inclusive_range() {
        let e = Error::WorkerFault { worker: 2, endpoint: "w2".into(), shards: 3..6, reason: "down".into() };
        assert!(e.to_string().contains("shards 3..5"), "{e}");
    }

    proptest! {
        #[test]
        fn plan_is_a_balanced_partition(n in 0usize..500, w in 1usize..40) {
            let p = plan(n, w).unwrap();
            prop_assert_eq!(p.worker_count(), w);
            let mut next = 0;
            for r in p.ranges() {
                prop_assert_eq!(r.start, next);
                next = r.end;
            }
            prop_assert_eq!(next, n);
            let sizes = p.sizes();
            let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            prop_assert!(sizes.windows(2).all(|s| s[0] <= s[1]));
            prop_assert_eq!(plan(n, w).unwrap(), p);
        }
    }
}
