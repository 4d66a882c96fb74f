//! Encrypted registry: packed shards, sequential allocation, the plaintext
//! identity map and on-disk persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::he::{Evaluator, HeCiphertext, HeError};
use crate::params::BLOCK;

const OCCUPANCY_HEADER: &str = "encmatch-occupancy v1";
const IDENTITY_HEADER: &str = "encmatch-identities v1";
const OCCUPANCY_FILE: &str = "occupancy.hex";
const IDENTITY_FILE: &str = "identities.txt";

/// Fixed-length bitset. Hex form is little-endian: bit `i` is bit `i % 8` of
/// byte `i / 8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occupancy {
    bytes: Vec<u8>,
    len: usize,
}

impl Occupancy {
    pub fn new(len: usize) -> Self {
        Self { bytes: vec![0; len.div_ceil(8)], len }
    }

    /// Bits `0..count` set, the rest clear.
    pub fn prefix(count: usize, len: usize) -> Self {
        let mut o = Self::new(len);
        for i in 0..count.min(len) {
            o.set(i);
        }
        o
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.len && self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} outside bitset of length {}", self.len);
        self.bytes[i / 8] |= 1 << (i % 8);
    }

    pub fn count(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn iter_set(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::Format(format!("occupancy hex: {e}")))?;
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Format(format!("occupancy has {} bytes, expected {}", bytes.len(), len.div_ceil(8))));
        }
        let o = Self { bytes, len };
        if len % 8 != 0 && o.bytes.last().is_some_and(|b| b >> (len % 8) != 0) {
            return Err(Error::Format("occupancy sets bits past its length".into()));
        }
        Ok(o)
    }
}

/// `(shard, local)` for the next registrant when `n_registered` are present.
pub fn allocate(n_registered: usize, capacity: usize) -> (usize, usize) {
    (n_registered / capacity, n_registered % capacity)
}

pub fn global_index(shard: usize, local: usize, capacity: usize) -> usize {
    shard * capacity + local
}

pub fn shard_count(n_registered: usize, capacity: usize) -> usize {
    n_registered.div_ceil(capacity)
}

#[derive(Debug, Clone)]
pub struct RegistryShard<C> {
    pub shard_index: usize,
    pub ciphertext: C,
    pub occupancy: Occupancy,
}

impl<C: HeCiphertext> RegistryShard<C> {
    pub fn empty<E: Evaluator<Ciphertext = C>>(eval: &E, shard_index: usize) -> Result<Self> {
        let p = eval.params();
        Ok(Self {
            shard_index,
            ciphertext: eval.zero(p.max_level(), p.default_scale())?,
            occupancy: Occupancy::new(p.registry_capacity()),
        })
    }

    pub fn capacity(&self) -> usize {
        self.occupancy.len()
    }

    /// Adds `c_u` rotated right by `16 * local` into the shard.
    pub fn register<E: Evaluator<Ciphertext = C>>(&mut self, eval: &E, c_u: &C, local: usize) -> Result<()> {
        if local >= self.capacity() {
            return Err(Error::Bounds { index: local, limit: self.capacity() });
        }
        let global = global_index(self.shard_index, local, self.capacity());
        if self.occupancy.get(local) {
            return Err(Error::Conflict(global));
        }
        if c_u.level() != self.ciphertext.level() {
            return Err(HeError::Alignment(format!(
                "registration at level {}, shard at level {}",
                c_u.level(),
                self.ciphertext.level()
            ))
            .into());
        }
        let shifted = eval.rotate(c_u, -((BLOCK * local) as i64))?;
        self.ciphertext = eval.add(&self.ciphertext, &shifted)?;
        self.occupancy.set(local);
        Ok(())
    }
}

/// Shards held by one server, keyed by global shard index. Shards are shared
/// immutably with in-flight authentications; registration copies on write.
#[derive(Debug, Clone)]
pub struct ShardStore<C> {
    capacity: usize,
    accepts: Range<usize>,
    shards: BTreeMap<usize, Arc<RegistryShard<C>>>,
}

impl<C: HeCiphertext> ShardStore<C> {
    /// Store owning every shard index.
    pub fn new(capacity: usize) -> Self {
        Self::for_range(capacity, 0..usize::MAX)
    }

    /// Store owning the shard indices in `accepts`.
    pub fn for_range(capacity: usize, accepts: Range<usize>) -> Self {
        Self { capacity, accepts, shards: BTreeMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn accepts(&self) -> &Range<usize> {
        &self.accepts
    }

    pub fn len(&self) -> usize {
        self.shards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shards.is_empty()
    }

    pub fn get(&self, shard: usize) -> Option<&RegistryShard<C>> {
        self.shards.get(&shard).map(|s| &**s)
    }

    /// Current shards in index order.
    pub fn snapshot(&self) -> Vec<Arc<RegistryShard<C>>> {
        self.shards.values().cloned().collect()
    }

    fn check_owned(&self, shard: usize) -> Result<()> {
        if !self.accepts.contains(&shard) {
            return Err(Error::Config(format!(
                "shard {shard} is outside this server's range {}..{}",
                self.accepts.start, self.accepts.end
            )));
        }
        Ok(())
    }

    /// Registers `c_u` at `global`, creating a zero shard if needed.
    pub fn register<E: Evaluator<Ciphertext = C>>(&mut self, eval: &E, c_u: &C, global: usize) -> Result<()> {
        let (shard, local) = allocate(global, self.capacity);
        self.check_owned(shard)?;
        let entry = match self.shards.entry(shard) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(v) => v.insert(Arc::new(RegistryShard::empty(eval, shard)?)),
        };
        // Work on a copy so a failed registration leaves the shard untouched.
        let mut updated = (**entry).clone();
        updated.register(eval, c_u, local)?;
        *entry = Arc::new(updated);
        Ok(())
    }

    /// Installs a shard encrypted in bulk by the client. The target index must
    /// be empty.
    pub fn import_shard(&mut self, shard: RegistryShard<C>) -> Result<()> {
        self.check_owned(shard.shard_index)?;
        if shard.occupancy.len() != self.capacity {
            return Err(Error::Shape(format!(
                "imported occupancy has {} entries, capacity is {}",
                shard.occupancy.len(),
                self.capacity
            )));
        }
        if let Some(existing) = self.shards.get(&shard.shard_index) {
            if let Some(local) = existing.occupancy.iter_set().next() {
                return Err(Error::Conflict(global_index(shard.shard_index, local, self.capacity)));
            }
        }
        self.shards.insert(shard.shard_index, Arc::new(shard));
        Ok(())
    }

    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (idx, shard) in &self.shards {
            fs::write(dir.join(shard_file(*idx)), shard.ciphertext.to_bytes())?;
        }
        self.write_occupancy(dir)
    }

    /// Rewrites one shard file and the occupancy file.
    pub fn persist_shard(&self, dir: &Path, shard: usize) -> Result<()> {
        fs::create_dir_all(dir)?;
        let s = self.shards.get(&shard).ok_or(Error::NotFound(shard))?;
        fs::write(dir.join(shard_file(shard)), s.ciphertext.to_bytes())?;
        self.write_occupancy(dir)
    }

    fn write_occupancy(&self, dir: &Path) -> Result<()> {
        let mut occ = format!("{OCCUPANCY_HEADER}\ncapacity,{}\n", self.capacity);
        for (idx, shard) in &self.shards {
            writeln!(occ, "{idx},{}", shard.occupancy.to_hex()).unwrap();
        }
        fs::write(dir.join(OCCUPANCY_FILE), occ)?;
        Ok(())
    }

    /// Loads the shards listed in the occupancy file. A directory without one
    /// is an empty store.
    pub fn load<E: Evaluator<Ciphertext = C>>(eval: &E, dir: &Path, accepts: Range<usize>) -> Result<Self> {
        let capacity = eval.params().registry_capacity();
        let mut store = Self::for_range(capacity, accepts);
        let path = dir.join(OCCUPANCY_FILE);
        if !path.exists() {
            return Ok(store);
        }
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines();
        if lines.next() != Some(OCCUPANCY_HEADER) {
            return Err(Error::Format(format!("{}: missing or unsupported header", path.display())));
        }
        let stored_cap = lines
            .next()
            .and_then(|l| l.strip_prefix("capacity,"))
            .and_then(|c| c.parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("{}: missing capacity line", path.display())))?;
        if stored_cap != capacity {
            return Err(Error::Format(format!("registry capacity {stored_cap} does not match parameters ({capacity})")));
        }
        for line in lines.filter(|l| !l.is_empty()) {
            let (idx, hex) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad occupancy line {line:?}")))?;
            let idx: usize = idx.parse().map_err(|_| Error::Format(format!("bad shard index {idx:?}")))?;
            let occupancy = Occupancy::from_hex(hex, capacity)?;
            let bytes = fs::read(dir.join(shard_file(idx)))?;
            let ciphertext = eval.ciphertext_from_bytes(&bytes)?;
            store.check_owned(idx)?;
            store.shards.insert(idx, Arc::new(RegistryShard { shard_index: idx, ciphertext, occupancy }));
        }
        Ok(store)
    }
}

fn shard_file(idx: usize) -> String {
    format!("shard-{idx:05}.ct")
}

/// Append-only map from global index to user id. Indices are dense because
/// allocation is sequential.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdentityMap {
    ids: Vec<String>,
}

impl IdentityMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Next global index that [`IdentityMap::push`] will assign.
    pub fn next_index(&self) -> usize {
        self.ids.len()
    }

    pub fn push(&mut self, user_id: &str) -> Result<usize> {
        if user_id.is_empty() || user_id.contains(['\n', '\r']) {
            return Err(Error::Format("user id must be non-empty and single-line".into()));
        }
        self.ids.push(user_id.to_owned());
        Ok(self.ids.len() - 1)
    }

    pub fn lookup(&self, global: usize) -> Result<&str> {
        self.ids.get(global).map(String::as_str).ok_or(Error::NotFound(global))
    }

    /// Occupancy over `0..len` for the registry as seen by the client.
    pub fn occupancy(&self, len: usize) -> Occupancy {
        Occupancy::prefix(self.ids.len(), len)
    }

    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut text = format!("{IDENTITY_HEADER}\n");
        for (i, id) in self.ids.iter().enumerate() {
            writeln!(text, "{i},{id}").unwrap();
        }
        fs::write(dir.join(IDENTITY_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(IDENTITY_FILE);
        if !path.exists() {
            return Ok(Self::new());
        }
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines();
        if lines.next() != Some(IDENTITY_HEADER) {
            return Err(Error::Format(format!("{}: missing or unsupported header", path.display())));
        }
        let mut map = Self::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let (idx, id) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad identity line {line:?}")))?;
            if idx.parse::<usize>().ok() != Some(map.len()) {
                return Err(Error::Format(format!("identity index {idx:?} out of sequence")));
            }
            map.push(id)?;
        }
        Ok(map)
    }
}

/// Single-server registry: every shard plus the identity map.
#[derive(Debug, Clone)]
pub struct Registry<C> {
    pub shards: ShardStore<C>,
    pub identities: IdentityMap,
}

impl<C: HeCiphertext> Registry<C> {
    pub fn new(capacity: usize) -> Self {
        Self { shards: ShardStore::new(capacity), identities: IdentityMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.shards.capacity()
    }

    /// Allocates the next index, merges `c_u` and records `user_id`.
    pub fn enroll<E: Evaluator<Ciphertext = C>>(&mut self, eval: &E, c_u: &C, user_id: &str) -> Result<usize> {
        let global = self.identities.next_index();
        self.shards.register(eval, c_u, global)?;
        self.identities.push(user_id)
    }

    pub fn lookup_identity(&self, global: usize) -> Result<&str> {
        self.identities.lookup(global)
    }

    pub fn shard_count(&self) -> usize {
        shard_count(self.identities.len(), self.capacity())
    }

    pub fn persist(&self, dir: &Path) -> Result<()> {
        self.shards.persist(dir)?;
        self.identities.persist(dir)
    }

    pub fn load<E: Evaluator<Ciphertext = C>>(eval: &E, dir: &Path) -> Result<Self> {
        let shards = ShardStore::load(eval, dir, 0..usize::MAX)?;
        let identities = IdentityMap::load(dir)?;
        let reg = Self { shards, identities };
        reg.check_consistent()?;
        Ok(reg)
    }

    /// An index has an identity iff its occupancy bit is set.
    pub fn check_consistent(&self) -> Result<()> {
        let cap = self.capacity();
        let n = self.identities.len();
        let mut seen = 0;
        for shard in self.shards.snapshot() {
            for local in shard.occupancy.iter_set() {
                let g = global_index(shard.shard_index, local, cap);
                if g >= n {
                    return Err(Error::Format(format!("occupied index {g} has no identity")));
                }
                seen += 1;
            }
        }
        if seen != n {
            return Err(Error::Format(format!("{n} identities but {seen} occupied blocks")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{registration_slots, FeatureVector16};
    use crate::he::clear::{ClearEncryptor, ClearEvaluator};
    use crate::he::Encryptor;
    use crate::params::HeParams;
    use proptest::prelude::*;

    fn setup() -> (ClearEvaluator, ClearEncryptor) {
        let p = HeParams::test_profile();
        (ClearEvaluator::with_full_keys(p.clone()), ClearEncryptor::new(p))
    }

    fn vector(seed: usize) -> FeatureVector16 {
        FeatureVector16(std::array::from_fn(|i| (seed * 16 + i) as f64 * 0.01 + 1.0))
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate(0, 512), (0, 0));
        assert_eq!(allocate(512, 512), (1, 0));
        assert_eq!(allocate(513, 512), (1, 1));
        assert_eq!(shard_count(5000, 512), 10);
        assert_eq!(shard_count(0, 512), 0);
    }

    #[test]
    fn registration_lands_in_blocks() {
        let (eval, enc) = setup();
        let mut reg = Registry::new(128);
        for k in 0..3 {
            let c = enc.encrypt_values(&registration_slots(&vector(k), 2048)).unwrap();
            assert_eq!(reg.enroll(&eval, &c, &format!("user{k}")).unwrap(), k);
        }
        let slots = reg.shards.get(0).unwrap().ciphertext.slots().to_vec();
        assert_eq!(&slots[32..48], &vector(2).0);
        assert_eq!(&slots[0..16], &vector(0).0);
        assert!(slots[48..].iter().all(|&v| v == 0.0));
        assert_eq!(reg.lookup_identity(1).unwrap(), "user1");
        assert!(matches!(reg.lookup_identity(3), Err(Error::NotFound(3))));

        let c = enc.encrypt_values(&registration_slots(&vector(9), 2048)).unwrap();
        assert!(matches!(reg.shards.register(&eval, &c, 1), Err(Error::Conflict(1))));
        assert_eq!(&reg.shards.get(0).unwrap().ciphertext.slots()[16..32], &vector(1).0);
    }

    #[test]
    fn overflow_creates_next_shard() {
        let (eval, enc) = setup();
        let mut reg = Registry::new(128);
        let c = enc.encrypt_values(&registration_slots(&vector(0), 2048)).unwrap();
        for k in 0..130 {
            reg.enroll(&eval, &c, &format!("u{k}")).unwrap();
        }
        assert_eq!(reg.shard_count(), 2);
        assert_eq!(reg.shards.get(1).unwrap().occupancy.count(), 2);
        assert!(reg.shards.get(1).unwrap().occupancy.get(1));
        reg.check_consistent().unwrap();
    }

    #[test]
    fn persistence_roundtrip() {
        let (eval, enc) = setup();
        let dir = tempfile::tempdir().unwrap();
        let empty: Registry<crate::he::clear::ClearCiphertext> = Registry::new(128);
        empty.persist(dir.path()).unwrap();
        let back = Registry::load(&eval, dir.path()).unwrap();
        assert_eq!(back.identities.len(), 0);
        assert!(back.shards.is_empty());

        let mut reg = Registry::new(128);
        for k in 0..300 {
            let c = enc.encrypt_values(&registration_slots(&vector(k), 2048)).unwrap();
            reg.enroll(&eval, &c, &format!("id-{k}")).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        reg.persist(dir.path()).unwrap();
        let back = Registry::load(&eval, dir.path()).unwrap();
        assert_eq!(back.identities, reg.identities);
        for (a, b) in reg.shards.snapshot().iter().zip(back.shards.snapshot()) {
            assert_eq!(a.ciphertext.to_bytes(), b.ciphertext.to_bytes());
            assert_eq!(a.occupancy, b.occupancy);
        }

        let path = dir.path().join("shard-00001.ct");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(Registry::load(&eval, dir.path()).is_err());
    }

    #[test]
    fn occupancy_hex_roundtrip() {
        let mut o = Occupancy::new(12);
        o.set(0);
        o.set(9);
        assert_eq!(o.to_hex(), "0102");
        assert_eq!(Occupancy::from_hex("0102", 12).unwrap(), o);
        assert!(Occupancy::from_hex("01f2", 12).is_err());
        assert!(Occupancy::from_hex("01", 12).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn registration_order_is_irrelevant(perm in Just((0..20usize).collect::<Vec<_>>()).prop_shuffle()) {
            let (eval, enc) = setup();
            let mut a = ShardStore::new(128);
            let mut b = ShardStore::new(128);
            for k in 0..20 {
                let c = enc.encrypt_values(&registration_slots(&vector(k), 2048)).unwrap();
                a.register(&eval, &c, k).unwrap();
            }
            for &k in &perm {
                let c = enc.encrypt_values(&registration_slots(&vector(k), 2048)).unwrap();
                b.register(&eval, &c, k).unwrap();
            }
            prop_assert_eq!(a.get(0).unwrap().ciphertext.slots(), b.get(0).unwrap().ciphertext.slots());
        }
    }
}
