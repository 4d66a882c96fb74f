//! Client side: FC-16 in the clear, slot packing, and the final decision.

use crate::error::{Error, Result};
use crate::he::{Decryptor, Encryptor};
use crate::params::BLOCK;
use crate::registry::{Occupancy, RegistryShard};

/// Affine map `x -> x A + b` with `A` of shape n x 16.
#[derive(Debug, Clone, PartialEq)]
pub struct Fc16Params {
    /// Row-major n x 16.
    a: Vec<f64>,
    b: [f64; BLOCK],
    n: usize,
}

impl Fc16Params {
    pub fn new(a: Vec<f64>, n: usize, b: [f64; BLOCK]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Shape("FC-16 input length must be at least 1".into()));
        }
        if a.len() != n * BLOCK {
            return Err(Error::Shape(format!("A has {} entries, expected {n} x {BLOCK}", a.len())));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::Shape("FC-16 parameters must be finite".into()));
        }
        Ok(Self { a, b, n })
    }

    /// Identity A with zero bias: the input already is the feature vector.
    pub fn identity() -> Self {
        Self::identity_with_bias([0.0; BLOCK])
    }

    pub(crate) fn identity_with_bias(b: [f64; BLOCK]) -> Self {
        let mut a = vec![0.0; BLOCK * BLOCK];
        for i in 0..BLOCK {
            a[i * BLOCK + i] = 1.0;
        }
        Self { a, b, n: BLOCK }
    }

    pub fn input_len(&self) -> usize {
        self.n
    }

    pub fn bias(&self) -> &[f64; BLOCK] {
        &self.b
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }
}

/// FC-16 output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector16(pub [f64; BLOCK]);

impl FeatureVector16 {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.len() != BLOCK {
            return Err(Error::Shape(format!("feature vector has {} entries, expected {BLOCK}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("feature vector must be finite".into()));
        }
        Ok(Self(values.try_into().unwrap()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn finalize_features(x: &[f64], fc16: &Fc16Params) -> Result<FeatureVector16> {
    if x.len() != fc16.n {
        return Err(Error::Shape(format!("input has {} entries, FC-16 expects {}", x.len(), fc16.n)));
    }
    let mut u = fc16.b;
    for (xi, row) in x.iter().zip(fc16.a.chunks_exact(BLOCK)) {
        for (acc, &aij) in u.iter_mut().zip(row) {
            *acc += xi * aij;
        }
    }
    FeatureVector16::new(&u)
}

/// `u` in slots 0..16, zeros elsewhere.
pub fn registration_slots(u: &FeatureVector16, slot_count: usize) -> Vec<f64> {
    let mut v = vec![0.0; slot_count];
    v[..BLOCK].copy_from_slice(&u.0);
    v
}

/// `u` repeated in every 16-slot block.
pub fn query_slots(u: &FeatureVector16, slot_count: usize) -> Vec<f64> {
    (0..slot_count).map(|i| u.0[i % BLOCK]).collect()
}

pub fn pack_registration<E: Encryptor>(enc: &E, u: &FeatureVector16) -> Result<E::Ciphertext> {
    Ok(enc.encrypt_values(&registration_slots(u, enc.params().slot_count()))?)
}

pub fn pack_query<E: Encryptor>(enc: &E, u: &FeatureVector16) -> Result<E::Ciphertext> {
    Ok(enc.encrypt_values(&query_slots(u, enc.params().slot_count()))?)
}

/// Encrypts a whole shard at once for offline bulk enrollment: user `j` of
/// `users` lands in block `j`, exactly where one-by-one registration puts it.
pub fn pack_shard<E: Encryptor>(enc: &E, shard_index: usize, users: &[FeatureVector16]) -> Result<RegistryShard<E::Ciphertext>> {
    let cap = enc.params().registry_capacity();
    if users.len() > cap {
        return Err(Error::Bounds { index: users.len(), limit: cap });
    }
    let mut slots = vec![0.0; enc.params().slot_count()];
    for (j, u) in users.iter().enumerate() {
        slots[BLOCK * j..BLOCK * (j + 1)].copy_from_slice(&u.0);
    }
    Ok(RegistryShard {
        shard_index,
        ciphertext: enc.encrypt_values(&slots)?,
        occupancy: Occupancy::prefix(users.len(), cap),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionParams {
    pub fc1_bias: f64,
    pub threshold: f64,
}

impl DecisionParams {
    pub fn new(fc1_bias: f64, threshold: f64) -> Result<Self> {
        if !fc1_bias.is_finite() {
            return Err(Error::Config("fc1_bias must be finite".into()));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config(format!("threshold {threshold} must lie in (0, 1)")));
        }
        Ok(Self { fc1_bias, threshold })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Match { global_index: usize, probability: f64 },
    NoMatch,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Compressed slot -> global index within one output group:
/// `capacity * (slot mod 16) + slot / 16`.
pub fn recover_index(slot: usize, capacity: usize) -> Result<usize> {
    let slot_count = capacity * BLOCK;
    if slot >= slot_count {
        return Err(Error::Bounds { index: slot, limit: slot_count });
    }
    Ok(capacity * (slot % BLOCK) + slot / BLOCK)
}

/// Highest-scoring valid global index across decrypted output groups. Ties go
/// to the lowest global index. Returns `(global_index, score)`.
pub fn best_match(groups: &[Vec<f64>], occupancy: &Occupancy, capacity: usize) -> Option<(usize, f64)> {
    let per_group = capacity * BLOCK;
    let mut best: Option<(usize, f64)> = None;
    for (g, slots) in groups.iter().enumerate() {
        for (slot, &score) in slots.iter().enumerate().take(per_group) {
            let global = g * per_group + capacity * (slot % BLOCK) + slot / BLOCK;
            if !occupancy.get(global) {
                continue;
            }
            best = match best {
                Some((bi, bs)) if bs > score || (bs == score && bi < global) => Some((bi, bs)),
                _ => Some((global, score)),
            };
        }
    }
    best
}

/// Decrypts compressed results (ordered by output group), adds the FC-1 bias,
/// applies the sigmoid and thresholds the best valid slot.
pub fn decide<D: Decryptor>(
    dec: &D,
    compressed: &[D::Ciphertext],
    occupancy: &Occupancy,
    dp: &DecisionParams,
) -> Result<Decision> {
    let capacity = dec.params().registry_capacity();
    let groups = compressed
        .iter()
        .map(|c| {
            let mut v = dec.decrypt(c)?;
            for x in v.iter_mut() {
                *x += dp.fc1_bias;
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(match best_match(&groups, occupancy, capacity) {
        Some((global_index, z)) => {
            let probability = sigmoid(z);
            if probability >= dp.threshold {
                Decision::Match { global_index, probability }
            } else {
                Decision::NoMatch
            }
        }
        None => Decision::NoMatch,
    })
}

/// One line of a feature file: an optional label and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub label: Option<String>,
    pub values: Vec<f64>,
}

/// Text feature file. Lines starting with `#` are header comments; each other
/// non-empty line is comma-separated values, optionally led by a label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureFile {
    pub header: Vec<String>,
    pub records: Vec<FeatureRecord>,
}

impl FeatureFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(h) = line.strip_prefix('#') {
                file.header.push(h.trim().to_owned());
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',').map(str::trim).peekable();
            let label = match fields.peek() {
                Some(f) if f.parse::<f64>().is_err() => fields.next().map(str::to_owned),
                _ => None,
            };
            let values = fields
                .map(|f| f.parse::<f64>().map_err(|_| Error::Format(format!("line {}: bad number {f:?}", n + 1))))
                .collect::<Result<Vec<_>>>()?;
            if values.is_empty() {
                return Err(Error::Format(format!("line {}: no values", n + 1)));
            }
            file.records.push(FeatureRecord { label, values });
        }
        Ok(file)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for h in &self.header {
            out.push_str(&format!("# {h}\n"));
        }
        for r in &self.records {
            if let Some(l) = &r.label {
                out.push_str(l);
                out.push(',');
            }
            let vals: Vec<String> = r.values.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&vals.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    /// The single record of a one-vector file.
    pub fn single(&self) -> Result<&[f64]> {
        match self.records.as_slice() {
            [r] => Ok(&r.values),
            rs => Err(Error::Format(format!("expected one feature vector, found {}", rs.len()))),
        }
    }
}
