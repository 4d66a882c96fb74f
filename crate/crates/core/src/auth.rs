//! Encrypted scoring of registry shards and compression of shard results.

use std::collections::BTreeMap;

use crate::error::{Error, Result, Stage};
use crate::he::{Evaluator, HeCiphertext, HeError};
use crate::model::ServerModelParams;
use crate::params::BLOCK;
use crate::registry::{Occupancy, RegistryShard};

/// Server model with slot encodings cached for the levels a fresh query
/// passes through. Other levels or scales are encoded on demand.
pub struct ServerModel<E: Evaluator> {
    params: ServerModelParams,
    bias_tiled: Vec<f64>,
    fc1_tiled: Vec<f64>,
    bias_top: E::Plaintext,
    fc1_next: Option<E::Plaintext>,
}

impl<E: Evaluator> ServerModel<E> {
    pub fn new(eval: &E, params: ServerModelParams) -> Result<Self> {
        let p = eval.params();
        let slots = p.slot_count();
        let bias_tiled = params.bias_tiled(slots);
        let fc1_tiled = params.fc1_tiled(slots);
        let top = p.max_level();
        let bias_top = eval.encode(&bias_tiled, top, p.default_scale())?;
        let fc1_next = match top {
            0 => None,
            l => Some(eval.encode_multiplier(&fc1_tiled, l - 1)?),
        };
        Ok(Self { params, bias_tiled, fc1_tiled, bias_top, fc1_next })
    }

    pub fn params(&self) -> &ServerModelParams {
        &self.params
    }

    fn bias_for(&self, eval: &E, level: usize, scale: f64) -> Result<E::Plaintext> {
        let p = eval.params();
        if level == p.max_level() && crate::he::scales_match(scale, p.default_scale()) {
            return Ok(self.bias_top.clone());
        }
        Ok(eval.encode(&self.bias_tiled, level, scale)?)
    }

    fn fc1_for(&self, eval: &E, level: usize) -> Result<E::Plaintext> {
        match &self.fc1_next {
            Some(pt) if level + 1 == eval.params().max_level() => Ok(pt.clone()),
            _ => Ok(eval.encode_multiplier(&self.fc1_tiled, level)?),
        }
    }
}

/// Sums each 16-slot window: slot `p` becomes `sum_{t<16} a[p + t]`.
pub fn block_sum<E: Evaluator>(eval: &E, a: &E::Ciphertext) -> Result<E::Ciphertext> {
    let mut acc = a.clone();
    let mut step = BLOCK / 2;
    while step >= 1 {
        let r = eval.rotate(&acc, step as i64)?;
        acc = eval.add(&acc, &r)?;
        step /= 2;
    }
    Ok(acc)
}

/// Squared-distance score of every block of `c_r` against the tiled query.
/// Slot `16j` of the result holds the score of local user `j`.
pub fn score_shard<E: Evaluator>(
    eval: &E,
    model: &ServerModel<E>,
    c_r: &E::Ciphertext,
    c_u: &E::Ciphertext,
) -> Result<E::Ciphertext> {
    let diff = eval.sub(c_r, c_u)?;
    let bias = model.bias_for(eval, diff.level(), diff.scale())?;
    let shifted = eval.add_plain(&diff, &bias)?;
    let squared = eval.mul(&shifted, &shifted).map_err(Error::at(Stage::Square))?;
    if squared.level() == 0 {
        return Err(Error::Depth { stage: Stage::Fc1 });
    }
    let fc1 = model.fc1_for(eval, squared.level())?;
    let weighted = eval.mul_plain(&squared, &fc1).map_err(Error::at(Stage::Fc1))?;
    block_sum(eval, &weighted)
}

/// One-hot vector selecting slot `16j` for each occupied local index `j`.
pub fn compression_mask(occupancy: &Occupancy, slot_count: usize) -> Vec<f64> {
    let mut m = vec![0.0; slot_count];
    for j in occupancy.iter_set() {
        m[BLOCK * j] = 1.0;
    }
    m
}

/// Scores of up to 16 shards sharing one ciphertext. Slot `16j + i` holds the
/// score of local user `j` in shard `16 * group + i`.
#[derive(Debug, Clone)]
pub struct CompressedResult<C> {
    pub group: usize,
    pub ciphertext: C,
}

/// One scored shard awaiting compression.
pub struct Scored<'a, C> {
    pub shard_index: usize,
    pub occupancy: &'a Occupancy,
    pub ciphertext: C,
}

/// Masks each scored shard, rotates it right by `shard_index mod 16` and
/// sums. All entries must belong to the same group of 16 shards.
pub fn compress<E: Evaluator>(eval: &E, scored: &[Scored<'_, E::Ciphertext>]) -> Result<CompressedResult<E::Ciphertext>> {
    let first = scored.first().ok_or_else(|| Error::Shape("nothing to compress".into()))?;
    if scored.len() > BLOCK {
        return Err(Error::Shape(format!("{} shards exceed the {BLOCK} per compressed result", scored.len())));
    }
    let group = first.shard_index / BLOCK;
    let slots = eval.params().slot_count();
    let mut acc: Option<E::Ciphertext> = None;
    let mut offsets = [false; BLOCK];
    for s in scored {
        if s.shard_index / BLOCK != group {
            return Err(Error::Shape(format!("shard {} is not in output group {group}", s.shard_index)));
        }
        let offset = s.shard_index % BLOCK;
        if std::mem::replace(&mut offsets[offset], true) {
            return Err(Error::Shape(format!("shard {} appears twice", s.shard_index)));
        }
        if s.ciphertext.level() == 0 {
            return Err(Error::Depth { stage: Stage::CompressionMask });
        }
        let mask = eval.encode_multiplier(&compression_mask(s.occupancy, slots), s.ciphertext.level())?;
        let masked = eval.mul_plain(&s.ciphertext, &mask).map_err(Error::at(Stage::CompressionMask))?;
        let placed = eval.rotate(&masked, -(offset as i64))?;
        acc = Some(match acc {
            None => placed,
            Some(a) => eval.add(&a, &placed)?,
        });
    }
    Ok(CompressedResult { group, ciphertext: acc.expect("non-empty") })
}

/// Scores `shards` against `c_u` and compresses them per output group, in
/// ascending group order.
pub fn full_auth<E: Evaluator>(
    eval: &E,
    model: &ServerModel<E>,
    c_u: &E::Ciphertext,
    shards: &[&RegistryShard<E::Ciphertext>],
) -> Result<Vec<CompressedResult<E::Ciphertext>>> {
    check_query(eval, c_u)?;
    let mut groups: BTreeMap<usize, Vec<Scored<'_, E::Ciphertext>>> = BTreeMap::new();
    for shard in shards {
        let scored = score_shard(eval, model, &shard.ciphertext, c_u)?;
        groups.entry(shard.shard_index / BLOCK).or_default().push(Scored {
            shard_index: shard.shard_index,
            occupancy: &shard.occupancy,
            ciphertext: scored,
        });
    }
    groups.values().map(|g| compress(eval, g)).collect()
}

/// Baseline without compression: one level-0 score ciphertext per shard.
pub fn uncompressed_auth<E: Evaluator>(
    eval: &E,
    model: &ServerModel<E>,
    c_u: &E::Ciphertext,
    shards: &[&RegistryShard<E::Ciphertext>],
) -> Result<Vec<E::Ciphertext>> {
    check_query(eval, c_u)?;
    shards
        .iter()
        .map(|s| {
            let scored = score_shard(eval, model, &s.ciphertext, c_u)?;
            Ok(eval.drop_to_level(&scored, 0)?)
        })
        .collect()
}

fn check_query<E: Evaluator>(eval: &E, c_u: &E::Ciphertext) -> Result<()> {
    let top = eval.params().max_level();
    if c_u.level() != top {
        return Err(HeError::Alignment(format!("query at level {}, expected fresh level {top}", c_u.level())).into());
    }
    Ok(())
}

/// Number of compressed outputs for `shard_count` shards.
pub fn output_count(shard_count: usize) -> usize {
    shard_count.div_ceil(BLOCK)
}
