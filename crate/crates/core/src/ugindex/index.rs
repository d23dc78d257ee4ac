use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;

use super::{hash_key, mips_to_l2, query_to_l2, score, FastMap, IndexConfig, Quantizer};
use crate::error::{Error, Result};
use crate::linalg::norm;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupEntry {
    pub zorder: u64,
    /// Position in the index's group id table.
    pub group: u32,
    pub feature: Vec<f64>,
}

/// Up to `B` entries; neighbours are linked both ways.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub entries: Vec<GroupEntry>,
    pub prev: Option<u32>,
    pub next: Option<u32>,
}

/// `<key, pos, next>`: `pos` is the global position of the first entry
/// holding `key`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashSlot {
    pub key: u64,
    pub pos: u64,
    pub next: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueryStats {
    pub examined: usize,
    /// Whether the query key was found in the hash table.
    pub exact_key: bool,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UgIndex {
    pub config: IndexConfig,
    pub(super) group_ids: Vec<String>,
    pub(super) feature_dim: usize,
    pub(super) norm_cap: f64,
    pub(super) fastmap: FastMap,
    pub(super) quantizer: Quantizer,
    pub(super) blocks: Vec<Block>,
    pub(super) buckets: Vec<Option<u32>>,
    pub(super) slots: Vec<HashSlot>,
    pub(super) hash_a: u64,
    pub(super) hash_b: u64,
}

/// Sorts `(group, feature)` pairs into keyed blocks and hashes every key.
pub fn build_index(groups: &[(String, Vec<f64>)], config: &IndexConfig) -> Result<UgIndex> {
    config.validate()?;
    let mut seen = HashSet::new();
    for (id, _) in groups {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateGroupId(id.clone()));
        }
    }
    let feature_dim = groups.first().map_or(0, |(_, f)| f.len());
    for (_, f) in groups {
        if f.len() != feature_dim {
            return Err(Error::DimensionMismatch {
                expected: feature_dim,
                got: f.len(),
            });
        }
    }
    let k = config.projection_dim;
    let norm_cap = groups.iter().map(|(_, f)| norm(f)).fold(0.0, f64::max);
    let augmented: Vec<Vec<f64>> = groups
        .iter()
        .map(|(_, f)| mips_to_l2(f, norm_cap))
        .collect::<Result<_>>()?;
    let fastmap = FastMap::fit(&augmented, k, config.seed);
    let projected: Vec<Vec<f64>> = augmented.iter().map(|a| fastmap.project(a, k)).collect();
    let quantizer = Quantizer::calibrate(&projected, k, config.bits_per_dim);

    let mut order: Vec<(u64, usize)> = projected
        .iter()
        .enumerate()
        .map(|(i, p)| (quantizer.key(p), i))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| groups[a.1].0.cmp(&groups[b.1].0)));

    let group_ids: Vec<String> = order.iter().map(|&(_, i)| groups[i].0.clone()).collect();
    let entries: Vec<GroupEntry> = order
        .iter()
        .enumerate()
        .map(|(slot, &(key, i))| GroupEntry {
            zorder: key,
            group: slot as u32,
            feature: groups[i].1.clone(),
        })
        .collect();
    let blocks = link_blocks(entries, config.block_size);

    let (hash_a, hash_b) = config.hash_coeffs();
    let mut index = UgIndex {
        config: config.clone(),
        group_ids,
        feature_dim,
        norm_cap,
        fastmap,
        quantizer,
        blocks,
        buckets: vec![None; config.buckets_for(groups.len())],
        slots: Vec::new(),
        hash_a,
        hash_b,
    };
    let mut last = None;
    let keys: Vec<u64> = order.iter().map(|&(key, _)| key).collect();
    for (pos, key) in keys.into_iter().enumerate() {
        if last != Some(key) {
            index.insert_slot(key, pos as u64);
            last = Some(key);
        }
    }
    Ok(index)
}

fn link_blocks(entries: Vec<GroupEntry>, block_size: usize) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::with_capacity(entries.len().div_ceil(block_size));
    let mut it = entries.into_iter().peekable();
    while it.peek().is_some() {
        let chunk: Vec<GroupEntry> = it.by_ref().take(block_size).collect();
        let id = blocks.len() as u32;
        if let Some(prev) = blocks.last_mut() {
            prev.next = Some(id);
        }
        blocks.push(Block {
            entries: chunk,
            prev: id.checked_sub(1),
            next: None,
        });
    }
    blocks
}

impl UgIndex {
    fn insert_slot(&mut self, key: u64, pos: u64) {
        let b = hash_key(key, self.hash_a, self.hash_b, self.buckets.len());
        self.slots.push(HashSlot {
            key,
            pos,
            next: self.buckets[b],
        });
        self.buckets[b] = Some(self.slots.len() as u32 - 1);
    }

    pub fn len(&self) -> usize {
        self.group_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_ids.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn slots(&self) -> &[HashSlot] {
        &self.slots
    }

    pub fn bucket_heads(&self) -> &[Option<u32>] {
        &self.buckets
    }

    pub fn group_id(&self, entry: &GroupEntry) -> &str {
        &self.group_ids[entry.group as usize]
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hash_coeffs(&self) -> (u64, u64) {
        (self.hash_a, self.hash_b)
    }

    /// Entry at a global position; blocks are full except the last.
    pub fn entry(&self, pos: usize) -> &GroupEntry {
        let b = self.config.block_size;
        &self.blocks[pos / b].entries[pos % b]
    }

    /// Position of `key` through the hash chain.
    pub fn lookup(&self, key: u64) -> Option<usize> {
        let b = hash_key(key, self.hash_a, self.hash_b, self.buckets.len());
        let mut cur = self.buckets[b];
        while let Some(s) = cur {
            let slot = &self.slots[s as usize];
            if slot.key == key {
                return Some(slot.pos as usize);
            }
            cur = slot.next;
        }
        None
    }

    /// Exact position when the key is stored, else the first entry with a
    /// larger key (the last entry when none is larger), found by binary
    /// search over block boundaries.
    pub fn locate(&self, key: u64) -> (usize, bool) {
        if let Some(pos) = self.lookup(key) {
            return (pos, true);
        }
        let blk = self
            .blocks
            .partition_point(|b| b.entries[0].zorder <= key)
            .saturating_sub(1);
        let within = self.blocks[blk].entries.partition_point(|e| e.zorder < key);
        let pos = (blk * self.config.block_size + within).min(self.len() - 1);
        (pos, false)
    }

    /// Z-order key of a query feature. The query is rescaled to the norm
    /// cap first: inner-product order is unchanged and the augmented query
    /// sits on the same sphere as the stored points.
    pub fn query_key(&self, query: &[f64]) -> u64 {
        let k = self.config.projection_dim;
        let n = norm(query);
        let scaled: Vec<f64> = if n > 0.0 {
            query.iter().map(|x| x * self.norm_cap / n).collect()
        } else {
            query.to_vec()
        };
        let p = self.fastmap.project(&query_to_l2(&scaled), k);
        self.quantizer.key(&p)
    }

    pub fn query_knn(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        self.query_with_stats(query, k).map(|(r, _)| r)
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: query.len(),
            });
        }
        Ok(())
    }

    pub fn query_with_stats(&self, query: &[f64], k: usize) -> Result<(Vec<(String, f64)>, QueryStats)> {
        self.check_query(query)?;
        let (start, exact_key) = self.locate(self.query_key(query));
        Ok(self.scan_from(query, k, start, exact_key))
    }

    /// Answers every query; queries sharing a key share one hash lookup.
    /// Results come back in input order.
    pub fn query_batch(&self, queries: &[Vec<f64>], k: usize) -> Result<Vec<Vec<(String, f64)>>> {
        for q in queries {
            self.check_query(q)?;
        }
        let mut by_key: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, q) in queries.iter().enumerate() {
            by_key.entry(self.query_key(q)).or_default().push(i);
        }
        let clusters: Vec<(u64, Vec<usize>)> = by_key.into_iter().collect();
        let answered: Vec<Vec<(usize, Vec<(String, f64)>)>> = clusters
            .par_iter()
            .map(|(key, members)| {
                let (start, exact) = self.locate(*key);
                members
                    .iter()
                    .map(|&i| (i, self.scan_from(&queries[i], k, start, exact).0))
                    .collect()
            })
            .collect();
        let mut out = vec![Vec::new(); queries.len()];
        for (i, res) in answered.into_iter().flatten() {
            out[i] = res;
        }
        Ok(out)
    }

    /// Scores whole blocks outward from the block holding `start`,
    /// alternating next and previous links, until the scan budget is
    /// reached; returns the best `k` by relevance, ties by group id.
    fn scan_from(&self, query: &[f64], k: usize, start: usize, exact_key: bool) -> (Vec<(String, f64)>, QueryStats) {
        let budget = self.config.budget_for(self.feature_dim, k);
        let home = start / self.config.block_size;
        let mut scored: Vec<(f64, u32)> = Vec::with_capacity(budget + self.config.block_size);
        let visit = |b: usize, scored: &mut Vec<(f64, u32)>| {
            for e in &self.blocks[b].entries {
                scored.push((score(query, &e.feature), e.group));
            }
        };
        visit(home, &mut scored);
        let (mut right, mut left) = (self.blocks[home].next, self.blocks[home].prev);
        let mut take_right = true;
        while scored.len() < budget && (left.is_some() || right.is_some()) {
            let use_right = take_right;
            take_right = !take_right;
            let cur = if use_right { right } else { left };
            let Some(b) = cur else { continue };
            let b = b as usize;
            visit(b, &mut scored);
            if use_right {
                right = self.blocks[b].next;
            } else {
                left = self.blocks[b].prev;
            }
        }
        let stats = QueryStats {
            examined: scored.len(),
            exact_key,
            start,
        };
        (self.rank(scored, k), stats)
    }

    fn rank(&self, mut scored: Vec<(f64, u32)>, k: usize) -> Vec<(String, f64)> {
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| self.group_ids[a.1 as usize].cmp(&self.group_ids[b.1 as usize]))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(s, g)| (self.group_ids[g as usize].clone(), s))
            .collect()
    }
}

/// Exact top-`k` by inner product over every feature, ties by group id.
pub fn brute_force_topk(groups: &[(String, Vec<f64>)], query: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut scored: Vec<(f64, &str)> = groups.iter().map(|(id, f)| (score(query, f), id.as_str())).collect();
    let order = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    scored.into_iter().map(|(s, id)| (id.to_owned(), s)).collect()
}
