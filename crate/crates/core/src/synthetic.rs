//! Seeded generators for desk-scale experiments: a community-structured
//! group/item corpus with interest drift, and clustered vector sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, Dataset, Interaction};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub groups: usize,
    pub items: usize,
    pub users: usize,
    pub communities: usize,
    pub members_per_group: usize,
    /// Chance that a member slot is filled from another community.
    pub cross_membership: f64,
    pub interactions_per_group: usize,
    /// Chance that an interaction targets the group's current community.
    pub affinity: f64,
    /// Fraction of groups whose community shifts halfway through the log.
    pub drift: f64,
    /// Zipf exponent of item popularity within a community.
    pub popularity_skew: f64,
    pub noise_tags: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            groups: 300,
            items: 500,
            users: 2000,
            communities: 10,
            members_per_group: 4,
            cross_membership: 0.1,
            interactions_per_group: 20,
            affinity: 0.8,
            drift: 0.2,
            popularity_skew: 0.8,
            noise_tags: 20,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.groups == 0 || self.items == 0 || self.communities == 0 {
            return bad("groups, items and communities must be positive");
        }
        if self.users < self.communities || self.items < self.communities {
            return bad("every community needs at least one user and one item");
        }
        for (name, p) in [
            ("cross_membership", self.cross_membership),
            ("affinity", self.affinity),
            ("drift", self.drift),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

pub fn group_id(g: usize) -> String {
    format!("g{g:05}")
}

pub fn item_id(v: usize) -> String {
    format!("v{v:05}")
}

fn user_id(u: usize) -> String {
    format!("u{u:05}")
}

/// Entity `i` of `n` belongs to community `i mod c`.
pub fn community_of(i: usize, communities: usize) -> usize {
    i % communities
}

/// Community-structured corpus. Groups draw members mostly from their own
/// community's user pool, carry their community as a tag, and interact
/// mostly with popular items of their current community. A `drift` share
/// of groups switch to the next community halfway through the log.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut r = rng::seeded(rng::derive(cfg.seed, 0x636f_7270));
    let c = cfg.communities;

    let mut group_members: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for g in 0..cfg.groups {
        let mut members = BTreeSet::new();
        let home = community_of(g, c);
        for _ in 0..cfg.members_per_group {
            let comm = if r.gen_bool(cfg.cross_membership) {
                r.gen_range(0..c)
            } else {
                home
            };
            let pool = (cfg.users - comm).div_ceil(c);
            members.insert(user_id(comm + c * r.gen_range(0..pool)));
        }
        group_members.insert(group_id(g), members);
    }

    let mut tag_rng = rng::seeded(rng::derive(cfg.seed, 0x7461_6773));
    let mut tags_for = |community: usize| {
        let mut t = vec![format!("c{community}")];
        if cfg.noise_tags > 0 {
            t.push(format!("n{}", tag_rng.gen_range(0..cfg.noise_tags)));
        }
        t
    };
    let group_tags = (0..cfg.groups)
        .map(|g| (group_id(g), tags_for(community_of(g, c))))
        .collect();
    let item_tags = (0..cfg.items)
        .map(|v| (item_id(v), tags_for(community_of(v, c))))
        .collect();

    let items_of: Vec<Vec<usize>> = (0..c)
        .map(|k| (0..cfg.items).filter(|&v| community_of(v, c) == k).collect())
        .collect();
    let pickers: Vec<WeightedIndex<f64>> = items_of
        .iter()
        .map(|vs| {
            let w: Vec<f64> = (0..vs.len())
                .map(|rank| 1.0 / ((rank + 1) as f64).powf(cfg.popularity_skew))
                .collect();
            WeightedIndex::new(w).expect("nonempty community")
        })
        .collect();
    let drifting: Vec<bool> = (0..cfg.groups).map(|_| r.gen_bool(cfg.drift)).collect();

    let total = cfg.groups * cfg.interactions_per_group;
    let mut interactions = Vec::with_capacity(total);
    for ts in 0..total {
        let g = r.gen_range(0..cfg.groups);
        let mut comm = community_of(g, c);
        if drifting[g] && ts >= total / 2 {
            comm = (comm + 1) % c;
        }
        let v = if r.gen_bool(cfg.affinity) {
            items_of[comm][pickers[comm].sample(&mut r)]
        } else {
            r.gen_range(0..cfg.items)
        };
        interactions.push(Interaction::new(group_id(g), item_id(v), ts as u64));
    }

    let mut ds = Dataset::from_interactions(interactions);
    ds.group_members.extend(group_members);
    ds.group_tags = group_tags;
    ds.item_tags = item_tags;
    Ok(ds)
}

/// File names used by [`write_corpus`].
pub const INTERACTIONS_FILE: &str = "interactions.csv";
pub const MEMBERSHIPS_FILE: &str = "memberships.csv";
pub const GROUP_TAGS_FILE: &str = "group_tags.csv";
pub const ITEM_TAGS_FILE: &str = "item_tags.csv";

pub fn write_corpus(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        File::create(&p).map(BufWriter::new).map_err(|e| Error::io(&p, e))
    };
    ingest::write_interactions(ds, create(INTERACTIONS_FILE)?)?;
    ingest::write_memberships(ds, create(MEMBERSHIPS_FILE)?)?;
    ingest::write_tags(&ds.group_tags, create(GROUP_TAGS_FILE)?)?;
    ingest::write_tags(&ds.item_tags, create(ITEM_TAGS_FILE)?)?;
    Ok(())
}

/// `n` points in `dim` dimensions around `clusters` Gaussian centres drawn
/// uniformly from `[-1, 1]^dim`; returns the points and their labels.
pub fn clustered_vectors(n: usize, dim: usize, clusters: usize, spread: f64, seed: u64) -> (Matrix, Vec<usize>) {
    assert!(clusters > 0, "need at least one cluster");
    let mut r = rng::seeded(rng::derive(seed, 0x636c_7573));
    let centres = Matrix::from_fn(clusters, dim, |_, _| r.gen_range(-1.0..1.0));
    let noise = Normal::new(0.0, spread).expect("finite spread");
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..clusters)).collect();
    let points = Matrix::from_fn(n, dim, |i, k| centres.get(labels[i], k) + noise.sample(&mut r));
    (points, labels)
}
