//! Interaction logs, memberships, tags, the group relationship graph and
//! chronological snapshot splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub group_id: String,
    pub item_id: String,
    pub timestamp: u64,
    pub weight: f64,
}

impl Interaction {
    pub fn new(group_id: impl Into<String>, item_id: impl Into<String>, timestamp: u64) -> Self {
        Interaction {
            group_id: group_id.into(),
            item_id: item_id.into(),
            timestamp,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Sorted nondecreasing by timestamp.
    pub interactions: Vec<Interaction>,
    pub group_members: BTreeMap<String, BTreeSet<String>>,
    pub item_tags: BTreeMap<String, Vec<String>>,
    pub group_tags: BTreeMap<String, Vec<String>>,
    /// Whether the source log carried an explicit weight column.
    pub has_weight_column: bool,
}

impl Dataset {
    /// Builds a dataset from raw parts, sorting interactions and registering
    /// every interacting group in the membership map.
    pub fn from_interactions(mut interactions: Vec<Interaction>) -> Self {
        interactions.sort_by_key(|i| i.timestamp);
        let mut group_members = BTreeMap::new();
        for it in &interactions {
            group_members
                .entry(it.group_id.clone())
                .or_insert_with(BTreeSet::new);
        }
        Dataset {
            interactions,
            group_members,
            ..Default::default()
        }
    }

    pub fn group_ids(&self) -> Vec<String> {
        self.group_members.keys().cloned().collect()
    }

    /// Items seen in interactions or in the item tag table, sorted.
    pub fn item_ids(&self) -> Vec<String> {
        let mut items: BTreeSet<&str> = self.item_tags.keys().map(String::as_str).collect();
        items.extend(self.interactions.iter().map(|i| i.item_id.as_str()));
        items.into_iter().map(str::to_owned).collect()
    }

    pub fn load_memberships(&mut self, path: &Path) -> Result<()> {
        for (line, row) in read_rows(path, &["group_id", "user_id"], 0)? {
            let [g, u] = [&row[0], &row[1]];
            if g.is_empty() || u.is_empty() {
                return Err(Error::MalformedRow(line));
            }
            self.group_members
                .entry(g.clone())
                .or_default()
                .insert(u.clone());
        }
        Ok(())
    }

    pub fn load_group_tags(&mut self, path: &Path) -> Result<()> {
        self.group_tags = load_tags(path)?;
        for g in self.group_tags.keys() {
            self.group_members.entry(g.clone()).or_default();
        }
        Ok(())
    }

    pub fn load_item_tags(&mut self, path: &Path) -> Result<()> {
        self.item_tags = load_tags(path)?;
        Ok(())
    }

    pub fn stats(&self) -> DatasetStats {
        let users: BTreeSet<&String> = self.group_members.values().flatten().collect();
        let mut items_of_group: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for it in &self.interactions {
            items_of_group
                .entry(&it.group_id)
                .or_default()
                .insert(&it.item_id);
        }
        let groups = self.group_members.len();
        let avg_items_per_group = if groups == 0 {
            0.0
        } else {
            items_of_group.values().map(|s| s.len()).sum::<usize>() as f64 / groups as f64
        };
        let mut items_of_user: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (g, members) in &self.group_members {
            if let Some(items) = items_of_group.get(g.as_str()) {
                for u in members {
                    items_of_user.entry(u).or_default().extend(items.iter());
                }
            }
        }
        let avg_items_per_user = if users.is_empty() {
            0.0
        } else {
            items_of_user.values().map(|s| s.len()).sum::<usize>() as f64 / users.len() as f64
        };
        DatasetStats {
            users: users.len(),
            items: self.item_ids().len(),
            groups,
            interactions: self.interactions.len(),
            avg_items_per_group,
            avg_items_per_user,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub groups: usize,
    pub interactions: usize,
    pub avg_items_per_group: f64,
    pub avg_items_per_user: f64,
}

/// Supported interaction log encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
}

pub fn load_interactions(path: &Path, format: LogFormat) -> Result<Dataset> {
    let LogFormat::Csv = format;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_interactions(BufReader::new(file))
}

/// Parses an interaction log with header `group_id,item_id,timestamp[,weight]`.
pub fn read_interactions<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::EmptyFile),
        Some(h) => h?,
    };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let has_weight = match cols.as_slice() {
        ["group_id", "item_id", "timestamp"] => false,
        ["group_id", "item_id", "timestamp", "weight"] => true,
        _ => return Err(Error::MalformedRow(1)),
    };
    let width = if has_weight { 4 } else { 3 };
    let mut interactions = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != width {
            return Err(Error::MalformedRow(line));
        }
        let group_id = rec[0].to_owned();
        let item_id = rec[1].to_owned();
        if group_id.is_empty() || item_id.is_empty() {
            return Err(Error::MalformedRow(line));
        }
        let timestamp: u64 = rec[2].parse().map_err(|_| Error::MalformedRow(line))?;
        let weight = if has_weight {
            let w: f64 = rec[3].parse().map_err(|_| Error::MalformedRow(line))?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::MalformedRow(line));
            }
            w
        } else {
            1.0
        };
        interactions.push(Interaction {
            group_id,
            item_id,
            timestamp,
            weight,
        });
    }
    if interactions.is_empty() {
        return Err(Error::EmptyFile);
    }
    let mut ds = Dataset::from_interactions(interactions);
    ds.has_weight_column = has_weight;
    Ok(ds)
}

/// Writes the interaction log in the same layout it is read from.
pub fn write_interactions<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    if ds.has_weight_column {
        writeln!(out, "group_id,item_id,timestamp,weight")?;
    } else {
        writeln!(out, "group_id,item_id,timestamp")?;
    }
    for it in &ds.interactions {
        if ds.has_weight_column {
            writeln!(out, "{},{},{},{}", it.group_id, it.item_id, it.timestamp, it.weight)?;
        } else {
            writeln!(out, "{},{},{}", it.group_id, it.item_id, it.timestamp)?;
        }
    }
    Ok(())
}

pub fn write_memberships<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    writeln!(out, "group_id,user_id")?;
    for (g, users) in &ds.group_members {
        for u in users {
            writeln!(out, "{g},{u}")?;
        }
    }
    Ok(())
}

pub fn write_tags<W: Write>(tags: &BTreeMap<String, Vec<String>>, mut out: W) -> Result<()> {
    writeln!(out, "entity_id,tag")?;
    for (id, list) in tags {
        for t in list {
            writeln!(out, "{id},{t}")?;
        }
    }
    Ok(())
}

fn load_tags(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut tags: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (line, row) in read_rows(path, &["entity_id", "tag"], 0)? {
        if row[0].is_empty() {
            return Err(Error::MalformedRow(line));
        }
        tags.entry(row[0].clone()).or_default().push(row[1].clone());
    }
    Ok(tags)
}

fn read_rows(path: &Path, header: &[&str], _min_rows: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let mut records = rdr.records();
    let head = match records.next() {
        None => return Err(Error::EmptyFile),
        Some(h) => h?,
    };
    if head.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(Error::MalformedRow(1));
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::MalformedRow(line));
        }
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

/// An undirected edge between two node indices, `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub u: usize,
    pub v: usize,
}

impl EdgeKey {
    pub fn new(a: usize, b: usize) -> Self {
        debug_assert_ne!(a, b);
        if a < b {
            EdgeKey { u: a, v: b }
        } else {
            EdgeKey { u: b, v: a }
        }
    }

    pub fn other(&self, x: usize) -> usize {
        if x == self.u {
            self.v
        } else {
            self.u
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub key: EdgeKey,
    pub weight: f64,
}

/// Group relationship graph. Nodes are indexed in sorted group-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Greg {
    nodes: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Sorted by key; edge ids are positions in this list.
    edges: Vec<WeightedEdge>,
    adjacency: Vec<Vec<usize>>,
}

impl Greg {
    pub fn from_edges(nodes: Vec<String>, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let n = nodes.len();
        let mut map: BTreeMap<EdgeKey, f64> = BTreeMap::new();
        for (a, b, w) in edges {
            assert!(a < n && b < n, "edge endpoint out of range");
            if a == b || w <= 0.0 {
                continue;
            }
            map.insert(EdgeKey::new(a, b), w);
        }
        let edges: Vec<WeightedEdge> = map
            .into_iter()
            .map(|(key, weight)| WeightedEdge { key, weight })
            .collect();
        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            adjacency[e.key.u].push(e.key.v);
            adjacency[e.key.v].push(e.key.u);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        let index = nodes.iter().cloned().enumerate().map(|(i, g)| (g, i)).collect();
        Greg {
            nodes,
            index,
            edges,
            adjacency,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_id(&self, idx: usize) -> &str {
        &self.nodes[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        if self.index.len() != self.nodes.len() {
            return self.nodes.iter().position(|n| n == id);
        }
        self.index.get(id).copied()
    }

    pub fn edges(&self) -> &[WeightedEdge] {
        &self.edges
    }

    pub fn neighbors(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }

    pub fn degree(&self, idx: usize) -> usize {
        self.adjacency[idx].len()
    }

    /// `1/√(|N_u||N_v|)`, zero when either endpoint is isolated.
    pub fn laplacian_norm(&self, u: usize, v: usize) -> f64 {
        let du = self.degree(u);
        let dv = self.degree(v);
        if du == 0 || dv == 0 {
            0.0
        } else {
            1.0 / ((du * dv) as f64).sqrt()
        }
    }

    pub fn rebuild_index(&mut self) {
        self.index = self.nodes.iter().cloned().enumerate().map(|(i, g)| (g, i)).collect();
    }
}

/// Connects two groups when they share at least `min_shared_users` members;
/// the edge weight is the shared-member count.
pub fn build_greg(dataset: &Dataset, min_shared_users: usize) -> Greg {
    let min_shared = min_shared_users.max(1);
    let nodes: Vec<String> = dataset.group_members.keys().cloned().collect();
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (gi, members) in dataset.group_members.values().enumerate() {
        for u in members {
            by_user.entry(u).or_default().push(gi);
        }
    }
    let mut shared: HashMap<EdgeKey, usize> = HashMap::new();
    for groups in by_user.values() {
        for (a, &ga) in groups.iter().enumerate() {
            for &gb in &groups[a + 1..] {
                *shared.entry(EdgeKey::new(ga, gb)).or_insert(0) += 1;
            }
        }
    }
    let edges = shared
        .into_iter()
        .filter(|&(_, c)| c >= min_shared)
        .map(|(k, c)| (k.u, k.v, c as f64));
    Greg::from_edges(nodes, edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSplit {
    pub snapshots: Vec<Vec<Interaction>>,
    pub train_fraction: f64,
    pub test_set: Vec<Interaction>,
}

impl TemporalSplit {
    pub fn num_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn training(&self) -> impl Iterator<Item = &Interaction> {
        self.snapshots.iter().flatten()
    }

    /// Union of snapshots `0..=t`.
    pub fn cumulative(&self, t: usize) -> Vec<Interaction> {
        self.snapshots[..=t].iter().flatten().cloned().collect()
    }
}

/// Chronological split: the earliest `⌊train_fraction·n⌋` events train, the
/// rest test. Training is cut into `num_snapshots` contiguous equal-count
/// snapshots; the last one absorbs the remainder.
pub fn split_temporal(dataset: &Dataset, train_fraction: f64, num_snapshots: usize) -> Result<TemporalSplit> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must be in (0, 1], got {train_fraction}"
        )));
    }
    if num_snapshots == 0 {
        return Err(Error::InvalidConfig("num_snapshots must be ≥ 1".into()));
    }
    let n = dataset.interactions.len();
    let n_train = ((train_fraction * n as f64) + 1e-9).floor() as usize;
    let n_train = n_train.min(n);
    if n_train < num_snapshots {
        return Err(Error::InsufficientData {
            needed: num_snapshots,
            have: n_train,
        });
    }
    let per = n_train / num_snapshots;
    let mut snapshots = Vec::with_capacity(num_snapshots);
    for t in 0..num_snapshots {
        let start = t * per;
        let end = if t + 1 == num_snapshots { n_train } else { start + per };
        snapshots.push(dataset.interactions[start..end].to_vec());
    }
    Ok(TemporalSplit {
        snapshots,
        train_fraction,
        test_set: dataset.interactions[n_train..].to_vec(),
    })
}

/// Mean of per-tag hashed unit vectors; the zero vector for no tags.
pub fn featurize_tags(tags: &[String], dim: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if tags.is_empty() || dim == 0 {
        return out;
    }
    for tag in tags {
        let v = tag_vector(tag, dim, seed);
        for (o, x) in out.iter_mut().zip(&v) {
            *o += x;
        }
    }
    let n = tags.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

fn tag_vector(tag: &str, dim: usize, seed: u64) -> Vec<f64> {
    let digest = Sha256::digest(tag.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    let mut r = rng::seeded(rng::derive(seed, u64::from_le_bytes(word)));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let n = crate::linalg::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        read_interactions(s.as_bytes())
    }

    #[test]
    fn loads_sorted_rows() {
        let ds = parse("group_id,item_id,timestamp\ng1,i1,1\ng2,i2,2\ng1,i3,3\n").unwrap();
        assert_eq!(ds.interactions.len(), 3);
        let ts: Vec<u64> = ds.interactions.iter().map(|i| i.timestamp).collect();
        assert_eq!(ts, vec![1, 2, 3]);
        assert!(ds.group_members.contains_key("g1"));
    }

    #[test]
    fn sorts_and_keeps_duplicates() {
        let ds = parse("group_id,item_id,timestamp,weight\ng1,i1,9,1\ng1,i1,9,1\ng2,i2,3,0.5\n").unwrap();
        assert_eq!(ds.interactions.len(), 3);
        assert_eq!(ds.interactions[0].item_id, "i2");
        assert_eq!(ds.interactions[0].weight, 0.5);
    }

    #[test]
    fn rejects_bad_timestamp_with_line_number() {
        let err = parse("group_id,item_id,timestamp\ng1,i1,abc\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow(2)), "{err:?}");
        let err = parse("group_id,item_id,timestamp\ng1,i1,1\ng2,i2\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow(3)), "{err:?}");
        let err = parse("group_id,item_id,timestamp\ng1,i1,-4\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow(2)), "{err:?}");
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse(""), Err(Error::EmptyFile)));
        assert!(matches!(parse("group_id,item_id,timestamp\n"), Err(Error::EmptyFile)));
    }

    fn dataset_with_members(members: &[(&str, &[&str])]) -> Dataset {
        let mut ds = Dataset::default();
        for (g, users) in members {
            ds.group_members
                .insert(g.to_string(), users.iter().map(|u| u.to_string()).collect());
        }
        ds
    }

    #[test]
    fn greg_single_shared_user() {
        let ds = dataset_with_members(&[("a", &["u1", "u2"]), ("b", &["u2", "u3"])]);
        let g = build_greg(&ds, 1);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].weight, 1.0);
    }

    #[test]
    fn greg_disjoint_and_threshold() {
        let ds = dataset_with_members(&[("a", &["u1"]), ("b", &["u2"])]);
        assert_eq!(build_greg(&ds, 1).edge_count(), 0);
        let ds = dataset_with_members(&[("a", &["u1", "u2"]), ("b", &["u1", "u2"]), ("c", &["u2"])]);
        let g = build_greg(&ds, 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].weight, 2.0);
    }

    #[test]
    fn greg_matches_pairwise_intersections() {
        let mut r = rng::seeded(11);
        for _ in 0..20 {
            let mut ds = Dataset::default();
            for g in 0..5 {
                let users: BTreeSet<String> = (0..8)
                    .filter(|_| r.gen_bool(0.35))
                    .map(|u| format!("u{u}"))
                    .collect();
                ds.group_members.insert(format!("g{g}"), users);
            }
            for min_shared in 1..=3 {
                let greg = build_greg(&ds, min_shared);
                let groups: Vec<&BTreeSet<String>> = ds.group_members.values().collect();
                for i in 0..5 {
                    for j in 0..5 {
                        if i == j {
                            continue;
                        }
                        let shared = groups[i].intersection(groups[j]).count();
                        let has = greg.neighbors(i).contains(&j);
                        assert_eq!(has, shared >= min_shared);
                        assert_eq!(greg.neighbors(j).contains(&i), has);
                        if has {
                            let w = greg
                                .edges()
                                .iter()
                                .find(|e| e.key == EdgeKey::new(i, j))
                                .unwrap()
                                .weight;
                            assert_eq!(w, shared as f64);
                        }
                    }
                }
            }
        }
    }

    fn events(n: usize) -> Dataset {
        Dataset::from_interactions(
            (0..n)
                .map(|i| Interaction::new(format!("g{}", i % 3), format!("i{i}"), i as u64))
                .collect(),
        )
    }

    #[test]
    fn split_sizes() {
        let s = split_temporal(&events(10), 0.8, 4).unwrap();
        let sizes: Vec<usize> = s.snapshots.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 2, 2]);
        assert_eq!(s.test_set.len(), 2);

        let s = split_temporal(&events(10), 1.0, 3).unwrap();
        assert!(s.test_set.is_empty());

        let s = split_temporal(&events(103), 0.8, 5).unwrap();
        let sizes: Vec<usize> = s.snapshots.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![16, 16, 16, 16, 18]);
    }

    #[test]
    fn split_rejects_too_few() {
        assert!(matches!(
            split_temporal(&events(3), 1.0, 4),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn tag_features() {
        let empty: Vec<String> = vec![];
        assert_eq!(featurize_tags(&empty, 4, 1), vec![0.0; 4]);
        let one = vec!["pizza".to_string()];
        let two = vec!["pizza".to_string(), "pizza".to_string()];
        let a = featurize_tags(&one, 8, 3);
        assert_eq!(a, featurize_tags(&one, 8, 3));
        let b = featurize_tags(&two, 8, 3);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((crate::linalg::norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, featurize_tags(&one, 8, 4));
    }
}
