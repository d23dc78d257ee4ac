//! Group-aware edge sampling over the group relationship graph.
//!
//! Nodes are clustered with K-Means++, edges are bucketed by the cluster pair
//! of their endpoints, and each time point draws a Poisson edge sample whose
//! per-bucket mass is proportional to the bucket size. From the second time
//! point on, part of the budget is carried over from the previous subgraph:
//! edges whose endpoints both survived and whose groups changed behaviour.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggcn::Topology;
use crate::ingest::{EdgeKey, Greg, Interaction, TemporalSplit};
use crate::linalg::{axpy, dot, sq_dist, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbabilityMode {
    /// Proportional to `‖Σ_l b^l_e‖`; needs layer embeddings.
    Exact,
    /// Proportional to the Laplacian norm only.
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub num_clusters: usize,
    pub overlap_degree: f64,
    /// Expected edges per time point; `None` means `⌈N_e/2⌉`.
    pub samples_per_time: Option<usize>,
    pub mode: ProbabilityMode,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_clusters: 10,
            overlap_degree: 0.5,
            samples_per_time: None,
            mode: ProbabilityMode::Approximate,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, greg: &Greg) -> Result<()> {
        if self.num_clusters == 0 {
            return Err(Error::InvalidConfig("num_clusters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_degree) {
            return Err(Error::InvalidConfig("overlap_degree must lie in [0, 1]".into()));
        }
        if self.samples_for(greg) > greg.edge_count() {
            return Err(Error::InvalidConfig(format!(
                "samples_per_time {} exceeds the edge count {}",
                self.samples_for(greg),
                greg.edge_count()
            )));
        }
        Ok(())
    }

    pub fn samples_for(&self, greg: &Greg) -> usize {
        self.samples_per_time.unwrap_or_else(|| greg.edge_count().div_ceil(2))
    }
}

/// Cluster assignment per node and the edge ids of every cluster pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSetPartition {
    pub num_clusters: usize,
    pub clusters: Vec<usize>,
    /// Keyed by `(C_i, C_j)` with `C_i ≤ C_j`; values are sorted edge ids.
    pub edge_sets: BTreeMap<(usize, usize), Vec<usize>>,
}

impl EdgeSetPartition {
    pub fn from_assignment(greg: &Greg, clusters: Vec<usize>, num_clusters: usize) -> Self {
        let mut edge_sets: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (id, e) in greg.edges().iter().enumerate() {
            let (a, b) = (clusters[e.key.u], clusters[e.key.v]);
            edge_sets.entry((a.min(b), a.max(b))).or_default().push(id);
        }
        EdgeSetPartition {
            num_clusters,
            clusters,
            edge_sets,
        }
    }
}

/// K-Means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iter` rounds have run.
pub fn kmeans_pp(points: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<Vec<usize>> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("cannot form {k} clusters from {n} points")));
    }
    let mut r = rng::seeded(rng::derive(seed, 0x6b6d_6561_6e73));
    let mut centers: Vec<Vec<f64>> = vec![points.row(r.gen_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = r.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            r.gen_range(0..n)
        };
        centers.push(points.row(pick).to_vec());
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &centers[centers.len() - 1]));
        }
    }

    let closest = |x: &[f64], centers: &[Vec<f64>]| -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.iter().enumerate() {
            let d = sq_dist(x, center);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    };
    let mut assign: Vec<usize> = (0..n).map(|i| closest(points.row(i), &centers)).collect();
    for _ in 0..max_iter {
        let dim = points.cols();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            axpy(1.0, points.row(i), &mut sums[c]);
            counts[c] += 1;
        }
        for c in 0..k {
            // an emptied cluster keeps its previous centre
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = (0..n).map(|i| closest(points.row(i), &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(assign)
}

pub const KMEANS_MAX_ITER: usize = 100;

pub fn cluster_nodes(greg: &Greg, features: &Matrix, num_clusters: usize, seed: u64) -> Result<EdgeSetPartition> {
    if features.rows() != greg.node_count() {
        return Err(Error::DimensionMismatch {
            expected: greg.node_count(),
            got: features.rows(),
        });
    }
    let clusters = kmeans_pp(features, num_clusters, seed, KMEANS_MAX_ITER)?;
    Ok(EdgeSetPartition::from_assignment(greg, clusters, num_clusters))
}

/// `b^l_e` for every layer input and the norm of their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScore {
    pub per_layer: Vec<Vec<f64>>,
    pub total: Vec<f64>,
    pub norm: f64,
}

fn checked_norm(greg: &Greg, key: EdgeKey) -> Result<f64> {
    if greg.degree(key.u) == 0 || greg.degree(key.v) == 0 {
        return Err(Error::IsolatedEndpoint(key.u, key.v));
    }
    Ok(greg.laplacian_norm(key.u, key.v))
}

/// `b^l_e = L̂_uv·(x̂^{l−1}_u + x̂^{l−1}_v)` for each entry of `layer_inputs`.
pub fn edge_score(greg: &Greg, key: EdgeKey, layer_inputs: &[Matrix]) -> Result<EdgeScore> {
    let lap = checked_norm(greg, key)?;
    let d = layer_inputs.first().map_or(0, Matrix::cols);
    let mut total = vec![0.0; d];
    let per_layer: Vec<Vec<f64>> = layer_inputs
        .iter()
        .map(|x| {
            let b: Vec<f64> = x.row(key.u).iter().zip(x.row(key.v)).map(|(a, b)| lap * (a + b)).collect();
            axpy(1.0, &b, &mut total);
            b
        })
        .collect();
    let norm = dot(&total, &total).sqrt();
    Ok(EdgeScore { per_layer, total, norm })
}

/// Splits `total` proportionally to `weights` with each share capped at
/// `caps[i]`; mass cut off by a cap is handed to the uncapped entries in
/// proportion to their weights. If every remaining weight is zero the rest
/// is spread evenly over the remaining capacity.
pub fn capped_proportional(weights: &[f64], caps: &[f64], total: f64) -> Vec<f64> {
    let n = weights.len();
    let mut out = vec![0.0; n];
    let mut fixed = vec![false; n];
    let mut remaining = total;
    loop {
        let free_weight: f64 = (0..n).filter(|&i| !fixed[i]).map(|i| weights[i]).sum();
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        if free.is_empty() || remaining <= 0.0 {
            break;
        }
        let share = |i: usize| {
            if free_weight > 0.0 {
                remaining * weights[i] / free_weight
            } else {
                remaining / free.len() as f64
            }
        };
        let over: Vec<usize> = free.iter().copied().filter(|&i| share(i) > caps[i]).collect();
        if over.is_empty() {
            for &i in &free {
                out[i] = share(i);
            }
            break;
        }
        for &i in &over {
            out[i] = caps[i];
            fixed[i] = true;
            remaining -= caps[i];
        }
    }
    out
}

/// Variance-minimising `p_e ∝ ‖Σ_l b^l_e‖` with total mass `n_s`, clamped to
/// at most 1. All-zero scores fall back to uniform `n_s/|E|`.
pub fn optimal_probabilities(scores: &[f64], n_s: f64) -> Vec<f64> {
    let caps = vec![1.0; scores.len()];
    if scores.iter().all(|&s| s == 0.0) {
        return capped_proportional(&vec![1.0; scores.len()], &caps, n_s);
    }
    capped_proportional(scores, &caps, n_s)
}

/// Topology-only `p̂_e ∝ L̂_uv` over the listed edges, with total mass `n_s`.
pub fn approximate_probabilities_for(greg: &Greg, edge_ids: &[usize], n_s: f64) -> Vec<f64> {
    let weights: Vec<f64> = edge_ids
        .iter()
        .map(|&id| {
            let k = greg.edges()[id].key;
            greg.laplacian_norm(k.u, k.v)
        })
        .collect();
    capped_proportional(&weights, &vec![1.0; weights.len()], n_s)
}

/// `p̂_e` over every edge of the graph, indexed by edge id.
pub fn approximate_probabilities(greg: &Greg, n_s: f64) -> Vec<f64> {
    let ids: Vec<usize> = (0..greg.edge_count()).collect();
    approximate_probabilities_for(greg, &ids, n_s)
}

/// Closed-form envelope around the single-draw (`n_s = 1`) probabilities
/// when every layer embedding coordinate lies in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub lower: f64,
    pub upper: f64,
    pub approximate: f64,
    pub optimal: f64,
    /// `p̂_e·(1 − x̂_uv/d)`
    pub approx_gap: f64,
    /// `L̂_uv·(d/Σ L̂x̂ − 1/Σ L̂)`
    pub scale_gap: f64,
}

/// Envelope for every edge, with `x̂_uv = ‖Σ_l (x̂^l_u + x̂^l_v)‖ / 2L`.
pub fn probability_envelopes(greg: &Greg, layer_inputs: &[Matrix]) -> Result<Vec<Envelope>> {
    let layers = layer_inputs.len();
    if layers == 0 {
        return Err(Error::InvalidConfig("need at least one layer embedding".into()));
    }
    let d = layer_inputs[0].cols() as f64;
    let mut laps = Vec::with_capacity(greg.edge_count());
    let mut xs = Vec::with_capacity(greg.edge_count());
    let mut norms = Vec::with_capacity(greg.edge_count());
    for e in greg.edges() {
        let score = edge_score(greg, e.key, layer_inputs)?;
        let lap = checked_norm(greg, e.key)?;
        laps.push(lap);
        norms.push(score.norm);
        xs.push(score.norm / lap / (2.0 * layers as f64));
    }
    let sum_lap: f64 = laps.iter().sum();
    let sum_lap_x: f64 = laps.iter().zip(&xs).map(|(l, x)| l * x).sum();
    let optimal = optimal_probabilities(&norms, 1.0);
    Ok((0..laps.len())
        .map(|i| {
            let approximate = laps[i] / sum_lap;
            Envelope {
                lower: laps[i] * xs[i] / (sum_lap * d),
                upper: laps[i] * d / sum_lap_x,
                approximate,
                optimal: optimal[i],
                approx_gap: approximate * (1.0 - xs[i] / d),
                scale_gap: laps[i] * (d / sum_lap_x - 1.0 / sum_lap),
            }
        })
        .collect())
}

/// Independent Bernoulli draw per edge.
pub fn sample_edges(edge_ids: &[usize], probabilities: &[f64], r: &mut rng::Rng) -> Vec<usize> {
    edge_ids
        .iter()
        .zip(probabilities)
        .filter(|&(_, &p)| p >= 1.0 || (p > 0.0 && r.gen::<f64>() < p))
        .map(|(&id, _)| id)
        .collect()
}

/// Groups whose item set differs between two interaction batches.
pub fn changed_groups(greg: &Greg, previous: &[Interaction], current: &[Interaction]) -> Vec<bool> {
    fn items<'a>(greg: &Greg, batch: &'a [Interaction]) -> Vec<BTreeSet<&'a str>> {
        let mut sets = vec![BTreeSet::new(); greg.node_count()];
        for it in batch {
            if let Some(g) = greg.index_of(&it.group_id) {
                sets[g].insert(it.item_id.as_str());
            }
        }
        sets
    }
    let a = items(greg, previous);
    let b = items(greg, current);
    a.iter().zip(&b).map(|(x, y)| x != y).collect()
}

/// Picks up to `quota` edges from `candidates` that lie inside the previous
/// subgraph's node set and touch a changed group, preferring the largest
/// endpoint degree sum and then the smallest edge key.
pub fn sample_overlap(
    greg: &Greg,
    candidates: &[usize],
    previous_nodes: &HashSet<usize>,
    changed: &[bool],
    quota: usize,
) -> Vec<usize> {
    if quota == 0 {
        return Vec::new();
    }
    let mut pool: Vec<(usize, EdgeKey, usize)> = candidates
        .iter()
        .filter_map(|&id| {
            let k = greg.edges()[id].key;
            let inside = previous_nodes.contains(&k.u) && previous_nodes.contains(&k.v);
            let moved = changed[k.u] || changed[k.v];
            (inside && moved).then(|| (greg.degree(k.u) + greg.degree(k.v), k, id))
        })
        .collect();
    pool.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    pool.truncate(quota);
    let mut out: Vec<usize> = pool.into_iter().map(|(_, _, id)| id).collect();
    out.sort_unstable();
    out
}

/// One time point's sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSubgraph {
    pub t: usize,
    /// Sorted ids of the sampled edges.
    pub edges: Vec<usize>,
    /// Sorted endpoints of the sampled edges.
    pub nodes: Vec<usize>,
    /// Inclusion probability of every graph edge at this time point.
    pub probabilities: Vec<f64>,
    /// Edges carried over from the previous subgraph (probability 1).
    pub overlap: Vec<usize>,
}

impl SampledSubgraph {
    pub fn node_probability(&self, greg: &Greg, v: usize) -> f64 {
        node_probability(greg, &self.probabilities, v)
    }

    /// Aggregation over the sampled edges with the unbiased coefficient
    /// `L̂_uv·p_v/p_uv`; only endpoints of sampled edges take part.
    pub fn topology(&self, greg: &Greg) -> Topology {
        let n = greg.node_count();
        let mut neighbors = vec![Vec::new(); n];
        let mut active = vec![false; n];
        let pv: Vec<f64> = (0..n).map(|v| self.node_probability(greg, v)).collect();
        for &id in &self.edges {
            let k = greg.edges()[id].key;
            let p = self.probabilities[id];
            let lap = greg.laplacian_norm(k.u, k.v);
            neighbors[k.u].push((k.v, lap * pv[k.u] / p));
            neighbors[k.v].push((k.u, lap * pv[k.v] / p));
            active[k.u] = true;
            active[k.v] = true;
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(h, _)| h);
        }
        Topology::from_parts(neighbors, active)
    }

    pub fn write_csv<W: Write>(&self, greg: &Greg, out: &mut W) -> Result<()> {
        for &id in &self.edges {
            let k = greg.edges()[id].key;
            writeln!(
                out,
                "{},{},{},{}",
                self.t,
                greg.node_id(k.u),
                greg.node_id(k.v),
                self.probabilities[id]
            )?;
        }
        Ok(())
    }
}

pub fn write_subgraphs_csv<W: Write>(greg: &Greg, subgraphs: &[SampledSubgraph], mut out: W) -> Result<()> {
    writeln!(out, "t,src_group,dst_group,p_e")?;
    for s in subgraphs {
        s.write_csv(greg, &mut out)?;
    }
    Ok(())
}

/// `p_v = 1 − Π_{e∋v}(1 − p_e)`
pub fn node_probability(greg: &Greg, probabilities: &[f64], v: usize) -> f64 {
    let mut miss = 1.0;
    for &u in greg.neighbors(v) {
        miss *= 1.0 - probabilities[edge_id(greg, v, u)];
    }
    1.0 - miss
}

/// Id of the edge between `a` and `b`; panics if absent.
pub fn edge_id(greg: &Greg, a: usize, b: usize) -> usize {
    let key = EdgeKey::new(a, b);
    greg.edges()
        .binary_search_by(|e| e.key.cmp(&key))
        .expect("edge present in graph")
}

/// `Σ_{u∈N_v} L̂_uv·x̂_u`, the quantity the estimators target.
pub fn exact_aggregate(greg: &Greg, x: &Matrix, v: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.cols()];
    for &u in greg.neighbors(v) {
        axpy(greg.laplacian_norm(u, v), x.row(u), &mut out);
    }
    out
}

/// `θ_v = Σ_{u∈N_v} (L̂_uv/α_uv)·x̂_u·𝟙_{u|v}` with `α_uv = p_uv/p_v`.
pub fn node_estimate(greg: &Greg, x: &Matrix, probabilities: &[f64], sampled: &[bool], v: usize) -> Result<Vec<f64>> {
    let pv = node_probability(greg, probabilities, v);
    let mut out = vec![0.0; x.cols()];
    for &u in greg.neighbors(v) {
        let id = edge_id(greg, u, v);
        if !sampled[id] {
            continue;
        }
        let p = probabilities[id];
        if p <= 0.0 {
            return Err(Error::ZeroProbability(u.min(v), u.max(v)));
        }
        axpy(greg.laplacian_norm(u, v) * pv / p, x.row(u), &mut out);
    }
    Ok(out)
}

/// `θ = Σ_l Σ_e (b^l_e/p_e)·𝟙_e` over sampled edges.
pub fn graph_estimate(greg: &Greg, layer_inputs: &[Matrix], probabilities: &[f64], sampled: &[bool]) -> Result<Vec<f64>> {
    let d = layer_inputs.first().map_or(0, Matrix::cols);
    let mut out = vec![0.0; d];
    for (id, e) in greg.edges().iter().enumerate() {
        if !sampled[id] {
            continue;
        }
        let p = probabilities[id];
        if p <= 0.0 {
            return Err(Error::ZeroProbability(e.key.u, e.key.v));
        }
        let score = edge_score(greg, e.key, layer_inputs)?;
        axpy(1.0 / p, &score.total, &mut out);
    }
    Ok(out)
}

/// Total variance (trace of the covariance) of the graph estimator under
/// Poisson sampling: `Σ_e ‖Σ_l b^l_e‖²/p_e − Σ_e ‖Σ_l b^l_e‖²`.
pub fn estimator_variance(score_norms: &[f64], probabilities: &[f64]) -> f64 {
    score_norms
        .iter()
        .zip(probabilities)
        .map(|(&s, &p)| {
            let s2 = s * s;
            if s2 == 0.0 {
                0.0
            } else if p <= 0.0 {
                f64::INFINITY
            } else {
                s2 / p - s2
            }
        })
        .sum()
}

/// Inputs that drive the sampler beyond the graph and the split.
pub struct GesInputs<'a> {
    /// Per-node clustering features (rows follow graph node order).
    pub features: &'a Matrix,
    /// `x̂^0..x̂^{L−1}`, required in exact mode.
    pub layer_inputs: Option<&'a [Matrix]>,
}

/// Draws one subgraph per snapshot.
pub fn run_ges(split: &TemporalSplit, greg: &Greg, inputs: &GesInputs<'_>, config: &SamplerConfig) -> Result<Vec<SampledSubgraph>> {
    config.validate(greg)?;
    let num_t = config.samples_for(greg);
    let k = config.num_clusters.min(greg.node_count()).max(1);
    let partition = cluster_nodes(greg, inputs.features, k, config.seed)?;
    let weights: Vec<f64> = match config.mode {
        ProbabilityMode::Approximate => greg
            .edges()
            .iter()
            .map(|e| greg.laplacian_norm(e.key.u, e.key.v))
            .collect(),
        ProbabilityMode::Exact => {
            let layers = inputs
                .layer_inputs
                .ok_or_else(|| Error::InvalidConfig("exact probabilities need layer embeddings".into()))?;
            greg.edges()
                .iter()
                .map(|e| edge_score(greg, e.key, layers).map(|s| s.norm))
                .collect::<Result<_>>()?
        }
    };

    let pairs: Vec<(usize, usize)> = partition.edge_sets.keys().copied().collect();
    let sizes: Vec<f64> = pairs.iter().map(|p| partition.edge_sets[p].len() as f64).collect();
    let mut in_pool = vec![true; greg.edge_count()];
    let mut out: Vec<SampledSubgraph> = Vec::with_capacity(split.num_snapshots());

    for t in 0..split.num_snapshots() {
        let mut probabilities = vec![0.0; greg.edge_count()];
        let mut overlap = Vec::new();
        if let Some(prev) = out.last() {
            let changed = changed_groups(greg, &split.snapshots[t - 1], &split.snapshots[t]);
            let prev_nodes: HashSet<usize> = prev.nodes.iter().copied().collect();
            let quota = (config.overlap_degree * num_t as f64).ceil() as usize;
            for (pair, q) in pairs.iter().zip(largest_remainder(&sizes, quota)) {
                overlap.extend(sample_overlap(greg, &partition.edge_sets[pair], &prev_nodes, &changed, q));
            }
            overlap.sort_unstable();
        }
        for &id in &overlap {
            probabilities[id] = 1.0;
        }
        let carried: HashSet<usize> = overlap.iter().copied().collect();
        let n_fresh = num_t.saturating_sub(overlap.len());
        let available = |in_pool: &[bool]| (0..in_pool.len()).filter(|&i| in_pool[i] && !carried.contains(&i)).count();
        if available(&in_pool) < n_fresh {
            // exhausted pool: every edge becomes eligible again
            in_pool.iter_mut().for_each(|x| *x = true);
        }
        let pools: Vec<Vec<usize>> = pairs
            .iter()
            .map(|p| {
                partition.edge_sets[p]
                    .iter()
                    .copied()
                    .filter(|&id| in_pool[id] && !carried.contains(&id))
                    .collect()
            })
            .collect();
        let caps: Vec<f64> = pools.iter().map(|p| p.len() as f64).collect();
        let allocation = capped_proportional(&sizes, &caps, n_fresh as f64);

        let mut sampled = overlap.clone();
        for (i, pool) in pools.iter().enumerate() {
            if pool.is_empty() || allocation[i] <= 0.0 {
                continue;
            }
            let w: Vec<f64> = pool.iter().map(|&id| weights[id]).collect();
            let p = optimal_probabilities(&w, allocation[i]);
            for (&id, &pe) in pool.iter().zip(&p) {
                probabilities[id] = pe;
            }
            let stream = rng::derive(config.seed, ((t as u64) << 32) | i as u64);
            let mut r = rng::seeded(stream);
            let drawn = sample_edges(pool, &p, &mut r);
            for &id in &drawn {
                in_pool[id] = false;
            }
            sampled.extend(drawn);
        }
        sampled.sort_unstable();
        let mut nodes: Vec<usize> = sampled
            .iter()
            .flat_map(|&id| {
                let k = greg.edges()[id].key;
                [k.u, k.v]
            })
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        out.push(SampledSubgraph {
            t: t + 1,
            edges: sampled,
            nodes,
            probabilities,
            overlap,
        });
    }
    Ok(out)
}

/// Integer split of `total` proportional to `weights` (largest remainder,
/// ties to the lower index).
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rest = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for i in order {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}
