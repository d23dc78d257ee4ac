//! Item-conditioned propagation graph over groups and the dynamic
//! independent cascade that scores group influence.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Greg, Interaction, TemporalSplit};
use crate::linalg::{dot, norm, sigmoid, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdMode {
    /// Fresh uniform threshold per activation attempt.
    Stochastic,
    Fixed(f64),
}

/// Which factors enter the edge probability. Disabling one drops its terms
/// without renormalising the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factors {
    pub similarity: bool,
    pub willingness: bool,
}

impl Factors {
    pub const ALL: Factors = Factors {
        similarity: true,
        willingness: true,
    };
}

impl Default for Factors {
    fn default() -> Self {
        Factors::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub gamma_1: f64,
    pub gamma_2: f64,
    /// Trailing snapshots that count as recent for activeness.
    pub recent_window: usize,
    pub replications: usize,
    pub threshold_mode: ThresholdMode,
    pub factors: Factors,
    pub seed: u64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            gamma_1: 0.1,
            gamma_2: 0.7,
            recent_window: 1,
            replications: 200,
            threshold_mode: ThresholdMode::Stochastic,
            factors: Factors::ALL,
            seed: 0,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if !(self.gamma_1 >= 0.0 && self.gamma_2 >= 0.0 && self.gamma_1 + self.gamma_2 <= 1.0 + 1e-12) {
            return bad("gamma_1, gamma_2 must be nonnegative with gamma_1 + gamma_2 <= 1");
        }
        if self.replications == 0 {
            return bad("replications must be positive");
        }
        if let ThresholdMode::Fixed(tau) = self.threshold_mode {
            if !(0.0..=1.0).contains(&tau) {
                return bad("fixed threshold must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Interaction counts behind activeness, indexed like the graph nodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivityCounts {
    pub recent: Vec<usize>,
    pub total: Vec<usize>,
}

impl ActivityCounts {
    pub fn from_split(greg: &Greg, split: &TemporalSplit, recent_window: usize) -> Self {
        let n = greg.node_count();
        let mut counts = ActivityCounts {
            recent: vec![0; n],
            total: vec![0; n],
        };
        let first_recent = split.num_snapshots().saturating_sub(recent_window);
        for (t, snap) in split.snapshots.iter().enumerate() {
            for it in snap {
                if let Some(g) = greg.index_of(&it.group_id) {
                    counts.total[g] += 1;
                    if t >= first_recent {
                        counts.recent[g] += 1;
                    }
                }
            }
        }
        counts
    }

    pub fn activeness(&self, g: usize) -> f64 {
        ratio(self.recent[g], self.total[g])
    }
}

fn ratio(recent: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        recent as f64 / total as f64
    }
}

/// Share of a group's interactions that fall in the last `recent_window`
/// snapshots; 0 for a group with none.
pub fn activeness(group_id: &str, split: &TemporalSplit, recent_window: usize) -> f64 {
    let first_recent = split.num_snapshots().saturating_sub(recent_window);
    let (mut recent, mut total) = (0, 0);
    for (t, snap) in split.snapshots.iter().enumerate() {
        let n = snap.iter().filter(|it| it.group_id == group_id).count();
        total += n;
        if t >= first_recent {
            recent += n;
        }
    }
    ratio(recent, total)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine mapped to `[0, 1]` by `(1 + cos)/2`.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(0.5 * (1.0 + cosine(a, b)?))
}

pub fn raw_willingness(item_emb: &[f64], group_emb: &[f64]) -> f64 {
    dot(item_emb, group_emb)
}

/// `σ(e_vᵀe_g)`
pub fn willingness(item_emb: &[f64], group_emb: &[f64]) -> f64 {
    sigmoid(raw_willingness(item_emb, group_emb))
}

/// Mapped similarity per undirected graph edge, in edge-id order. Item
/// independent, so computed once and shared by every item's graph.
pub fn edge_similarities(greg: &Greg, group_emb: &Matrix) -> Result<Vec<f64>> {
    greg.edges()
        .iter()
        .map(|e| similarity(group_emb.row(e.key.u), group_emb.row(e.key.v)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropEdge {
    pub src: usize,
    pub dst: usize,
    pub probability: f64,
}

/// Directed, item-conditioned propagation graph. Every undirected graph
/// edge appears once in each direction; edges are sorted by `(src, dst)`
/// and their position is the id used to key cascade thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Diiprog {
    pub item_id: String,
    groups: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<PropEdge>,
    /// CSR offsets of out-edges per source.
    offsets: Vec<usize>,
    /// Directed edge ids entering each node.
    incoming: Vec<Vec<usize>>,
    sims: Vec<f64>,
    counts: ActivityCounts,
    activeness: Vec<f64>,
    willingness: Vec<f64>,
    gamma_1: f64,
    gamma_2: f64,
    factors: Factors,
}

/// `p^v_ij = γ1·A_i·W_i + γ2·sim_ij + (1−γ1−γ2)·W_j`, with disabled
/// factors' terms dropped.
pub fn edge_probability(
    gamma_1: f64,
    gamma_2: f64,
    factors: Factors,
    activeness_i: f64,
    willingness_i: f64,
    willingness_j: f64,
    sim: f64,
) -> f64 {
    let mut p = 0.0;
    if factors.willingness {
        p += gamma_1 * activeness_i * willingness_i + (1.0 - gamma_1 - gamma_2) * willingness_j;
    }
    if factors.similarity {
        p += gamma_2 * sim;
    }
    p.clamp(0.0, 1.0)
}

impl Diiprog {
    /// Builds the graph from explicit factors: `sims` per undirected edge,
    /// willingness per node.
    pub fn from_factors(
        greg: &Greg,
        item_id: impl Into<String>,
        sims: &[f64],
        counts: ActivityCounts,
        willingness: Vec<f64>,
        params: &PropagationParams,
    ) -> Result<Self> {
        params.validate()?;
        let n = greg.node_count();
        if sims.len() != greg.edge_count() {
            return Err(Error::DimensionMismatch {
                expected: greg.edge_count(),
                got: sims.len(),
            });
        }
        for len in [willingness.len(), counts.recent.len(), counts.total.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        let mut edges = Vec::with_capacity(2 * greg.edge_count());
        let mut edge_sims = Vec::with_capacity(2 * greg.edge_count());
        let mut offsets = Vec::with_capacity(n + 1);
        let mut incoming = vec![Vec::new(); n];
        for src in 0..n {
            offsets.push(edges.len());
            for &dst in greg.neighbors(src) {
                incoming[dst].push(edges.len());
                edge_sims.push(sims[crate::ges::edge_id(greg, src, dst)]);
                edges.push(PropEdge {
                    src,
                    dst,
                    probability: 0.0,
                });
            }
        }
        offsets.push(edges.len());
        let activeness = (0..n).map(|g| counts.activeness(g)).collect();
        let mut graph = Diiprog {
            item_id: item_id.into(),
            groups: greg.nodes().to_vec(),
            index: greg.nodes().iter().cloned().enumerate().map(|(i, g)| (g, i)).collect(),
            edges,
            offsets,
            incoming,
            sims: edge_sims,
            counts,
            activeness,
            willingness,
            gamma_1: params.gamma_1,
            gamma_2: params.gamma_2,
            factors: params.factors,
        };
        for e in 0..graph.edges.len() {
            graph.recompute(e);
        }
        Ok(graph)
    }

    fn recompute(&mut self, e: usize) {
        let PropEdge { src, dst, .. } = self.edges[e];
        self.edges[e].probability = edge_probability(
            self.gamma_1,
            self.gamma_2,
            self.factors,
            self.activeness[src],
            self.willingness[src],
            self.willingness[dst],
            self.sims[e],
        );
    }

    pub fn node_count(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn group_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn edges(&self) -> &[PropEdge] {
        &self.edges
    }

    /// Ids of the edges leaving `g`.
    pub fn out_edges(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn probability(&self, src: usize, dst: usize) -> Option<f64> {
        self.edges[self.out_edges(src)]
            .iter()
            .find(|e| e.dst == dst)
            .map(|e| e.probability)
    }

    pub fn activeness(&self) -> &[f64] {
        &self.activeness
    }

    pub fn willingness(&self) -> &[f64] {
        &self.willingness
    }

    pub fn counts(&self) -> &ActivityCounts {
        &self.counts
    }

    /// Applies newly observed interactions: every interacting group's
    /// activeness is recomputed with the new events counted as recent, and
    /// groups that interacted with this graph's item get willingness 1.
    /// Only edges incident to touched groups change. Returns the groups
    /// that adopted the item.
    pub fn update(&mut self, new_interactions: &[Interaction]) -> Result<Vec<usize>> {
        let mut touched = Vec::new();
        let mut adopters = Vec::new();
        for it in new_interactions {
            let g = self
                .group_index(&it.group_id)
                .ok_or_else(|| Error::UnknownGroup(it.group_id.clone()))?;
            self.counts.recent[g] += 1;
            self.counts.total[g] += 1;
            self.activeness[g] = self.counts.activeness(g);
            if it.item_id == self.item_id {
                self.willingness[g] = 1.0;
                adopters.push(g);
            }
            touched.push(g);
        }
        touched.sort_unstable();
        touched.dedup();
        for &g in &touched {
            for e in self.out_edges(g) {
                self.recompute(e);
            }
            for k in 0..self.incoming[g].len() {
                self.recompute(self.incoming[g][k]);
            }
        }
        adopters.sort_unstable();
        adopters.dedup();
        Ok(adopters)
    }

    fn threshold(&self, mode: ThresholdMode, seed: u64, replication: u64, edge: usize) -> f64 {
        match mode {
            ThresholdMode::Fixed(tau) => tau,
            ThresholdMode::Stochastic => rng::unit_from(seed, replication, edge as u64),
        }
    }

    /// One cascade from `seeds`. Round `r` first applies `stream[r]` (its
    /// adopters join the active set), then every group activated in the
    /// previous round tries each inactive out-neighbour once, succeeding
    /// when `p > τ`. Returns the number of active groups at the end.
    /// Stochastic thresholds are keyed by `(seed, replication, edge id)`, so
    /// graphs with the same topology share draws.
    pub fn cascade(&self, seeds: &[usize], stream: &[Vec<Interaction>], replication: u64, params: &PropagationParams) -> Result<usize> {
        let mut updated: Option<Diiprog> = None;
        let n = self.node_count();
        let mut active = vec![false; n];
        let mut frontier = Vec::new();
        let mut count = 0;
        for &s in seeds {
            if s >= n {
                return Err(Error::UnknownGroup(format!("#{s}")));
            }
            if !active[s] {
                active[s] = true;
                frontier.push(s);
                count += 1;
            }
        }
        let mut round = 0;
        loop {
            if let Some(batch) = stream.get(round) {
                let mut g = updated.take().unwrap_or_else(|| self.clone());
                let adopters = g.update(batch)?;
                updated = Some(g);
                for g in adopters {
                    if !active[g] {
                        active[g] = true;
                        frontier.push(g);
                        count += 1;
                    }
                }
            }
            if frontier.is_empty() && round >= stream.len() {
                break;
            }
            let graph = updated.as_ref().unwrap_or(self);
            let mut next = Vec::new();
            for &u in &frontier {
                for e in graph.out_edges(u) {
                    let edge = graph.edges[e];
                    if active[edge.dst] {
                        continue;
                    }
                    if edge.probability > graph.threshold(params.threshold_mode, params.seed, replication, e) {
                        active[edge.dst] = true;
                        next.push(edge.dst);
                        count += 1;
                    }
                }
            }
            frontier = next;
            round += 1;
        }
        Ok(count)
    }
}

/// Graph for item `v` from trained embeddings: willingness `σ(e_vᵀe_g)`,
/// mapped similarity from `sims`, activeness from `counts`.
pub fn build_diiprog(
    greg: &Greg,
    group_emb: &Matrix,
    item_id: &str,
    item_emb: &[f64],
    sims: &[f64],
    counts: &ActivityCounts,
    params: &PropagationParams,
) -> Result<Diiprog> {
    if group_emb.rows() != greg.node_count() {
        return Err(Error::DimensionMismatch {
            expected: greg.node_count(),
            got: group_emb.rows(),
        });
    }
    let w = (0..greg.node_count())
        .map(|g| willingness(item_emb, group_emb.row(g)))
        .collect();
    Diiprog::from_factors(greg, item_id, sims, counts.clone(), w, params)
}

/// In-place update with newly observed interactions; see [`Diiprog::update`].
pub fn update_diiprog(graph: &mut Diiprog, new_interactions: &[Interaction]) -> Result<()> {
    graph.update(new_interactions).map(|_| ())
}

/// Spread `|I_g|` of one cascade seeded at `seed_group`.
pub fn dyic_simulate(
    graph: &Diiprog,
    seed_group: usize,
    stream: &[Vec<Interaction>],
    replication: u64,
    params: &PropagationParams,
) -> Result<usize> {
    graph.cascade(&[seed_group], stream, replication, params)
}

/// Spread per replication from a seed set over a static graph.
pub fn replicate_spread(graph: &Diiprog, seeds: &[usize], params: &PropagationParams) -> Result<Vec<usize>> {
    (0..params.replications as u64)
        .into_par_iter()
        .map(|r| graph.cascade(seeds, &[], r, params))
        .collect()
}

/// Mean normalised spread `E|I_g| / |V|` with `group` as the only seed.
pub fn influence_score(graph: &Diiprog, group: usize, params: &PropagationParams) -> Result<f64> {
    let runs = replicate_spread(graph, &[group], params)?;
    let total: usize = runs.iter().sum();
    Ok(total as f64 / (runs.len() * graph.node_count()) as f64)
}

/// [`influence_score`] for every group.
pub fn influence_scores(graph: &Diiprog, params: &PropagationParams) -> Result<Vec<f64>> {
    (0..graph.node_count())
        .map(|g| influence_score(graph, g, params))
        .collect()
}

/// Mean over items of the normalised spread reached from each item's
/// recommended seed groups.
pub fn sigma_inf(recommendations: &[(&Diiprog, Vec<usize>)], params: &PropagationParams) -> Result<f64> {
    if recommendations.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (graph, seeds) in recommendations {
        let runs = replicate_spread(graph, seeds, params)?;
        let total: usize = runs.iter().sum();
        sum += total as f64 / (runs.len() * graph.node_count()) as f64;
    }
    Ok(sum / recommendations.len() as f64)
}

pub fn write_diiprog_csv<W: Write>(graph: &Diiprog, mut out: W) -> Result<()> {
    writeln!(out, "src,dst,probability")?;
    for e in &graph.edges {
        writeln!(out, "{},{},{}", graph.groups[e.src], graph.groups[e.dst], e.probability)?;
    }
    Ok(())
}

pub fn write_simulation_csv<W: Write>(graph: &Diiprog, seed_group: usize, spreads: &[usize], mut out: W) -> Result<()> {
    writeln!(out, "seed_group,replication,spread")?;
    for (r, s) in spreads.iter().enumerate() {
        writeln!(out, "{},{r},{s}", graph.groups[seed_group])?;
    }
    Ok(())
}
