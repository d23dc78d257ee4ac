//! Group graph convolution: initial embeddings from latents and tag
//! attributes, layered neighbour aggregation over the group relationship
//! graph, item embedding refresh from recent interacting groups, and the
//! preference/influence relevance score.

mod grad;
mod persist;
mod train;

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{featurize_tags, Dataset, Greg, Interaction};
use crate::linalg::{axpy, dot, sigmoid, Matrix};
use crate::rng;

pub use grad::{bpr_loss, check_gradients, check_gradients_for, loss_and_gradient, rel_error, GradCheck, Triple, REL_ERROR_FLOOR};
pub use persist::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use train::{exhaustive_loss, sample_triples, train, Adam, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GgcnConfig {
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub attr_dim: usize,
    pub num_layers: usize,
    pub alpha_v: f64,
    pub alpha_r: f64,
    pub lr: f64,
    pub lambda: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GgcnConfig {
    fn default() -> Self {
        GgcnConfig {
            embed_dim: 32,
            latent_dim: 16,
            attr_dim: 16,
            num_layers: 2,
            alpha_v: 0.8,
            alpha_r: 1e-6,
            lr: 1e-1,
            lambda: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            negatives_per_positive: 1,
            batch_size: 512,
            seed: 0,
        }
    }
}

impl GgcnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.embed_dim == 0 || self.latent_dim == 0 {
            return bad("embed_dim and latent_dim must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha_v) || !(0.0..=1.0).contains(&self.alpha_r) {
            return bad("alpha_v and alpha_r must lie in [0, 1]");
        }
        if !(self.lr > 0.0) || self.lambda < 0.0 {
            return bad("lr must be positive and lambda nonnegative");
        }
        if self.negatives_per_positive == 0 || self.batch_size == 0 {
            return bad("negatives_per_positive and batch_size must be positive");
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.latent_dim + self.attr_dim
    }
}

/// Named parameter tensors, in a fixed order shared by gradients and
/// optimizer moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    GroupInit,
    GroupBias,
    ItemInit,
    ItemBias,
    Layer(usize),
    GroupLatent,
    ItemLatent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `W^0`, d × (latent + attr)
    pub w0: Matrix,
    pub b0: Vec<f64>,
    /// `H^0`, d × (latent + attr)
    pub h0: Matrix,
    pub beta0: Vec<f64>,
    /// `W^1..W^L`, each d × 2d
    pub layers: Vec<Matrix>,
    /// `p_g` rows
    pub group_latent: Matrix,
    /// `q_v` rows
    pub item_latent: Matrix,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        Params {
            w0: Matrix::zeros(other.w0.rows(), other.w0.cols()),
            b0: vec![0.0; other.b0.len()],
            h0: Matrix::zeros(other.h0.rows(), other.h0.cols()),
            beta0: vec![0.0; other.beta0.len()],
            layers: other
                .layers
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
            group_latent: Matrix::zeros(other.group_latent.rows(), other.group_latent.cols()),
            item_latent: Matrix::zeros(other.item_latent.rows(), other.item_latent.cols()),
        }
    }

    pub fn groups(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out = vec![
            (ParamGroup::GroupInit, self.w0.as_slice()),
            (ParamGroup::GroupBias, self.b0.as_slice()),
            (ParamGroup::ItemInit, self.h0.as_slice()),
            (ParamGroup::ItemBias, self.beta0.as_slice()),
        ];
        for (l, m) in self.layers.iter().enumerate() {
            out.push((ParamGroup::Layer(l + 1), m.as_slice()));
        }
        out.push((ParamGroup::GroupLatent, self.group_latent.as_slice()));
        out.push((ParamGroup::ItemLatent, self.item_latent.as_slice()));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out = vec![
            (ParamGroup::GroupInit, self.w0.as_mut_slice()),
            (ParamGroup::GroupBias, self.b0.as_mut_slice()),
            (ParamGroup::ItemInit, self.h0.as_mut_slice()),
            (ParamGroup::ItemBias, self.beta0.as_mut_slice()),
        ];
        for (l, m) in self.layers.iter_mut().enumerate() {
            out.push((ParamGroup::Layer(l + 1), m.as_mut_slice()));
        }
        out.push((ParamGroup::GroupLatent, self.group_latent.as_mut_slice()));
        out.push((ParamGroup::ItemLatent, self.item_latent.as_mut_slice()));
        out
    }

    pub fn sq_norm(&self) -> f64 {
        self.groups().iter().map(|(_, s)| dot(s, s)).sum()
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Aggregation structure: for each node, the neighbours it pulls from with
/// their coefficients, and whether the node takes part at all.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    neighbors: Vec<Vec<(usize, f64)>>,
    active: Vec<bool>,
}

impl Topology {
    /// Symmetric normalisation `1/√(|N_g||N_g'|)` over the whole graph.
    pub fn full(greg: &Greg) -> Self {
        let n = greg.node_count();
        let neighbors = (0..n)
            .map(|g| {
                greg.neighbors(g)
                    .iter()
                    .map(|&h| (h, greg.laplacian_norm(g, h)))
                    .collect()
            })
            .collect();
        Topology {
            neighbors,
            active: vec![true; n],
        }
    }

    /// No edges; every node active.
    pub fn isolated(n: usize) -> Self {
        Topology {
            neighbors: vec![Vec::new(); n],
            active: vec![true; n],
        }
    }

    pub fn from_parts(neighbors: Vec<Vec<(usize, f64)>>, active: Vec<bool>) -> Self {
        assert_eq!(neighbors.len(), active.len());
        Topology { neighbors, active }
    }

    pub fn node_count(&self) -> usize {
        self.active.len()
    }

    pub fn neighbors(&self, g: usize) -> &[(usize, f64)] {
        &self.neighbors[g]
    }

    pub fn is_active(&self, g: usize) -> bool {
        self.active[g]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Trainable parameters, fixed attributes and the derived embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: GgcnConfig,
    pub group_ids: Vec<String>,
    pub item_ids: Vec<String>,
    group_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    pub params: Params,
    /// `x_g` rows
    pub group_attr: Matrix,
    /// `y_v` rows
    pub item_attr: Matrix,
    /// Final group embeddings `e_g = e^L_g`.
    pub group_emb: Matrix,
    /// `e^0_v`
    pub item_emb0: Matrix,
    /// `e_v` after the recent-group refresh.
    pub item_emb: Matrix,
    /// `V_g`: sorted item indices each group has interacted with.
    pub history: Vec<Vec<usize>>,
    /// `G_new`: sorted group indices that recently interacted with each item.
    pub recent_groups: Vec<Vec<usize>>,
}

impl ModelState {
    /// Seeded initialisation: latents uniform in (−0.1, 0.1), weights
    /// Glorot-uniform, biases zero.
    pub fn new(
        config: GgcnConfig,
        group_ids: Vec<String>,
        item_ids: Vec<String>,
        group_attr: Matrix,
        item_attr: Matrix,
    ) -> Result<Self> {
        config.validate()?;
        for attr in [&group_attr, &item_attr] {
            if attr.cols() != config.attr_dim {
                return Err(Error::DimensionMismatch {
                    expected: config.attr_dim,
                    got: attr.cols(),
                });
            }
        }
        if group_attr.rows() != group_ids.len() || item_attr.rows() != item_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: group_ids.len(),
                got: group_attr.rows(),
            });
        }
        let d = config.embed_dim;
        let mut r = rng::seeded(rng::derive(config.seed, 0x6767_636e));
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| r.gen_range(-a..a))
        };
        let w0 = glorot(d, config.input_dim());
        let h0 = glorot(d, config.input_dim());
        let layers = (0..config.num_layers).map(|_| glorot(d, 2 * d)).collect();
        let mut latent = |rows: usize| Matrix::from_fn(rows, config.latent_dim, |_, _| r.gen_range(-0.1..0.1));
        let group_latent = latent(group_ids.len());
        let item_latent = latent(item_ids.len());
        let params = Params {
            w0,
            b0: vec![0.0; d],
            h0,
            beta0: vec![0.0; d],
            layers,
            group_latent,
            item_latent,
        };
        Ok(Self::from_params(config, group_ids, item_ids, params, group_attr, item_attr))
    }

    pub fn from_params(
        config: GgcnConfig,
        group_ids: Vec<String>,
        item_ids: Vec<String>,
        params: Params,
        group_attr: Matrix,
        item_attr: Matrix,
    ) -> Self {
        let d = config.embed_dim;
        let ng = group_ids.len();
        let nv = item_ids.len();
        let group_index = group_ids.iter().cloned().enumerate().map(|(i, g)| (g, i)).collect();
        let item_index = item_ids.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
        ModelState {
            config,
            group_ids,
            item_ids,
            group_index,
            item_index,
            params,
            group_attr,
            item_attr,
            group_emb: Matrix::zeros(ng, d),
            item_emb0: Matrix::zeros(nv, d),
            item_emb: Matrix::zeros(nv, d),
            history: vec![Vec::new(); ng],
            recent_groups: vec![Vec::new(); nv],
        }
    }

    /// Fresh state over every group and item of `ds`, with hashed tag
    /// attributes. Group order matches the graph built from `ds`.
    pub fn for_dataset(config: GgcnConfig, ds: &Dataset) -> Result<Self> {
        let group_ids = ds.group_ids();
        let item_ids = ds.item_ids();
        let dim = config.attr_dim;
        let attrs = |ids: &[String], tags: &std::collections::BTreeMap<String, Vec<String>>| {
            let mut m = Matrix::zeros(ids.len(), dim);
            for (i, id) in ids.iter().enumerate() {
                if let Some(t) = tags.get(id) {
                    m.row_mut(i).copy_from_slice(&featurize_tags(t, dim, config.seed));
                }
            }
            m
        };
        let gattr = attrs(&group_ids, &ds.group_tags);
        let iattr = attrs(&item_ids, &ds.item_tags);
        Self::new(config, group_ids, item_ids, gattr, iattr)
    }

    pub fn group_index(&self, id: &str) -> Option<usize> {
        self.group_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn num_groups(&self) -> usize {
        self.group_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Sets `V_g` from `history` and `G_new` from `recent`. Unknown ids are
    /// ignored.
    pub fn observe(&mut self, history: &[Interaction], recent: &[Interaction]) {
        let mut hist = vec![Vec::new(); self.num_groups()];
        for it in history {
            if let (Some(g), Some(v)) = (self.group_index(&it.group_id), self.item_index(&it.item_id)) {
                hist[g].push(v);
            }
        }
        let mut rec = vec![Vec::new(); self.num_items()];
        for it in recent {
            if let (Some(g), Some(v)) = (self.group_index(&it.group_id), self.item_index(&it.item_id)) {
                rec[v].push(g);
            }
        }
        for list in hist.iter_mut().chain(rec.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        self.history = hist;
        self.recent_groups = rec;
    }

    /// Recomputes `e_g`, `e^0_v` and `e_v` from the current parameters.
    pub fn refresh(&mut self, topo: &Topology) {
        let layers = self.layer_embeddings(topo);
        self.group_emb = layers.last().cloned().expect("at least the initial layer");
        self.item_emb0 = initial_item_embeddings(&self.params, &self.item_attr);
        self.item_emb = Matrix::zeros(self.num_items(), self.config.embed_dim);
        for v in 0..self.num_items() {
            let e = refreshed_item_embedding(
                self.item_emb0.row(v),
                &self.recent_groups[v],
                &self.group_emb,
                self.config.alpha_v,
            );
            self.item_emb.row_mut(v).copy_from_slice(&e);
        }
    }

    /// Sets every embedding to its layer-0 value (`e_g = e^0_g`, `e_v = e^0_v`).
    pub fn init_embeddings(&mut self) -> Result<()> {
        let expected = self.params.w0.cols();
        let got = self.config.latent_dim + self.group_attr.cols();
        if expected != got {
            return Err(Error::DimensionMismatch { expected, got });
        }
        self.group_emb = initial_group_embeddings(&self.params, &self.group_attr);
        self.item_emb0 = initial_item_embeddings(&self.params, &self.item_attr);
        self.item_emb = self.item_emb0.clone();
        Ok(())
    }

    /// `e^0..e^L` for all groups under `topo`.
    pub fn layer_embeddings(&self, topo: &Topology) -> Vec<Matrix> {
        let e0 = initial_group_embeddings(&self.params, &self.group_attr);
        propagate(&self.params.layers, e0, topo)
    }

    /// `e_v = α_v·e^0_v + (1−α_v)/|G_new|·Σ e_g`; `e^0_v` when `G_new` is empty.
    pub fn update_item_embedding(&self, item: &str) -> Result<Vec<f64>> {
        let v = self
            .item_index(item)
            .ok_or_else(|| Error::UnknownItem(item.to_owned()))?;
        Ok(refreshed_item_embedding(
            self.item_emb0.row(v),
            &self.recent_groups[v],
            &self.group_emb,
            self.config.alpha_v,
        ))
    }

    /// `e_g + |V_g|^{-1/2}·Σ_{v∈V_g} e_v`
    pub fn history_embedding(&self, g: usize) -> Vec<f64> {
        history_embedding(self.group_emb.row(g), &self.history[g], &self.item_emb)
    }

    pub fn predict_relevance(&self, group: &str, item: &str, influence: f64) -> Result<f64> {
        let g = self
            .group_index(group)
            .ok_or_else(|| Error::UnknownGroup(group.to_owned()))?;
        let v = self
            .item_index(item)
            .ok_or_else(|| Error::UnknownItem(item.to_owned()))?;
        Ok(relevance(
            self.item_emb.row(v),
            &self.history_embedding(g),
            influence,
            self.config.alpha_r,
        ))
    }
}

/// `(1−α_r)·e_vᵀh_g + α_r·ŝ`
pub fn relevance(item_emb: &[f64], history_emb: &[f64], influence: f64, alpha_r: f64) -> f64 {
    (1.0 - alpha_r) * dot(item_emb, history_emb) + alpha_r * influence
}

pub fn history_embedding(group_emb: &[f64], history: &[usize], item_emb: &Matrix) -> Vec<f64> {
    let mut h = group_emb.to_vec();
    if !history.is_empty() {
        let scale = 1.0 / (history.len() as f64).sqrt();
        for &v in history {
            axpy(scale, item_emb.row(v), &mut h);
        }
    }
    h
}

pub fn refreshed_item_embedding(e0: &[f64], recent: &[usize], group_emb: &Matrix, alpha_v: f64) -> Vec<f64> {
    if recent.is_empty() {
        return e0.to_vec();
    }
    let mut e: Vec<f64> = e0.iter().map(|x| alpha_v * x).collect();
    let share = (1.0 - alpha_v) / recent.len() as f64;
    for &g in recent {
        axpy(share, group_emb.row(g), &mut e);
    }
    e
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

fn encode(weights: &Matrix, bias: &[f64], latent: &[f64], attr: &[f64]) -> Vec<f64> {
    let input = concat(latent, attr);
    let mut z = weights.matvec(&input);
    for (zi, bi) in z.iter_mut().zip(bias) {
        *zi = sigmoid(*zi + bi);
    }
    z
}

/// `e^0_g = σ(W^0·[p_g‖x_g] + b^0)` for every group.
pub fn initial_group_embeddings(params: &Params, group_attr: &Matrix) -> Matrix {
    let n = group_attr.rows();
    let d = params.b0.len();
    let mut out = Matrix::zeros(n, d);
    for g in 0..n {
        let e = encode(&params.w0, &params.b0, params.group_latent.row(g), group_attr.row(g));
        out.row_mut(g).copy_from_slice(&e);
    }
    out
}

/// `e^0_v = σ(H^0·[q_v‖y_v] + β^0)` for every item.
pub fn initial_item_embeddings(params: &Params, item_attr: &Matrix) -> Matrix {
    let n = item_attr.rows();
    let d = params.beta0.len();
    let mut out = Matrix::zeros(n, d);
    for v in 0..n {
        let e = encode(&params.h0, &params.beta0, params.item_latent.row(v), item_attr.row(v));
        out.row_mut(v).copy_from_slice(&e);
    }
    out
}

/// Runs the layer recurrence `e^l_g = σ(W^l·[e^{l−1}_g‖agg^{l−1}_g])` and
/// returns `e^0..e^L`. Inactive nodes keep zero rows past layer 0.
pub fn propagate(layers: &[Matrix], e0: Matrix, topo: &Topology) -> Vec<Matrix> {
    let n = e0.rows();
    let d = e0.cols();
    let mut out = Vec::with_capacity(layers.len() + 1);
    out.push(e0);
    let mut input = vec![0.0; 2 * d];
    for w in layers {
        let prev = out.last().expect("layer 0 present");
        let mut next = Matrix::zeros(n, d);
        for g in 0..n {
            if !topo.is_active(g) {
                continue;
            }
            aggregate_into(prev, topo, g, &mut input);
            let row = next.row_mut(g);
            w.matvec_into(&input, row);
            row.iter_mut().for_each(|x| *x = sigmoid(*x));
        }
        out.push(next);
    }
    out
}

/// Fills `buf` with `[e_g ‖ Σ c·e_g']`.
pub(crate) fn aggregate_into(prev: &Matrix, topo: &Topology, g: usize, buf: &mut [f64]) {
    let d = prev.cols();
    let (own, agg) = buf.split_at_mut(d);
    own.copy_from_slice(prev.row(g));
    agg.iter_mut().for_each(|x| *x = 0.0);
    for &(h, c) in topo.neighbors(g) {
        axpy(c, prev.row(h), agg);
    }
}
