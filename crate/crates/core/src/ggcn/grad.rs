//! BPR objective and its gradient, derived by hand through every stage of
//! the forward pass, plus a central-difference checker.

use serde::Serialize;

use super::{
    aggregate_into, history_embedding, initial_group_embeddings, initial_item_embeddings, propagate,
    refreshed_item_embedding, ModelState, ParamGroup, Params, Topology,
};
use crate::linalg::{axpy, dot, ln_sigmoid, sigmoid, Matrix};

/// One `(group, positive item, negative item)` training comparison, by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triple {
    pub group: usize,
    pub pos: usize,
    pub neg: usize,
}

impl Triple {
    pub fn new(group: usize, pos: usize, neg: usize) -> Self {
        Triple { group, pos, neg }
    }
}

struct Forward {
    layers: Vec<Matrix>,
    item_e0: Matrix,
    item_e: Matrix,
    /// `G_new` restricted to active groups.
    recent: Vec<Vec<usize>>,
}

fn forward(state: &ModelState, topo: &Topology) -> Forward {
    let e0 = initial_group_embeddings(&state.params, &state.group_attr);
    let layers = propagate(&state.params.layers, e0, topo);
    let item_e0 = initial_item_embeddings(&state.params, &state.item_attr);
    let group_e = layers.last().expect("layer 0");
    let recent: Vec<Vec<usize>> = state
        .recent_groups
        .iter()
        .map(|gs| gs.iter().copied().filter(|&g| topo.is_active(g)).collect())
        .collect();
    let mut item_e = Matrix::zeros(item_e0.rows(), item_e0.cols());
    for v in 0..item_e0.rows() {
        let e = refreshed_item_embedding(item_e0.row(v), &recent[v], group_e, state.config.alpha_v);
        item_e.row_mut(v).copy_from_slice(&e);
    }
    Forward {
        layers,
        item_e0,
        item_e,
        recent,
    }
}

/// `−Σ ln σ(r̂_pos − r̂_neg) + λ‖Θ‖²`. The influence term is constant per
/// group and cancels in every difference, so it is left out here.
pub fn bpr_loss(state: &ModelState, topo: &Topology, triples: &[Triple]) -> f64 {
    loss_and_gradient(state, topo, triples, false).0
}

pub fn loss_and_gradient(
    state: &ModelState,
    topo: &Topology,
    triples: &[Triple],
    want_grad: bool,
) -> (f64, Option<Params>) {
    let cfg = &state.config;
    let d = cfg.embed_dim;
    let fwd = forward(state, topo);
    let group_e = fwd.layers.last().expect("layer 0");
    let scale = 1.0 - cfg.alpha_r;

    let mut loss = cfg.lambda * state.params.sq_norm();
    let mut grad_group_e = Matrix::zeros(group_e.rows(), d);
    let mut grad_item_e = Matrix::zeros(fwd.item_e.rows(), d);
    let mut touched_items = vec![false; fwd.item_e.rows()];

    let mut cached_group = usize::MAX;
    let mut h = Vec::new();
    for t in triples {
        if t.group != cached_group {
            h = history_embedding(group_e.row(t.group), &state.history[t.group], &fwd.item_e);
            cached_group = t.group;
        }
        let r_pos = scale * dot(fwd.item_e.row(t.pos), &h);
        let r_neg = scale * dot(fwd.item_e.row(t.neg), &h);
        let diff = r_pos - r_neg;
        loss -= ln_sigmoid(diff);
        if !want_grad {
            continue;
        }
        // d(−ln σ(Δ))/dΔ = −σ(−Δ)
        let g = -sigmoid(-diff);
        axpy(g * scale, &h, grad_item_e.row_mut(t.pos));
        axpy(-g * scale, &h, grad_item_e.row_mut(t.neg));
        touched_items[t.pos] = true;
        touched_items[t.neg] = true;
        let mut grad_h = vec![0.0; d];
        axpy(g * scale, fwd.item_e.row(t.pos), &mut grad_h);
        axpy(-g * scale, fwd.item_e.row(t.neg), &mut grad_h);
        axpy(1.0, &grad_h, grad_group_e.row_mut(t.group));
        let hist = &state.history[t.group];
        if !hist.is_empty() {
            let s = 1.0 / (hist.len() as f64).sqrt();
            for &v in hist {
                axpy(s, &grad_h, grad_item_e.row_mut(v));
                touched_items[v] = true;
            }
        }
    }
    if !want_grad {
        return (loss, None);
    }

    let params = &state.params;
    let mut grad = Params::zeros_like(params);

    // items: e_v -> e^0_v (and the recent groups) -> H^0, β^0, q_v
    let input_dim = params.h0.cols();
    let latent_dim = cfg.latent_dim;
    let mut input = vec![0.0; input_dim];
    let mut grad_input = vec![0.0; input_dim];
    for v in 0..fwd.item_e.rows() {
        if !touched_items[v] {
            continue;
        }
        let ge = grad_item_e.row(v).to_vec();
        let recent = &fwd.recent[v];
        let mut ge0 = ge.clone();
        if !recent.is_empty() {
            ge0.iter_mut().for_each(|x| *x *= cfg.alpha_v);
            let share = (1.0 - cfg.alpha_v) / recent.len() as f64;
            for &g in recent {
                axpy(share, &ge, grad_group_e.row_mut(g));
            }
        }
        let e0 = fwd.item_e0.row(v);
        let gz: Vec<f64> = ge0.iter().zip(e0).map(|(g, e)| g * e * (1.0 - e)).collect();
        input[..latent_dim].copy_from_slice(params.item_latent.row(v));
        input[latent_dim..].copy_from_slice(state.item_attr.row(v));
        grad.h0.add_outer(&gz, &input);
        axpy(1.0, &gz, &mut grad.beta0);
        grad_input.iter_mut().for_each(|x| *x = 0.0);
        params.h0.matvec_t_acc(&gz, &mut grad_input);
        axpy(1.0, &grad_input[..latent_dim], grad.item_latent.row_mut(v));
    }

    // groups: back through the layers
    let n = group_e.rows();
    let mut grad_cur = grad_group_e;
    let mut concat = vec![0.0; 2 * d];
    for l in (1..fwd.layers.len()).rev() {
        let out = &fwd.layers[l];
        let prev = &fwd.layers[l - 1];
        let w = &params.layers[l - 1];
        let mut grad_prev = Matrix::zeros(n, d);
        for g in 0..n {
            if !topo.is_active(g) {
                continue;
            }
            let go = grad_cur.row(g);
            if go.iter().all(|&x| x == 0.0) {
                continue;
            }
            let e = out.row(g);
            let gp: Vec<f64> = go.iter().zip(e).map(|(g, e)| g * e * (1.0 - e)).collect();
            aggregate_into(prev, topo, g, &mut concat);
            grad.layers[l - 1].add_outer(&gp, &concat);
            let mut gc = vec![0.0; 2 * d];
            w.matvec_t_acc(&gp, &mut gc);
            axpy(1.0, &gc[..d], grad_prev.row_mut(g));
            for &(h, c) in topo.neighbors(g) {
                axpy(c, &gc[d..], grad_prev.row_mut(h));
            }
        }
        grad_cur = grad_prev;
    }
    let e0 = &fwd.layers[0];
    for g in 0..n {
        let go = grad_cur.row(g);
        if go.iter().all(|&x| x == 0.0) {
            continue;
        }
        let e = e0.row(g);
        let gz: Vec<f64> = go.iter().zip(e).map(|(g, e)| g * e * (1.0 - e)).collect();
        input[..latent_dim].copy_from_slice(params.group_latent.row(g));
        input[latent_dim..].copy_from_slice(state.group_attr.row(g));
        grad.w0.add_outer(&gz, &input);
        axpy(1.0, &gz, &mut grad.b0);
        grad_input.iter_mut().for_each(|x| *x = 0.0);
        params.w0.matvec_t_acc(&gz, &mut grad_input);
        axpy(1.0, &grad_input[..latent_dim], grad.group_latent.row_mut(g));
    }

    if cfg.lambda != 0.0 {
        let two_lambda = 2.0 * cfg.lambda;
        for ((_, gs), (_, ps)) in grad.groups_mut().into_iter().zip(params.groups()) {
            axpy(two_lambda, ps, gs);
        }
    }
    (loss, Some(grad))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub per_group: Vec<(ParamGroup, f64)>,
    pub checked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// vanishing gradients from turning round-off into large ratios.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients with central finite differences for every
/// parameter group.
pub fn check_gradients(state: &ModelState, topo: &Topology, triples: &[Triple], epsilon: f64) -> GradCheck {
    let all: Vec<ParamGroup> = state.params.groups().iter().map(|(g, _)| *g).collect();
    check_gradients_for(state, topo, triples, epsilon, &all)
}

pub fn check_gradients_for(
    state: &ModelState,
    topo: &Topology,
    triples: &[Triple],
    epsilon: f64,
    groups: &[ParamGroup],
) -> GradCheck {
    let (_, grad) = loss_and_gradient(state, topo, triples, true);
    let grad = grad.expect("gradient requested");
    let mut probe = state.clone();
    let mut per_group = Vec::new();
    let mut checked = 0;
    let analytic_groups = grad.groups();
    for (gi, (group, analytic)) in analytic_groups.iter().enumerate() {
        if !groups.contains(group) {
            continue;
        }
        let mut worst: f64 = 0.0;
        for k in 0..analytic.len() {
            let original = probe.params.groups()[gi].1[k];
            probe.params.groups_mut()[gi].1[k] = original + epsilon;
            let plus = bpr_loss(&probe, topo, triples);
            probe.params.groups_mut()[gi].1[k] = original - epsilon;
            let minus = bpr_loss(&probe, topo, triples);
            probe.params.groups_mut()[gi].1[k] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(rel_error(analytic[k], numeric));
            checked += 1;
        }
        per_group.push((*group, worst));
    }
    let max_rel_error = per_group.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    GradCheck {
        max_rel_error,
        per_group,
        checked,
    }
}
