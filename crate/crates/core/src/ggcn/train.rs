use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::Serialize;

use super::grad::{bpr_loss, loss_and_gradient, Triple};
use super::{GgcnConfig, ModelState, Params, Topology};
use crate::error::{Error, Result};
use crate::ingest::Interaction;
use crate::rng::{self, Rng};

pub struct Adam {
    m: Params,
    v: Params,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &Params, config: &GgcnConfig) -> Self {
        Adam {
            m: Params::zeros_like(params),
            v: Params::zeros_like(params),
            t: 0,
            lr: config.lr,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let groups = params
            .groups_mut()
            .into_iter()
            .zip(grad.groups())
            .zip(self.m.groups_mut())
            .zip(self.v.groups_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in groups {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    /// Mean BPR term per triple plus the regulariser, per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub triples_per_epoch: usize,
}

/// One triple per positive per negative draw; negatives are uniform over
/// items the group has not interacted with. Groups inactive in `topo` are
/// skipped.
pub fn sample_triples(
    state: &ModelState,
    topo: &Topology,
    interactions: &[Interaction],
    r: &mut Rng,
) -> Vec<Triple> {
    let nv = state.num_items();
    let mut out = Vec::new();
    for it in interactions {
        let (Some(g), Some(pos)) = (state.group_index(&it.group_id), state.item_index(&it.item_id)) else {
            continue;
        };
        if !topo.is_active(g) {
            continue;
        }
        let hist = &state.history[g];
        if hist.len() >= nv {
            continue;
        }
        for _ in 0..state.config.negatives_per_positive {
            let mut tries = 0;
            loop {
                let neg = r.gen_range(0..nv);
                if neg != pos && hist.binary_search(&neg).is_err() {
                    out.push(Triple::new(g, pos, neg));
                    break;
                }
                tries += 1;
                if tries > 64 {
                    break;
                }
            }
        }
    }
    out
}

/// Mean BPR over every (positive, non-interacted negative) pair plus the
/// regulariser: the training objective without negative-sampling noise.
pub fn exhaustive_loss(state: &ModelState, topo: &Topology, interactions: &[Interaction]) -> f64 {
    let mut triples = Vec::new();
    for it in interactions {
        let (Some(g), Some(pos)) = (state.group_index(&it.group_id), state.item_index(&it.item_id)) else {
            continue;
        };
        if !topo.is_active(g) {
            continue;
        }
        for neg in 0..state.num_items() {
            if neg != pos && state.history[g].binary_search(&neg).is_err() {
                triples.push(Triple::new(g, pos, neg));
            }
        }
    }
    let reg = state.config.lambda * state.params.sq_norm();
    if triples.is_empty() {
        return reg;
    }
    (bpr_loss(state, topo, &triples) - reg) / triples.len() as f64 + reg
}

/// Adam on mini-batches of BPR triples, negatives resampled every epoch.
/// Ends with a refresh of every embedding under `topo`.
pub fn train(
    state: &mut ModelState,
    topo: &Topology,
    interactions: &[Interaction],
    config: &GgcnConfig,
    epochs: usize,
) -> Result<TrainReport> {
    config.validate()?;
    let mut report = TrainReport::default();
    if epochs == 0 {
        return Ok(report);
    }
    state.config = config.clone();
    let mut r = rng::seeded(rng::derive(config.seed, 0x7472_6169_6e));
    let mut adam = Adam::new(&state.params, config);
    for epoch in 0..epochs {
        let mut triples = sample_triples(state, topo, interactions, &mut r);
        triples.shuffle(&mut r);
        report.triples_per_epoch = triples.len();
        if triples.is_empty() {
            report.epoch_losses.push(0.0);
            continue;
        }
        let mut bpr_sum = 0.0;
        for batch in triples.chunks(config.batch_size) {
            let (loss, grad) = loss_and_gradient(state, topo, batch, true);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            bpr_sum += loss - config.lambda * state.params.sq_norm();
            adam.step(&mut state.params, &grad.expect("gradient requested"));
            report.steps += 1;
        }
        let reg = config.lambda * state.params.sq_norm();
        let mean = bpr_sum / triples.len() as f64 + reg;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        report.epoch_losses.push(mean);
    }
    state.refresh(topo);
    Ok(report)
}
