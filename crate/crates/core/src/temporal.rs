//! Temporal extension: one group model per snapshot (long-term), a
//! fine-tuned copy on the newest snapshot (short-term), and a recurrent
//! autoencoder that predicts each group's next profile.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ges::SampledSubgraph;
use crate::ggcn::{self, GgcnConfig, ModelState, Topology};
use crate::ingest::{Greg, Interaction, TemporalSplit};
use crate::linalg::{axpy, dot, Matrix};

/// Long-term and short-term embeddings of one group at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupProfile {
    pub group_id: String,
    pub time_index: usize,
    pub long_term: Vec<f64>,
    pub short_term: Vec<f64>,
    combined: Vec<f64>,
}

impl GroupProfile {
    pub fn new(group_id: impl Into<String>, time_index: usize, long_term: Vec<f64>, short_term: Vec<f64>) -> Self {
        assert_eq!(long_term.len(), short_term.len(), "profile halves differ in length");
        let mut combined = long_term.clone();
        combined.extend_from_slice(&short_term);
        GroupProfile {
            group_id: group_id.into(),
            time_index,
            long_term,
            short_term,
            combined,
        }
    }

    /// `long_term ‖ short_term`
    pub fn combined(&self) -> &[f64] {
        &self.combined
    }
}

/// Trains `state_1..state_T`, each warm-started from the previous one, on
/// the cumulative interactions `R_1..R_t` with `G_new = R_t`. With
/// `subgraphs`, state `t` aggregates over the sampled subgraph `G_t` and is
/// refreshed over the full graph afterwards.
pub fn train_snapshot_sequence(
    split: &TemporalSplit,
    greg: &Greg,
    initial: &ModelState,
    config: &GgcnConfig,
    epochs: usize,
    subgraphs: Option<&[SampledSubgraph]>,
) -> Result<Vec<ModelState>> {
    let t_max = split.num_snapshots();
    if t_max == 0 {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    if let Some(s) = subgraphs {
        if s.len() != t_max {
            return Err(Error::InvalidConfig(format!(
                "{} subgraphs for {t_max} snapshots",
                s.len()
            )));
        }
    }
    let full = Topology::full(greg);
    let mut states = Vec::with_capacity(t_max);
    let mut state = initial.clone();
    for t in 0..t_max {
        let cumulative = split.cumulative(t);
        state.observe(&cumulative, &split.snapshots[t]);
        match subgraphs {
            Some(s) => {
                ggcn::train(&mut state, &s[t].topology(greg), &cumulative, config, epochs)?;
                state.refresh(&full);
            }
            None => {
                ggcn::train(&mut state, &full, &cumulative, config, epochs)?;
            }
        }
        states.push(state.clone());
    }
    Ok(states)
}

/// Group embeddings after `epochs` more epochs on `recent` alone. The
/// input state is left untouched.
pub fn fine_tune_short_term(
    state: &ModelState,
    topo: &Topology,
    recent: &[Interaction],
    config: &GgcnConfig,
    epochs: usize,
) -> Result<Matrix> {
    Ok(fine_tune(state, topo, recent, config, epochs)?.group_emb)
}

/// The fine-tuned copy behind [`fine_tune_short_term`].
pub fn fine_tune(
    state: &ModelState,
    topo: &Topology,
    recent: &[Interaction],
    config: &GgcnConfig,
    epochs: usize,
) -> Result<ModelState> {
    let mut tuned = state.clone();
    if epochs == 0 || recent.is_empty() {
        return Ok(tuned);
    }
    let cfg = GgcnConfig {
        seed: crate::rng::derive(config.seed, 0x7368_6f72_74),
        ..config.clone()
    };
    ggcn::train(&mut tuned, topo, recent, &cfg, epochs)?;
    Ok(tuned)
}

/// Per-group profile sequences, one entry per time point.
pub fn build_profiles(states: &[ModelState], short_terms: &[Matrix]) -> BTreeMap<String, Vec<GroupProfile>> {
    assert_eq!(states.len(), short_terms.len());
    let mut out: BTreeMap<String, Vec<GroupProfile>> = BTreeMap::new();
    for (t, (state, short)) in states.iter().zip(short_terms).enumerate() {
        for (g, id) in state.group_ids.iter().enumerate() {
            out.entry(id.clone()).or_default().push(GroupProfile::new(
                id.clone(),
                t + 1,
                state.group_emb.row(g).to_vec(),
                short.row(g).to_vec(),
            ));
        }
    }
    out
}

pub fn write_profiles_csv<W: Write>(profiles: &BTreeMap<String, Vec<GroupProfile>>, mut out: W) -> Result<()> {
    writeln!(out, "group_id,t,coord_index,value")?;
    for (id, seq) in profiles {
        for p in seq {
            for (k, x) in p.combined().iter().enumerate() {
                writeln!(out, "{id},{},{k},{x}", p.time_index)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RnnConfig {
    /// `None` means twice the embedding size, i.e. the profile length.
    pub hidden_dim: Option<usize>,
    pub lr: f64,
    pub lambda: f64,
    pub epochs: usize,
    /// Carried for reproducibility records; initialisation is deterministic.
    pub seed: u64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        RnnConfig {
            hidden_dim: None,
            lr: 1e-2,
            lambda: 1e-5,
            epochs: 100,
            seed: 0,
        }
    }
}

/// Elman encoder `h_t = tanh(W_x·x_t + W_h·h_{t−1} + b)` with an affine
/// decoder `y = D·h_T + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnAutoencoder {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b: Vec<f64>,
    pub dec: Matrix,
    pub c: Vec<f64>,
}

/// Initial input scale; the decoder carries its inverse so the untrained
/// model starts close to repeating the last profile.
const INPUT_SCALE: f64 = 0.1;

impl RnnAutoencoder {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        RnnAutoencoder {
            w_x: Matrix::zeros(hidden_dim, input_dim),
            w_h: Matrix::zeros(hidden_dim, hidden_dim),
            b: vec![0.0; hidden_dim],
            dec: Matrix::zeros(input_dim, hidden_dim),
            c: vec![0.0; input_dim],
        }
    }

    /// `W_x = s·I`, `D = I/s`, everything else zero: for small inputs the
    /// prediction is approximately the last profile.
    pub fn near_identity(input_dim: usize, hidden_dim: usize) -> Self {
        let mut m = Self::zeros(input_dim, hidden_dim);
        for i in 0..input_dim.min(hidden_dim) {
            m.w_x.set(i, i, INPUT_SCALE);
            m.dec.set(i, i, 1.0 / INPUT_SCALE);
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_x.rows()
    }

    fn tensors(&self) -> [&[f64]; 5] {
        [
            self.w_x.as_slice(),
            self.w_h.as_slice(),
            &self.b,
            self.dec.as_slice(),
            &self.c,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w_x.as_mut_slice(),
            self.w_h.as_mut_slice(),
            &mut self.b,
            self.dec.as_mut_slice(),
            &mut self.c,
        ]
    }

    fn sq_norm(&self) -> f64 {
        self.tensors().iter().map(|t| dot(t, t)).sum()
    }

    /// Hidden states `h_1..h_T`.
    fn encode(&self, seq: &[&[f64]]) -> Vec<Vec<f64>> {
        let h_dim = self.hidden_dim();
        let mut hs: Vec<Vec<f64>> = Vec::with_capacity(seq.len());
        let mut a = vec![0.0; h_dim];
        for x in seq {
            self.w_x.matvec_into(x, &mut a);
            if let Some(prev) = hs.last() {
                let mut rec = vec![0.0; h_dim];
                self.w_h.matvec_into(prev, &mut rec);
                axpy(1.0, &rec, &mut a);
            }
            axpy(1.0, &self.b, &mut a);
            hs.push(a.iter().map(|v| v.tanh()).collect());
        }
        hs
    }

    /// Decoded next profile after reading `seq`. An empty sequence decodes
    /// the zero hidden state.
    pub fn predict(&self, seq: &[&[f64]]) -> Vec<f64> {
        let hs = self.encode(seq);
        let h = hs.last().cloned().unwrap_or_else(|| vec![0.0; self.hidden_dim()]);
        let mut y = self.dec.matvec(&h);
        axpy(1.0, &self.c, &mut y);
        y
    }

    /// Mean squared error over every (prefix, next profile) pair plus
    /// `λ‖θ‖²`, and optionally its gradient.
    pub fn loss_and_gradient(&self, sequences: &[Vec<Vec<f64>>], lambda: f64, want_grad: bool) -> (f64, Option<Self>) {
        let dim = self.input_dim();
        let examples: usize = sequences.iter().map(|s| s.len().saturating_sub(1)).sum();
        let mut grad = want_grad.then(|| Self::zeros(dim, self.hidden_dim()));
        let mut loss = lambda * self.sq_norm();
        if examples == 0 {
            return (loss, grad);
        }
        let norm = 1.0 / (examples * dim) as f64;
        for seq in sequences {
            for k in 1..seq.len() {
                let prefix: Vec<&[f64]> = seq[..k].iter().map(Vec::as_slice).collect();
                let hs = self.encode(&prefix);
                let h = &hs[k - 1];
                let mut y = self.dec.matvec(h);
                axpy(1.0, &self.c, &mut y);
                let err: Vec<f64> = y.iter().zip(&seq[k]).map(|(a, b)| a - b).collect();
                loss += norm * dot(&err, &err);
                let Some(g) = grad.as_mut() else { continue };
                let gy: Vec<f64> = err.iter().map(|e| 2.0 * norm * e).collect();
                g.dec.add_outer(&gy, h);
                axpy(1.0, &gy, &mut g.c);
                let mut gh = vec![0.0; self.hidden_dim()];
                self.dec.matvec_t_acc(&gy, &mut gh);
                for t in (0..k).rev() {
                    let ga: Vec<f64> = gh.iter().zip(&hs[t]).map(|(g, h)| g * (1.0 - h * h)).collect();
                    g.w_x.add_outer(&ga, prefix[t]);
                    axpy(1.0, &ga, &mut g.b);
                    gh.iter_mut().for_each(|x| *x = 0.0);
                    if t > 0 {
                        g.w_h.add_outer(&ga, &hs[t - 1]);
                        self.w_h.matvec_t_acc(&ga, &mut gh);
                    }
                }
            }
        }
        if let Some(g) = grad.as_mut() {
            if lambda != 0.0 {
                for (gt, pt) in g.tensors_mut().into_iter().zip(self.tensors()) {
                    axpy(2.0 * lambda, pt, gt);
                }
            }
        }
        (loss, grad)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RnnReport {
    pub epoch_losses: Vec<f64>,
}

/// Full-batch Adam on the next-profile MSE over every group sequence.
pub fn train_rnn(sequences: &[Vec<Vec<f64>>], config: &RnnConfig) -> Result<(RnnAutoencoder, RnnReport)> {
    let longest = sequences.iter().map(Vec::len).max().unwrap_or(0);
    if longest < 2 {
        return Err(Error::SequenceTooShort { needed: 2, have: longest });
    }
    let dim = sequences
        .iter()
        .find_map(|s| s.first().map(Vec::len))
        .unwrap_or(0);
    let hidden = config.hidden_dim.unwrap_or(dim).max(1);
    let mut model = RnnAutoencoder::near_identity(dim, hidden);
    let mut report = RnnReport::default();
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut m: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut v: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    for epoch in 0..config.epochs {
        let (loss, grad) = model.loss_and_gradient(sequences, config.lambda, true);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        report.epoch_losses.push(loss);
        let grad = grad.expect("gradient requested");
        let step = (epoch + 1) as i32;
        let bc1 = 1.0 - f64::powi(b1, step);
        let bc2 = 1.0 - f64::powi(b2, step);
        for (i, (p, g)) in model.tensors_mut().into_iter().zip(grad.tensors()).enumerate() {
            for k in 0..p.len() {
                m[i][k] = b1 * m[i][k] + (1.0 - b1) * g[k];
                v[i][k] = b2 * v[i][k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= config.lr * (m[i][k] / bc1) / ((v[i][k] / bc2).sqrt() + eps);
            }
        }
    }
    Ok((model, report))
}

/// Profile sequences as plain vectors, keyed like the input map.
pub fn sequences_of(profiles: &BTreeMap<String, Vec<GroupProfile>>) -> Vec<Vec<Vec<f64>>> {
    profiles
        .values()
        .map(|seq| seq.iter().map(|p| p.combined().to_vec()).collect())
        .collect()
}

/// Predicted combined profile at `T+1` for every group.
pub fn predict_next(profiles: &BTreeMap<String, Vec<GroupProfile>>, rnn: &RnnAutoencoder) -> BTreeMap<String, Vec<f64>> {
    profiles
        .par_iter()
        .map(|(id, seq)| {
            let xs: Vec<&[f64]> = seq.iter().map(GroupProfile::combined).collect();
            (id.clone(), rnn.predict(&xs))
        })
        .collect()
}

/// Collapses a predicted `long ‖ short` profile to one group embedding by
/// averaging the halves.
pub fn profile_embedding(profile: &[f64]) -> Vec<f64> {
    let d = profile.len() / 2;
    (0..d).map(|k| 0.5 * (profile[k] + profile[d + k])).collect()
}
