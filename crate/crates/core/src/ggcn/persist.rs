//! Versioned binary model file: 8-byte magic, u32 version, dimensions, ids,
//! then row-major f64 tensors. Little-endian.

use std::fs;
use std::path::Path;

use super::{GgcnConfig, ModelState, Params};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MODEL_MAGIC: &[u8; 8] = b"GGCNMODL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn write_model(state: &ModelState) -> Vec<u8> {
    let c = &state.config;
    let mut w = Writer::new();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_FORMAT_VERSION);
    for dim in [
        c.embed_dim,
        c.latent_dim,
        c.attr_dim,
        c.num_layers,
        state.num_groups(),
        state.num_items(),
    ] {
        w.len_u32(dim);
    }
    for x in [c.alpha_v, c.alpha_r, c.lr, c.lambda, c.adam_beta1, c.adam_beta2, c.adam_eps] {
        w.f64(x);
    }
    w.len_u32(c.negatives_per_positive);
    w.len_u32(c.batch_size);
    w.u64(c.seed);
    for id in state.group_ids.iter().chain(&state.item_ids) {
        w.str(id);
    }
    for (_, t) in state.params.groups() {
        w.f64s(t);
    }
    for m in [
        &state.group_attr,
        &state.item_attr,
        &state.group_emb,
        &state.item_emb0,
        &state.item_emb,
    ] {
        w.f64s(m.as_slice());
    }
    for list in state.history.iter().chain(&state.recent_groups) {
        w.len_u32(list.len());
        for &x in list {
            w.len_u32(x);
        }
    }
    w.buf
}

pub fn read_model(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader::new(bytes);
    if r.bytes(8)? != MODEL_MAGIC {
        return Err(Error::CorruptFile("bad model magic".into()));
    }
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let d = r.len()?;
    let latent_dim = r.len()?;
    let attr_dim = r.len()?;
    let num_layers = r.len()?;
    let ng = r.len()?;
    let nv = r.len()?;
    let config = GgcnConfig {
        embed_dim: d,
        latent_dim,
        attr_dim,
        num_layers,
        alpha_v: r.f64()?,
        alpha_r: r.f64()?,
        lr: r.f64()?,
        lambda: r.f64()?,
        adam_beta1: r.f64()?,
        adam_beta2: r.f64()?,
        adam_eps: r.f64()?,
        negatives_per_positive: r.len()?,
        batch_size: r.len()?,
        seed: r.u64()?,
    };
    let group_ids = (0..ng).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let item_ids = (0..nv).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let input = latent_dim + attr_dim;
    let mut mat = |rows: usize, cols: usize| -> Result<Matrix> { Ok(Matrix::from_vec(rows, cols, r.f64s(rows * cols)?)) };
    let w0 = mat(d, input)?;
    let b0 = mat(1, d)?.as_slice().to_vec();
    let h0 = mat(d, input)?;
    let beta0 = mat(1, d)?.as_slice().to_vec();
    let layers = (0..num_layers).map(|_| mat(d, 2 * d)).collect::<Result<Vec<_>>>()?;
    let group_latent = mat(ng, latent_dim)?;
    let item_latent = mat(nv, latent_dim)?;
    let group_attr = mat(ng, attr_dim)?;
    let item_attr = mat(nv, attr_dim)?;
    let group_emb = mat(ng, d)?;
    let item_emb0 = mat(nv, d)?;
    let item_emb = mat(nv, d)?;
    let params = Params {
        w0,
        b0,
        h0,
        beta0,
        layers,
        group_latent,
        item_latent,
    };
    let mut state = ModelState::from_params(config, group_ids, item_ids, params, group_attr, item_attr);
    state.group_emb = group_emb;
    state.item_emb0 = item_emb0;
    state.item_emb = item_emb;
    let mut lists = |n: usize, bound: usize| -> Result<Vec<Vec<usize>>> {
        (0..n)
            .map(|_| {
                let len = r.len()?;
                (0..len)
                    .map(|_| {
                        let x = r.len()?;
                        if x >= bound {
                            return Err(Error::CorruptFile("index out of range".into()));
                        }
                        Ok(x)
                    })
                    .collect()
            })
            .collect()
    };
    state.history = lists(ng, nv)?;
    state.recent_groups = lists(nv, ng)?;
    if r.remaining() != 0 {
        return Err(Error::CorruptFile("trailing bytes".into()));
    }
    Ok(state)
}

pub fn save_model(state: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, write_model(state)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}
