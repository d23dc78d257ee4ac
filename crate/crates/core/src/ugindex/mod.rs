//! Approximate top-K group search: inner-product relevance reduced to L2,
//! FastMap projection, Z-order keys, sorted linked blocks and a chained
//! universal hash table over the keys.

mod index;
mod persist;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sq_dist};
use crate::rng;

pub use index::{brute_force_topk, build_index, Block, GroupEntry, HashSlot, QueryStats, UgIndex};
pub use persist::{load_index, read_index, save_index, write_index, INDEX_FORMAT_VERSION, INDEX_MAGIC};

/// `2^61 − 1`
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// Pivot refinement hops when choosing FastMap reference pairs.
pub const PIVOT_HOPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    /// `k̄`
    pub projection_dim: usize,
    /// `m`
    pub bits_per_dim: u32,
    /// `B`, entries per block.
    pub block_size: usize,
    /// `T`; `None` means the next power of two ≥ 2N.
    pub bucket_count: Option<usize>,
    /// Hash coefficients in `[1, p)`; `None` draws them from `seed`.
    pub hash_a: Option<u64>,
    pub hash_b: Option<u64>,
    /// Entries scored per query before the block slack; `None` means
    /// `max(⌈4B/d⌉, K)` with `d` the feature length.
    pub scan_budget: Option<usize>,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            projection_dim: 8,
            bits_per_dim: 8,
            block_size: 64,
            bucket_count: None,
            hash_a: None,
            hash_b: None,
            scan_budget: None,
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.projection_dim == 0 || self.bits_per_dim == 0 || self.block_size == 0 {
            return bad("projection_dim, bits_per_dim and block_size must be positive");
        }
        if self.projection_dim as u64 * self.bits_per_dim as u64 > 64 {
            return bad("projection_dim * bits_per_dim must be at most 64");
        }
        if let Some(t) = self.bucket_count {
            if !t.is_power_of_two() {
                return bad("bucket_count must be a power of two");
            }
        }
        for c in [self.hash_a, self.hash_b].into_iter().flatten() {
            if c == 0 || c >= MERSENNE_61 {
                return bad("hash coefficients must lie in [1, p)");
            }
        }
        if self.scan_budget == Some(0) {
            return bad("scan_budget must be positive");
        }
        Ok(())
    }

    pub fn buckets_for(&self, n: usize) -> usize {
        self.bucket_count
            .unwrap_or_else(|| (2 * n).max(1).next_power_of_two())
    }

    /// `(a, b)`, seeded when not given.
    pub fn hash_coeffs(&self) -> (u64, u64) {
        let draw = |stream: u64| 1 + rng::mix64(rng::derive(self.seed, stream)) % (MERSENNE_61 - 1);
        (
            self.hash_a.unwrap_or_else(|| draw(0x6861_7368_61)),
            self.hash_b.unwrap_or_else(|| draw(0x6861_7368_62)),
        )
    }

    pub fn budget_for(&self, feature_dim: usize, k: usize) -> usize {
        let by_blocks = (4 * self.block_size).div_ceil(feature_dim.max(1));
        self.scan_budget.unwrap_or(by_blocks).max(k)
    }
}

/// `[z; √(M² − ‖z‖²)]`: squared distance to a query `[q; 0]` is
/// `M² + ‖q‖² − 2qᵀz`, so L2 order equals inner-product order.
pub fn mips_to_l2(z: &[f64], cap: f64) -> Result<Vec<f64>> {
    let n = norm(z);
    if n > cap * (1.0 + 1e-12) {
        return Err(Error::NormExceedsCap { norm: n, cap });
    }
    let mut out = z.to_vec();
    out.push((cap * cap - n * n).max(0.0).sqrt());
    Ok(out)
}

/// `[q; 0]`
pub fn query_to_l2(q: &[f64]) -> Vec<f64> {
    let mut out = q.to_vec();
    out.push(0.0);
    out
}

/// FastMap with standard squared residual distances.
#[derive(Debug, Clone, PartialEq)]
pub struct FastMap {
    /// Reference pair per dimension, in the input space.
    pub pivots: Vec<(Vec<f64>, Vec<f64>)>,
    /// Projected coordinates of each reference pair, for residuals.
    pivot_coords: Vec<(Vec<f64>, Vec<f64>)>,
    /// Residual distance between each reference pair.
    pub spans: Vec<f64>,
}

fn residual_sq(full_sq: f64, fa: &[f64], fb: &[f64], upto: usize) -> f64 {
    let mut d = full_sq;
    for j in 0..upto {
        let diff = fa[j] - fb[j];
        d -= diff * diff;
    }
    d.max(0.0)
}

/// Farthest-pair heuristic in the residual distance after `dim_index`
/// projected coordinates: from a seeded start, hop to the farthest point
/// [`PIVOT_HOPS`] times and return the last two points visited.
pub fn select_reference_points(points: &[Vec<f64>], coords: &[Vec<f64>], dim_index: usize, seed: u64) -> Result<(usize, usize)> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let dist = |a: usize, b: usize| {
        let full = sq_dist(&points[a], &points[b]);
        if dim_index == 0 {
            full
        } else {
            residual_sq(full, &coords[a], &coords[b], dim_index)
        }
    };
    let farthest = |from: usize| {
        let mut best = (from + 1) % n;
        let mut best_d = -1.0;
        for p in 0..n {
            let d = dist(from, p);
            if p != from && d > best_d {
                best = p;
                best_d = d;
            }
        }
        best
    };
    let start = (rng::mix64(rng::derive(seed, dim_index as u64)) % n as u64) as usize;
    let mut prev = start;
    let mut cur = farthest(start);
    for _ in 1..PIVOT_HOPS {
        let next = farthest(cur);
        if next == prev {
            break;
        }
        prev = cur;
        cur = next;
    }
    Ok((prev, cur))
}

impl FastMap {
    /// Fits `k` dimensions. With fewer than two points every coordinate is 0.
    pub fn fit(points: &[Vec<f64>], k: usize, seed: u64) -> Self {
        let mut fm = FastMap {
            pivots: Vec::with_capacity(k),
            pivot_coords: Vec::with_capacity(k),
            spans: Vec::with_capacity(k),
        };
        if points.len() < 2 {
            return fm;
        }
        let mut coords: Vec<Vec<f64>> = vec![Vec::with_capacity(k); points.len()];
        for i in 0..k {
            let (a, b) = select_reference_points(points, &coords, i, seed).expect("two points");
            let span = residual_sq(sq_dist(&points[a], &points[b]), &coords[a], &coords[b], i).sqrt();
            fm.pivots.push((points[a].clone(), points[b].clone()));
            fm.pivot_coords.push((coords[a].clone(), coords[b].clone()));
            fm.spans.push(span);
            for c in 0..points.len() {
                let x = fm.coordinate(i, &points[c], &coords[c]);
                coords[c].push(x);
            }
        }
        fm
    }

    pub fn dims(&self) -> usize {
        self.spans.len()
    }

    /// `F_i(a) = (D²(x_i,a) + D²(x_i,x_i') − D²(x_i',a)) / (2·D(x_i,x_i'))`
    /// in residual distances; 0 when the pair has collapsed.
    fn coordinate(&self, i: usize, a: &[f64], fa: &[f64]) -> f64 {
        let span = self.spans[i];
        if span <= 0.0 {
            return 0.0;
        }
        let (x, y) = &self.pivots[i];
        let (fx, fy) = &self.pivot_coords[i];
        let d_xa = residual_sq(sq_dist(x, a), fx, fa, i);
        let d_ya = residual_sq(sq_dist(y, a), fy, fa, i);
        (d_xa + span * span - d_ya) / (2.0 * span)
    }

    /// Projection of `a`; `k` coordinates, zero-padded when the fit saw too
    /// few points.
    pub fn project(&self, a: &[f64], k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(k);
        for i in 0..self.dims() {
            let x = self.coordinate(i, a, &out);
            out.push(x);
        }
        out.resize(k, 0.0);
        out
    }

    pub(crate) fn from_parts(pivots: Vec<(Vec<f64>, Vec<f64>)>, pivot_coords: Vec<(Vec<f64>, Vec<f64>)>, spans: Vec<f64>) -> Self {
        FastMap {
            pivots,
            pivot_coords,
            spans,
        }
    }

    pub(crate) fn pivot_coords(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.pivot_coords
    }
}

/// Per-dimension affine quantisation to `m` bits, calibrated on the built
/// points.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub bits: u32,
}

impl Quantizer {
    pub fn calibrate(points: &[Vec<f64>], dims: usize, bits: u32) -> Self {
        let mut mins = vec![0.0; dims];
        let mut maxs = vec![0.0; dims];
        for k in 0..dims {
            let vals = points.iter().map(|p| p[k]);
            mins[k] = vals.clone().fold(f64::INFINITY, f64::min);
            maxs[k] = vals.fold(f64::NEG_INFINITY, f64::max);
            if !mins[k].is_finite() {
                mins[k] = 0.0;
                maxs[k] = 0.0;
            }
        }
        Quantizer { mins, maxs, bits }
    }

    /// Cells in `[0, 2^m)`, out-of-range values clamped.
    pub fn cells(&self, x: &[f64]) -> Vec<u64> {
        let levels = 1u64 << self.bits;
        x.iter()
            .enumerate()
            .map(|(k, &v)| {
                let span = self.maxs[k] - self.mins[k];
                if span <= 0.0 || !v.is_finite() {
                    return 0;
                }
                let t = ((v - self.mins[k]) / span * levels as f64).floor();
                t.clamp(0.0, (levels - 1) as f64) as u64
            })
            .collect()
    }

    pub fn key(&self, x: &[f64]) -> u64 {
        interleave(&self.cells(x), self.bits)
    }
}

/// Interleaves `m`-bit cells from the most significant bit level down;
/// within a level dimension 0 contributes the highest bit.
pub fn interleave(cells: &[u64], bits: u32) -> u64 {
    let mut key = 0u64;
    for level in (0..bits).rev() {
        for &c in cells {
            key = (key << 1) | ((c >> level) & 1);
        }
    }
    key
}

/// `((a·k + b) mod p) mod T` with a 128-bit intermediate.
pub fn hash_key(key: u64, a: u64, b: u64, buckets: usize) -> usize {
    let p = MERSENNE_61 as u128;
    let h = (a as u128 * key as u128 + b as u128) % p;
    (h % buckets as u128) as usize
}

/// Stored feature for a group: `[(1−α_r)·h_g ; α_r·ŝ_g]`, so that its inner
/// product with [`item_query`] is the full relevance score.
pub fn group_feature(history_emb: &[f64], influence: f64, alpha_r: f64) -> Vec<f64> {
    let mut f: Vec<f64> = history_emb.iter().map(|x| (1.0 - alpha_r) * x).collect();
    f.push(alpha_r * influence);
    f
}

/// `[e_v ; 1]`
pub fn item_query(item_emb: &[f64]) -> Vec<f64> {
    let mut q = item_emb.to_vec();
    q.push(1.0);
    q
}

pub(crate) fn score(query: &[f64], feature: &[f64]) -> f64 {
    dot(query, feature)
}

#[cfg(test)]
mod tests;
