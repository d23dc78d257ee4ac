#![allow(dead_code)]

use grouprec::synthetic::clustered_vectors;

pub const BENCH_GROUPS: usize = 5000;
pub const BENCH_QUERIES: usize = 1000;
pub const BENCH_DIM: usize = 16;
pub const BENCH_CLUSTERS: usize = 250;
pub const BENCH_SPREAD: f64 = 0.02;

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Unit-norm group features around shared cluster centres, and queries
/// drawn from the same clusters.
pub fn clustered_benchmark(seed: u64) -> (Vec<(String, Vec<f64>)>, Vec<Vec<f64>>) {
    let (pts, _) = clustered_vectors(BENCH_GROUPS + BENCH_QUERIES, BENCH_DIM, BENCH_CLUSTERS, BENCH_SPREAD, seed);
    let groups = (0..BENCH_GROUPS).map(|i| (format!("g{i:05}"), unit(pts.row(i)))).collect();
    let queries = (BENCH_GROUPS..BENCH_GROUPS + BENCH_QUERIES).map(|i| pts.row(i).to_vec()).collect();
    (groups, queries)
}

/// Mean overlap between approximate and exact top-k lists.
pub fn recall(approx: &[Vec<(String, f64)>], exact: &[Vec<(String, f64)>]) -> f64 {
    let mut hit = 0;
    let mut total = 0;
    for (a, e) in approx.iter().zip(exact) {
        total += e.len();
        hit += a.iter().filter(|(g, _)| e.iter().any(|(h, _)| h == g)).count();
    }
    hit as f64 / total.max(1) as f64
}
