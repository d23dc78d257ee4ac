mod common;

use common::{clustered_benchmark, recall};
use grouprec::pipeline::{EngineConfig, Retriever};

fn lists(features: &[(String, Vec<f64>)], queries: &[Vec<f64>], use_index: bool) -> Vec<Vec<(String, f64)>> {
    let cfg = EngineConfig {
        use_index,
        ..EngineConfig::default()
    };
    Retriever::new(features, &cfg).unwrap().query_batch(queries, 20).unwrap()
}

#[test]
fn default_index_recall_on_separated_clusters() {
    let (groups, queries) = clustered_benchmark(11);
    let r = recall(&lists(&groups, &queries, true), &lists(&groups, &queries, false));
    println!("recall@20 = {r:.3}");
    assert!(r >= 0.9, "recall@20 {r:.3} below 0.9");
}

#[test]
fn indexed_and_exact_top1_agree() {
    let (groups, queries) = clustered_benchmark(12);
    let approx = lists(&groups, &queries, true);
    let exact = lists(&groups, &queries, false);
    let agree = approx.iter().zip(&exact).filter(|(a, e)| a[0].0 == e[0].0).count() as f64 / queries.len() as f64;
    println!("top-1 agreement = {agree:.3}");
    assert!(agree >= 0.9, "top-1 agreement {agree:.3} below 0.9");
}
