//! End-to-end runs: load, train over snapshots (optionally on sampled
//! subgraphs), predict next-step group embeddings, score influence, index
//! group features, answer item streams and evaluate.

mod config;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use config::EngineConfig;
pub use metrics::{
    hr_at_k, ndcg_at_k, write_metrics_csv, write_metrics_table, write_timings_csv, MetricsReport, TestCase, Timings,
};

use crate::error::{Error, Result};
use crate::ges::{run_ges, GesInputs, ProbabilityMode, SampledSubgraph};
use crate::ggcn::{refreshed_item_embedding, ModelState, Topology};
use crate::influence::{
    build_diiprog, edge_similarities, influence_scores, sigma_inf, ActivityCounts, Diiprog, PropagationParams,
};
use crate::ingest::{build_greg, load_interactions, split_temporal, Dataset, Greg, LogFormat, TemporalSplit};
use crate::linalg::Matrix;
use crate::temporal::{
    build_profiles, fine_tune, predict_next, profile_embedding, sequences_of, train_rnn, train_snapshot_sequence,
    GroupProfile,
};
use crate::ugindex::{brute_force_topk, build_index, group_feature, item_query, UgIndex};

/// Item id under which the catalog-mean item's propagation graph is built.
pub const CATALOG_ITEM: &str = "*catalog*";

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_TABLE_FILE: &str = "metrics_table.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Reads the interaction log and the optional membership and tag tables.
pub fn load_dataset(config: &EngineConfig) -> Result<Dataset> {
    let path = config
        .interactions
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("interactions path is not set".into()))?;
    let mut ds = load_interactions(path, LogFormat::Csv)?;
    if let Some(p) = &config.memberships {
        ds.load_memberships(p)?;
    }
    if let Some(p) = &config.group_tags {
        ds.load_group_tags(p)?;
    }
    if let Some(p) = &config.item_tags {
        ds.load_item_tags(p)?;
    }
    Ok(ds)
}

/// A trained engine, frozen for recommendation.
#[derive(Debug, Clone)]
pub struct Engine {
    pub config: EngineConfig,
    pub greg: Greg,
    pub split: TemporalSplit,
    /// Last snapshot's state with the predicted next-step group embeddings.
    pub state: ModelState,
    pub profiles: BTreeMap<String, Vec<GroupProfile>>,
    pub subgraphs: Option<Vec<SampledSubgraph>>,
    pub sims: Vec<f64>,
    pub counts: ActivityCounts,
    /// `ŝ_g` per group in graph order; zeros without the cascade model.
    pub influence: Vec<f64>,
    /// Stored index features `[(1−α_r)h_g ; α_r ŝ_g]` in graph order.
    pub features: Vec<(String, Vec<f64>)>,
    pub timings: Timings,
}

impl Engine {
    pub fn fit(config: &EngineConfig, dataset: &Dataset) -> Result<Engine> {
        config.validate()?;
        let mut timings = Timings::default();

        let t = Instant::now();
        let greg = build_greg(dataset, config.min_shared_users);
        let split = split_temporal(dataset, config.train_fraction, config.num_snapshots)?;
        timings.record("graph", t);

        let gcfg = config.ggcn_config();
        let mut initial = ModelState::for_dataset(gcfg.clone(), dataset)?;
        initial.init_embeddings()?;
        if initial.group_ids.as_slice() != greg.nodes() {
            return Err(Error::InvalidConfig("model and graph group orders differ".into()));
        }
        let full = Topology::full(&greg);

        let subgraphs = if config.use_ges && greg.edge_count() > 0 {
            let t = Instant::now();
            let layer_inputs = match config.sampler.mode {
                ProbabilityMode::Exact => {
                    let mut layers = initial.layer_embeddings(&full);
                    layers.pop();
                    Some(layers)
                }
                ProbabilityMode::Approximate => None,
            };
            let inputs = GesInputs {
                features: &initial.group_emb,
                layer_inputs: layer_inputs.as_deref(),
            };
            let s = run_ges(&split, &greg, &inputs, &config.sampler_config())?;
            timings.record("sampling", t);
            Some(s)
        } else {
            None
        };

        let t = Instant::now();
        let states = train_snapshot_sequence(&split, &greg, &initial, &gcfg, config.epochs, subgraphs.as_deref())?;
        let short_terms = states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let topo = match &subgraphs {
                    Some(sg) => sg[i].topology(&greg),
                    None => full.clone(),
                };
                let mut tuned = fine_tune(s, &topo, &split.snapshots[i], &gcfg, config.short_term_epochs)?;
                if subgraphs.is_some() {
                    tuned.refresh(&full);
                }
                Ok(tuned.group_emb)
            })
            .collect::<Result<Vec<Matrix>>>()?;
        timings.record("training", t);

        let t = Instant::now();
        let profiles = build_profiles(&states, &short_terms);
        let mut state = states.last().expect("at least one snapshot").clone();
        if states.len() >= 2 && config.rnn.epochs > 0 {
            let (rnn, _) = train_rnn(&sequences_of(&profiles), &config.rnn_config())?;
            let next = predict_next(&profiles, &rnn);
            let mut emb = state.group_emb.clone();
            for (g, id) in state.group_ids.iter().enumerate() {
                emb.row_mut(g).copy_from_slice(&profile_embedding(&next[id]));
            }
            set_group_embeddings(&mut state, emb);
        }
        timings.record("temporal", t);

        let mut engine = Engine {
            config: config.clone(),
            greg,
            split,
            state,
            profiles,
            subgraphs,
            sims: Vec::new(),
            counts: ActivityCounts::default(),
            influence: Vec::new(),
            features: Vec::new(),
            timings,
        };
        engine.influence_stage()?;
        Ok(engine)
    }

    /// Recomputes `ŝ_g` and the stored features from the trained state
    /// under the current propagation settings.
    fn influence_stage(&mut self) -> Result<()> {
        let t = Instant::now();
        let params = self.config.propagation_params();
        let greg = &self.greg;
        let state = &self.state;
        self.sims = edge_similarities(greg, &state.group_emb)?;
        self.counts = ActivityCounts::from_split(greg, &self.split, params.recent_window);
        self.influence = if self.config.use_dyic {
            let centroid = column_mean(&state.item_emb);
            let graph = build_diiprog(greg, &state.group_emb, CATALOG_ITEM, &centroid, &self.sims, &self.counts, &params)?;
            influence_scores(&graph, &params)?
        } else {
            vec![0.0; greg.node_count()]
        };
        let alpha_r = state.config.alpha_r;
        self.features = (0..greg.node_count())
            .map(|g| {
                let f = group_feature(&state.history_embedding(g), self.influence[g], alpha_r);
                (state.group_ids[g].clone(), f)
            })
            .collect();
        self.timings.record("influence", t);
        Ok(())
    }

    /// Same trained model under other propagation settings; only the
    /// influence stage is rerun.
    pub fn with_propagation(&self, propagation: PropagationParams, use_dyic: bool) -> Result<Engine> {
        let mut engine = self.clone();
        engine.config.propagation = propagation;
        engine.config.use_dyic = use_dyic;
        engine.config.validate()?;
        engine.timings.stages.retain(|(s, _)| s != "influence");
        engine.influence_stage()?;
        Ok(engine)
    }

    /// Query vectors `[e_v ; 1]` with `e_v` refreshed from the groups that
    /// recently took the item.
    pub fn item_queries(&self, items: &[String]) -> Result<Vec<Vec<f64>>> {
        items
            .iter()
            .map(|v| Ok(item_query(&self.state.update_item_embedding(v)?)))
            .collect()
    }

    pub fn retriever(&self) -> Result<Retriever> {
        Retriever::new(&self.features, &self.config)
    }

    /// Propagation graph for `item` under `params`.
    pub fn item_graph(&self, item: &str, params: &PropagationParams) -> Result<Diiprog> {
        let emb = self.state.update_item_embedding(item)?;
        build_diiprog(&self.greg, &self.state.group_emb, item, &emb, &self.sims, &self.counts, params)
    }

    /// Held-out interactions whose group and item the model knows.
    pub fn test_pairs(&self) -> Vec<(String, String)> {
        self.split
            .test_set
            .iter()
            .filter(|it| self.state.group_index(&it.group_id).is_some() && self.state.item_index(&it.item_id).is_some())
            .map(|it| (it.item_id.clone(), it.group_id.clone()))
            .collect()
    }
}

/// Replaces `e_g` and recomputes `e_v`, which averages recent groups'
/// embeddings.
fn set_group_embeddings(state: &mut ModelState, emb: Matrix) {
    state.group_emb = emb;
    for v in 0..state.num_items() {
        let e = refreshed_item_embedding(
            state.item_emb0.row(v),
            &state.recent_groups[v],
            &state.group_emb,
            state.config.alpha_v,
        );
        state.item_emb.row_mut(v).copy_from_slice(&e);
    }
}

fn column_mean(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    if m.rows() == 0 {
        return out;
    }
    for r in 0..m.rows() {
        for (o, x) in out.iter_mut().zip(m.row(r)) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|x| *x /= m.rows() as f64);
    out
}

/// Indexed or exhaustive top-K search over stored group features.
#[derive(Debug, Clone)]
pub enum Retriever {
    Index(UgIndex),
    Exact(Vec<(String, Vec<f64>)>),
}

impl Retriever {
    pub fn new(features: &[(String, Vec<f64>)], config: &EngineConfig) -> Result<Retriever> {
        if config.use_index {
            Ok(Retriever::Index(build_index(features, &config.index_config())?))
        } else {
            Ok(Retriever::Exact(features.to_vec()))
        }
    }

    pub fn query_batch(&self, queries: &[Vec<f64>], k: usize) -> Result<Vec<Vec<(String, f64)>>> {
        match self {
            Retriever::Index(ix) => ix.query_batch(queries, k),
            Retriever::Exact(groups) => Ok(queries.par_iter().map(|q| brute_force_topk(groups, q, k)).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationBatch {
    pub items: Vec<String>,
    /// Per item, `(group, relevance)` best first.
    pub lists: Vec<Vec<(String, f64)>>,
    pub timings: Timings,
}

/// Top-`k` groups for each incoming item.
pub fn recommend_stream(engine: &Engine, retriever: &Retriever, items: &[String], k: usize) -> Result<RecommendationBatch> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let mut timings = Timings::default();
    let t = Instant::now();
    let queries = engine.item_queries(items)?;
    timings.record("embed", t);
    let t = Instant::now();
    let lists = retriever.query_batch(&queries, k)?;
    timings.record("retrieve", t);
    Ok(RecommendationBatch {
        items: items.to_vec(),
        lists,
        timings,
    })
}

pub fn write_recommendations_csv<W: Write>(batch: &RecommendationBatch, mut out: W) -> Result<()> {
    writeln!(out, "item_id,rank,group_id,score")?;
    for (item, list) in batch.items.iter().zip(&batch.lists) {
        for (r, (g, s)) in list.iter().enumerate() {
            writeln!(out, "{item},{},{g},{s}", r + 1)?;
        }
    }
    Ok(())
}

/// HR and NDCG over the held-out interactions with full-catalog ranking,
/// and σ_inf of each test item's top-`k` groups at the fixed evaluation
/// threshold.
pub fn evaluate(engine: &Engine, retriever: &Retriever) -> Result<MetricsReport> {
    let cfg = &engine.config;
    let pairs = engine.test_pairs();
    let items: Vec<String> = pairs
        .iter()
        .map(|(v, _)| v.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let batch = recommend_stream(engine, retriever, &items, cfg.max_k())?;
    let mut timings = batch.timings.clone();
    let ranked: BTreeMap<&str, Vec<String>> = items
        .iter()
        .zip(&batch.lists)
        .map(|(v, list)| (v.as_str(), list.iter().map(|(g, _)| g.clone()).collect()))
        .collect();
    let cases: Vec<TestCase<'_>> = pairs
        .iter()
        .map(|(v, g)| TestCase {
            ranked: &ranked[v.as_str()],
            truth: g,
        })
        .collect();
    let mut ks = cfg.k_list.clone();
    ks.sort_unstable();
    ks.dedup();
    let hr = ks.iter().map(|&k| hr_at_k(&cases, k)).collect();
    let ndcg = ks.iter().map(|&k| ndcg_at_k(&cases, k)).collect();

    let t = Instant::now();
    let params = cfg.evaluation_params();
    let graphs = items
        .par_iter()
        .map(|v| engine.item_graph(v, &params))
        .collect::<Result<Vec<_>>>()?;
    let seeded: Vec<(&Diiprog, Vec<usize>)> = graphs
        .iter()
        .zip(&batch.lists)
        .map(|(graph, list)| {
            let seeds = list
                .iter()
                .take(cfg.k)
                .filter_map(|(g, _)| graph.group_index(g))
                .collect();
            (graph, seeds)
        })
        .collect();
    let sigma = sigma_inf(&seeded, &params)?;
    timings.record("influence_eval", t);

    Ok(MetricsReport {
        ks,
        hr,
        ndcg,
        sigma_inf: sigma,
        sigma_k: cfg.k,
        cases: cases.len(),
        items: items.len(),
        timings,
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    command: &'a str,
    config_hash: String,
    config: BTreeMap<&'static str, String>,
    timings: BTreeMap<String, f64>,
    outputs: Vec<String>,
}

/// Writes `manifest.json` into the output directory.
pub fn write_manifest(config: &EngineConfig, command: &str, timings: &Timings, outputs: &[&str]) -> Result<PathBuf> {
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_hash: config.hash(),
        config: config.entries().into_iter().collect(),
        timings: timings.stages.iter().cloned().collect(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let path = config.out.join(MANIFEST_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(path)
}

/// Buffered file writer, creating parent directories.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Trains, evaluates and writes the metric report, the plot table, the
/// timing table and the run manifest into `config.out`.
pub fn run_evaluation(config: &EngineConfig) -> Result<MetricsReport> {
    let t = Instant::now();
    let dataset = load_dataset(config)?;
    let mut timings = Timings::default();
    timings.record("load", t);
    let engine = Engine::fit(config, &dataset)?;
    timings.extend(&engine.timings);
    let t = Instant::now();
    let retriever = engine.retriever()?;
    timings.record("index", t);
    let mut report = evaluate(&engine, &retriever)?;
    timings.extend(&report.timings);
    report.timings = timings;
    write_report(config, &report)?;
    Ok(report)
}

pub fn write_report(config: &EngineConfig, report: &MetricsReport) -> Result<()> {
    let out = &config.out;
    write_metrics_csv(report, create(&out.join(METRICS_FILE))?)?;
    write_metrics_table(report, create(&out.join(METRICS_TABLE_FILE))?)?;
    write_timings_csv(&report.timings, create(&out.join(TIMINGS_FILE))?)?;
    write_manifest(
        config,
        "evaluate",
        &report.timings,
        &[METRICS_FILE, METRICS_TABLE_FILE, TIMINGS_FILE],
    )?;
    Ok(())
}

/// `group_id,f0,f1,…` rows.
pub fn write_features_csv<W: Write>(features: &[(String, Vec<f64>)], mut out: W) -> Result<()> {
    let dim = features.first().map_or(0, |(_, f)| f.len());
    let header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    writeln!(out, "group_id{}{}", if dim > 0 { "," } else { "" }, header.join(","))?;
    for (id, f) in features {
        let vals: Vec<String> = f.iter().map(f64::to_string).collect();
        writeln!(out, "{id},{}", vals.join(","))?;
    }
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).filter(|s| !s.is_empty()).ok_or(Error::MalformedRow(i + 2))?;
        let f = rec
            .iter()
            .skip(1)
            .map(|x| x.trim().parse::<f64>().map_err(|_| Error::MalformedRow(i + 2)))
            .collect::<Result<Vec<f64>>>()?;
        out.push((id.to_owned(), f));
    }
    Ok(out)
}
