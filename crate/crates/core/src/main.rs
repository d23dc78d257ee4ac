use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use grouprec::ggcn::{load_model, save_model};
use grouprec::influence::{build_diiprog, edge_similarities, ActivityCounts};
use grouprec::ingest::{build_greg, split_temporal, Interaction};
use grouprec::pipeline::{
    create, load_dataset, read_features_csv, write_features_csv, write_manifest, write_metrics_table,
    write_recommendations_csv, write_timings_csv, Engine, EngineConfig, RecommendationBatch, Retriever,
    Timings, TIMINGS_FILE,
};
use grouprec::synthetic::{generate_corpus, write_corpus, CorpusConfig, GROUP_TAGS_FILE, INTERACTIONS_FILE, ITEM_TAGS_FILE, MEMBERSHIPS_FILE};
use grouprec::temporal::write_profiles_csv;
use grouprec::ugindex::{brute_force_topk, build_index, item_query, load_index, save_index};
use grouprec::{Error, Result};

const MODEL_FILE: &str = "model.bin";
const FEATURES_FILE: &str = "group_features.csv";
const PROFILES_FILE: &str = "profiles.csv";
const INFLUENCE_FILE: &str = "influence.csv";
const SUBGRAPHS_FILE: &str = "subgraphs.csv";
const INDEX_FILE: &str = "index.ugix";
const RECOMMENDATIONS_FILE: &str = "recommendations.csv";
const DIIPROG_FILE: &str = "diiprog.csv";
const SIMULATION_FILE: &str = "simulation.csv";
const GREG_FILE: &str = "greg.csv";
const CONFIG_FILE: &str = "engine.conf";

#[derive(Parser)]
#[command(name = "grouprec", version, about = "Influence-aware group recommendation for streaming items")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the interaction log, build the group graph and report the split.
    Ingest(Common),
    /// Print dataset and graph statistics.
    Stats(Common),
    /// Train the model and write group features, profiles and influence scores.
    Train(Common),
    /// Build the group index from trained features.
    BuildIndex(Common),
    /// Recommend groups for items with a trained model.
    Recommend {
        /// Comma-separated item ids; defaults to every item the model knows.
        #[arg(long)]
        items: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run cascades for one item from a seed set of groups.
    Simulate {
        #[arg(long)]
        item: String,
        /// Comma-separated seed groups; defaults to the item's top-k groups.
        #[arg(long)]
        groups: Option<String>,
        /// Feed held-out interactions to the cascade in this many rounds.
        #[arg(long, default_value_t = 0)]
        stream_rounds: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train, recommend for held-out items and report HR, NDCG and σ_inf.
    Evaluate(Common),
    /// Write a synthetic corpus and a config pointing at it.
    Synthetic {
        #[arg(long, default_value_t = 300)]
        groups: usize,
        #[arg(long, default_value_t = 500)]
        items: usize,
        #[arg(long, default_value_t = 2000)]
        users: usize,
        #[arg(long, default_value_t = 10)]
        communities: usize,
        #[arg(long, default_value_t = 20)]
        interactions_per_group: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Interaction log; same as `--interactions PATH` in the override list.
    #[arg(long)]
    interactions: Option<PathBuf>,
    #[arg(long)]
    no_ges: bool,
    #[arg(long)]
    no_dyic: bool,
    #[arg(long)]
    no_index: bool,
    /// Any config key as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<EngineConfig> {
        let mut cfg = match &self.config {
            Some(p) => EngineConfig::load(p)?,
            None => EngineConfig::default(),
        };
        for (key, value) in parse_overrides(&self.overrides)? {
            cfg.set(&key, &value)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(p) = &self.interactions {
            cfg.interactions = Some(p.clone());
        }
        cfg.use_ges &= !self.no_ges;
        cfg.use_dyic &= !self.no_dyic;
        cfg.use_index &= !self.no_index;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `--key value` and `--key=value` pairs; dashes in keys read as underscores.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(Error::InvalidConfig(format!("unexpected argument {arg:?}")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_owned(), v.to_owned()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::InvalidConfig(format!("--{flag} needs a value")))?;
                (flag.to_owned(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

fn ingest(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let mut timings = Timings::default();
    let t = Instant::now();
    let ds = load_dataset(&cfg)?;
    timings.record("load", t);
    let t = Instant::now();
    let greg = build_greg(&ds, cfg.min_shared_users);
    let split = split_temporal(&ds, cfg.train_fraction, cfg.num_snapshots)?;
    timings.record("graph", t);
    let mut w = create(&cfg.out.join(GREG_FILE))?;
    writeln!(w, "group_a,group_b,shared_users")?;
    for e in greg.edges() {
        writeln!(w, "{},{},{}", greg.node_id(e.key.u), greg.node_id(e.key.v), e.weight)?;
    }
    w.flush()?;
    println!("groups {}  edges {}", greg.node_count(), greg.edge_count());
    for (i, s) in split.snapshots.iter().enumerate() {
        println!("snapshot {i}: {} interactions", s.len());
    }
    println!("test: {} interactions", split.test_set.len());
    write_manifest(&cfg, "ingest", &timings, &[GREG_FILE])?;
    Ok(())
}

fn stats(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let ds = load_dataset(&cfg)?;
    let s = ds.stats();
    let greg = build_greg(&ds, cfg.min_shared_users);
    let isolated = (0..greg.node_count()).filter(|&g| greg.degree(g) == 0).count();
    println!("users          {}", s.users);
    println!("items          {}", s.items);
    println!("groups         {}", s.groups);
    println!("interactions   {}", s.interactions);
    println!("items/group    {:.2}", s.avg_items_per_group);
    println!("items/user     {:.2}", s.avg_items_per_user);
    println!("graph edges    {}", greg.edge_count());
    println!("isolated       {isolated}");
    Ok(())
}

fn train(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let mut timings = Timings::default();
    let t = Instant::now();
    let ds = load_dataset(&cfg)?;
    timings.record("load", t);
    let engine = Engine::fit(&cfg, &ds)?;
    timings.extend(&engine.timings);

    let out = &cfg.out;
    save_model(&engine.state, &out.join(MODEL_FILE))?;
    write_features_csv(&engine.features, create(&out.join(FEATURES_FILE))?)?;
    write_profiles_csv(&engine.profiles, create(&out.join(PROFILES_FILE))?)?;
    let mut w = create(&out.join(INFLUENCE_FILE))?;
    writeln!(w, "group_id,influence")?;
    for (g, s) in engine.greg.nodes().iter().zip(&engine.influence) {
        writeln!(w, "{g},{s}")?;
    }
    w.flush()?;
    let mut outputs = vec![MODEL_FILE, FEATURES_FILE, PROFILES_FILE, INFLUENCE_FILE, TIMINGS_FILE];
    if let Some(sg) = &engine.subgraphs {
        grouprec::ges::write_subgraphs_csv(&engine.greg, sg, create(&out.join(SUBGRAPHS_FILE))?)?;
        outputs.push(SUBGRAPHS_FILE);
    }
    write_timings_csv(&timings, create(&out.join(TIMINGS_FILE))?)?;
    write_manifest(&cfg, "train", &timings, &outputs)?;
    println!("trained {} groups, {} items in {:.2}s", engine.greg.node_count(), engine.state.num_items(), timings.total());
    Ok(())
}

fn build_index_cmd(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let mut timings = Timings::default();
    let features = read_features_csv(&cfg.out.join(FEATURES_FILE))?;
    let t = Instant::now();
    let index = build_index(&features, &cfg.index_config())?;
    timings.record("index", t);
    save_index(&index, &cfg.out.join(INDEX_FILE))?;
    write_manifest(&cfg, "build-index", &timings, &[INDEX_FILE])?;
    println!("indexed {} groups in {} blocks", index.len(), index.blocks().len());
    Ok(())
}

fn recommend(common: &Common, items: Option<&str>) -> Result<()> {
    let cfg = common.config()?;
    let out = &cfg.out;
    let state = load_model(&out.join(MODEL_FILE))?;
    let retriever = if cfg.use_index {
        let path = out.join(INDEX_FILE);
        if path.exists() {
            Retriever::Index(load_index(&path)?)
        } else {
            Retriever::new(&read_features_csv(&out.join(FEATURES_FILE))?, &cfg)?
        }
    } else {
        Retriever::Exact(read_features_csv(&out.join(FEATURES_FILE))?)
    };
    let items = items.map(split_list).unwrap_or_else(|| state.item_ids.clone());
    let mut timings = Timings::default();
    let t = Instant::now();
    let queries = items
        .iter()
        .map(|v| Ok(item_query(&state.update_item_embedding(v)?)))
        .collect::<Result<Vec<_>>>()?;
    timings.record("embed", t);
    let t = Instant::now();
    let lists = retriever.query_batch(&queries, cfg.k)?;
    timings.record("retrieve", t);
    let batch = RecommendationBatch { items, lists, timings };
    write_recommendations_csv(&batch, create(&out.join(RECOMMENDATIONS_FILE))?)?;
    write_manifest(&cfg, "recommend", &batch.timings, &[RECOMMENDATIONS_FILE])?;
    println!("{} items, top {} groups each", batch.items.len(), cfg.k);
    Ok(())
}

fn simulate(common: &Common, item: &str, groups: Option<&str>, stream_rounds: usize) -> Result<()> {
    let cfg = common.config()?;
    let out = &cfg.out;
    let mut timings = Timings::default();
    let t = Instant::now();
    let ds = load_dataset(&cfg)?;
    let state = load_model(&out.join(MODEL_FILE))?;
    let greg = build_greg(&ds, cfg.min_shared_users);
    if state.group_ids.as_slice() != greg.nodes() {
        return Err(Error::InvalidConfig("model was trained on a different group set".into()));
    }
    let split = split_temporal(&ds, cfg.train_fraction, cfg.num_snapshots)?;
    let params = cfg.propagation_params();
    let sims = edge_similarities(&greg, &state.group_emb)?;
    let counts = ActivityCounts::from_split(&greg, &split, params.recent_window);
    let emb = state.update_item_embedding(item)?;
    let graph = build_diiprog(&greg, &state.group_emb, item, &emb, &sims, &counts, &params)?;
    timings.record("graph", t);

    let seed_ids = match groups {
        Some(g) => split_list(g),
        None => {
            let features = read_features_csv(&out.join(FEATURES_FILE))?;
            brute_force_topk(&features, &item_query(&emb), cfg.k)
                .into_iter()
                .map(|(g, _)| g)
                .collect()
        }
    };
    let seeds = seed_ids
        .iter()
        .map(|g| graph.group_index(g).ok_or_else(|| Error::UnknownGroup(g.clone())))
        .collect::<Result<Vec<_>>>()?;
    let stream: Vec<Vec<Interaction>> = if stream_rounds == 0 || split.test_set.is_empty() {
        Vec::new()
    } else {
        split
            .test_set
            .chunks(split.test_set.len().div_ceil(stream_rounds))
            .map(<[Interaction]>::to_vec)
            .collect()
    };
    let t = Instant::now();
    let spreads = (0..params.replications as u64)
        .into_par_iter()
        .map(|r| graph.cascade(&seeds, &stream, r, &params))
        .collect::<Result<Vec<usize>>>()?;
    timings.record("cascades", t);

    grouprec::influence::write_diiprog_csv(&graph, create(&out.join(DIIPROG_FILE))?)?;
    let mut w = create(&out.join(SIMULATION_FILE))?;
    writeln!(w, "replication,spread,fraction")?;
    for (r, s) in spreads.iter().enumerate() {
        writeln!(w, "{r},{s},{}", *s as f64 / graph.node_count() as f64)?;
    }
    w.flush()?;
    write_manifest(&cfg, "simulate", &timings, &[DIIPROG_FILE, SIMULATION_FILE])?;
    let mean = spreads.iter().sum::<usize>() as f64 / spreads.len().max(1) as f64;
    println!(
        "item {item}: {} seeds, mean spread {mean:.2} of {} groups",
        seeds.len(),
        graph.node_count()
    );
    Ok(())
}

fn evaluate(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let report = grouprec::pipeline::run_evaluation(&cfg)?;
    write_metrics_table(&report, std::io::stdout().lock())?;
    println!("sigma_inf@{} {}", report.sigma_k, report.sigma_inf);
    println!("cases {}  items {}  seconds {:.2}", report.cases, report.items, report.timings.total());
    Ok(())
}

fn synthetic(common: &Common, corpus: CorpusConfig) -> Result<()> {
    let cfg = common.config()?;
    let corpus = CorpusConfig { seed: cfg.seed, ..corpus };
    let ds = generate_corpus(&corpus)?;
    let dir = &cfg.out;
    write_corpus(&ds, dir)?;
    let mut engine_cfg = cfg.clone();
    let abs = |name: &str| fs::canonicalize(dir.join(name)).unwrap_or_else(|_| dir.join(name));
    engine_cfg.interactions = Some(abs(INTERACTIONS_FILE));
    engine_cfg.memberships = Some(abs(MEMBERSHIPS_FILE));
    engine_cfg.group_tags = Some(abs(GROUP_TAGS_FILE));
    engine_cfg.item_tags = Some(abs(ITEM_TAGS_FILE));
    let mut w = create(&dir.join(CONFIG_FILE))?;
    w.write_all(engine_cfg.to_text().as_bytes())?;
    w.flush()?;
    println!(
        "wrote {} interactions for {} groups and {} items to {}",
        ds.interactions.len(),
        corpus.groups,
        corpus.items,
        dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(c) => ingest(&c),
        Command::Stats(c) => stats(&c),
        Command::Train(c) => train(&c),
        Command::BuildIndex(c) => build_index_cmd(&c),
        Command::Recommend { items, common } => recommend(&common, items.as_deref()),
        Command::Simulate {
            item,
            groups,
            stream_rounds,
            common,
        } => simulate(&common, &item, groups.as_deref(), stream_rounds),
        Command::Evaluate(c) => evaluate(&c),
        Command::Synthetic {
            groups,
            items,
            users,
            communities,
            interactions_per_group,
            common,
        } => synthetic(
            &common,
            CorpusConfig {
                groups,
                items,
                users,
                communities,
                interactions_per_group,
                ..CorpusConfig::default()
            },
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
