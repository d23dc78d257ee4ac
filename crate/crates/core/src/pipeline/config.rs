//! Flat `key = value` engine configuration. Every key can also be given on
//! the command line as `--key value`.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ges::{ProbabilityMode, SamplerConfig};
use crate::ggcn::GgcnConfig;
use crate::influence::{PropagationParams, ThresholdMode};
use crate::rng;
use crate::temporal::RnnConfig;
use crate::ugindex::IndexConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub interactions: Option<PathBuf>,
    pub memberships: Option<PathBuf>,
    pub group_tags: Option<PathBuf>,
    pub item_tags: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Groups recommended per item.
    pub k: usize,
    /// List lengths reported by evaluation.
    pub k_list: Vec<usize>,
    pub train_fraction: f64,
    pub num_snapshots: usize,
    pub min_shared_users: usize,
    pub ggcn: GgcnConfig,
    pub epochs: usize,
    pub short_term_epochs: usize,
    pub use_ges: bool,
    pub sampler: SamplerConfig,
    pub rnn: RnnConfig,
    pub use_dyic: bool,
    pub propagation: PropagationParams,
    /// Fixed activation threshold used when measuring σ_inf.
    pub eval_threshold: f64,
    pub use_index: bool,
    pub index: IndexConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            interactions: None,
            memberships: None,
            group_tags: None,
            item_tags: None,
            out: PathBuf::from("out"),
            seed: 0,
            k: 20,
            k_list: vec![5, 10, 20],
            train_fraction: 0.8,
            num_snapshots: 3,
            min_shared_users: 1,
            ggcn: GgcnConfig::default(),
            epochs: 20,
            short_term_epochs: 5,
            use_ges: true,
            sampler: SamplerConfig::default(),
            rnn: RnnConfig::default(),
            use_dyic: true,
            propagation: PropagationParams::default(),
            eval_threshold: 0.5,
            use_index: true,
            index: IndexConfig::default(),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
}

fn opt_num<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn show_opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "auto".to_owned(), T::to_string)
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_owned(), |p| p.display().to_string())
}

impl EngineConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let g = &mut self.ggcn;
        match key {
            "interactions" => self.interactions = opt_path(v),
            "memberships" => self.memberships = opt_path(v),
            "group_tags" => self.group_tags = opt_path(v),
            "item_tags" => self.item_tags = opt_path(v),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "k_list" => {
                self.k_list = v
                    .split(',')
                    .map(|x| num(key, x.trim()))
                    .collect::<Result<_>>()?
            }
            "train_fraction" => self.train_fraction = num(key, v)?,
            "num_snapshots" => self.num_snapshots = num(key, v)?,
            "min_shared_users" => self.min_shared_users = num(key, v)?,
            "embed_dim" => g.embed_dim = num(key, v)?,
            "latent_dim" => g.latent_dim = num(key, v)?,
            "attr_dim" => g.attr_dim = num(key, v)?,
            "num_layers" => g.num_layers = num(key, v)?,
            "alpha_v" => g.alpha_v = num(key, v)?,
            "alpha_r" => g.alpha_r = num(key, v)?,
            "lr" => g.lr = num(key, v)?,
            "lambda" => g.lambda = num(key, v)?,
            "adam_beta1" => g.adam_beta1 = num(key, v)?,
            "adam_beta2" => g.adam_beta2 = num(key, v)?,
            "adam_eps" => g.adam_eps = num(key, v)?,
            "negatives_per_positive" => g.negatives_per_positive = num(key, v)?,
            "batch_size" => g.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "short_term_epochs" => self.short_term_epochs = num(key, v)?,
            "use_ges" => self.use_ges = flag(key, v)?,
            "num_clusters" => self.sampler.num_clusters = num(key, v)?,
            "overlap_degree" => self.sampler.overlap_degree = num(key, v)?,
            "samples_per_time" => self.sampler.samples_per_time = opt_num(key, v)?,
            "sampling_mode" => {
                self.sampler.mode = match v {
                    "approximate" => ProbabilityMode::Approximate,
                    "exact" => ProbabilityMode::Exact,
                    _ => return Err(Error::InvalidConfig(format!("{key}: expected approximate or exact, got {v:?}"))),
                }
            }
            "rnn_hidden_dim" => self.rnn.hidden_dim = opt_num(key, v)?,
            "rnn_lr" => self.rnn.lr = num(key, v)?,
            "rnn_lambda" => self.rnn.lambda = num(key, v)?,
            "rnn_epochs" => self.rnn.epochs = num(key, v)?,
            "use_dyic" => self.use_dyic = flag(key, v)?,
            "gamma_1" => self.propagation.gamma_1 = num(key, v)?,
            "gamma_2" => self.propagation.gamma_2 = num(key, v)?,
            "recent_window" => self.propagation.recent_window = num(key, v)?,
            "replications" => self.propagation.replications = num(key, v)?,
            "threshold" => {
                self.propagation.threshold_mode = match v {
                    "stochastic" => ThresholdMode::Stochastic,
                    _ => ThresholdMode::Fixed(num(key, v)?),
                }
            }
            "use_similarity" => self.propagation.factors.similarity = flag(key, v)?,
            "use_willingness" => self.propagation.factors.willingness = flag(key, v)?,
            "eval_threshold" => self.eval_threshold = num(key, v)?,
            "use_index" => self.use_index = flag(key, v)?,
            "projection_dim" => self.index.projection_dim = num(key, v)?,
            "bits_per_dim" => self.index.bits_per_dim = num(key, v)?,
            "block_size" => self.index.block_size = num(key, v)?,
            "bucket_count" => self.index.bucket_count = opt_num(key, v)?,
            "hash_a" => self.index.hash_a = opt_num(key, v)?,
            "hash_b" => self.index.hash_b = opt_num(key, v)?,
            "scan_budget" => self.index.scan_budget = opt_num(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let g = &self.ggcn;
        let p = &self.propagation;
        let k_list: Vec<String> = self.k_list.iter().map(ToString::to_string).collect();
        vec![
            ("interactions", show_path(&self.interactions)),
            ("memberships", show_path(&self.memberships)),
            ("group_tags", show_path(&self.group_tags)),
            ("item_tags", show_path(&self.item_tags)),
            ("out", self.out.display().to_string()),
            ("seed", self.seed.to_string()),
            ("k", self.k.to_string()),
            ("k_list", k_list.join(",")),
            ("train_fraction", self.train_fraction.to_string()),
            ("num_snapshots", self.num_snapshots.to_string()),
            ("min_shared_users", self.min_shared_users.to_string()),
            ("embed_dim", g.embed_dim.to_string()),
            ("latent_dim", g.latent_dim.to_string()),
            ("attr_dim", g.attr_dim.to_string()),
            ("num_layers", g.num_layers.to_string()),
            ("alpha_v", g.alpha_v.to_string()),
            ("alpha_r", g.alpha_r.to_string()),
            ("lr", g.lr.to_string()),
            ("lambda", g.lambda.to_string()),
            ("adam_beta1", g.adam_beta1.to_string()),
            ("adam_beta2", g.adam_beta2.to_string()),
            ("adam_eps", g.adam_eps.to_string()),
            ("negatives_per_positive", g.negatives_per_positive.to_string()),
            ("batch_size", g.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("short_term_epochs", self.short_term_epochs.to_string()),
            ("use_ges", self.use_ges.to_string()),
            ("num_clusters", self.sampler.num_clusters.to_string()),
            ("overlap_degree", self.sampler.overlap_degree.to_string()),
            ("samples_per_time", show_opt(&self.sampler.samples_per_time)),
            (
                "sampling_mode",
                match self.sampler.mode {
                    ProbabilityMode::Approximate => "approximate".to_owned(),
                    ProbabilityMode::Exact => "exact".to_owned(),
                },
            ),
            ("rnn_hidden_dim", show_opt(&self.rnn.hidden_dim)),
            ("rnn_lr", self.rnn.lr.to_string()),
            ("rnn_lambda", self.rnn.lambda.to_string()),
            ("rnn_epochs", self.rnn.epochs.to_string()),
            ("use_dyic", self.use_dyic.to_string()),
            ("gamma_1", p.gamma_1.to_string()),
            ("gamma_2", p.gamma_2.to_string()),
            ("recent_window", p.recent_window.to_string()),
            ("replications", p.replications.to_string()),
            (
                "threshold",
                match p.threshold_mode {
                    ThresholdMode::Stochastic => "stochastic".to_owned(),
                    ThresholdMode::Fixed(t) => t.to_string(),
                },
            ),
            ("use_similarity", p.factors.similarity.to_string()),
            ("use_willingness", p.factors.willingness.to_string()),
            ("eval_threshold", self.eval_threshold.to_string()),
            ("use_index", self.use_index.to_string()),
            ("projection_dim", self.index.projection_dim.to_string()),
            ("bits_per_dim", self.index.bits_per_dim.to_string()),
            ("block_size", self.index.block_size.to_string()),
            ("bucket_count", show_opt(&self.index.bucket_count)),
            ("hash_a", show_opt(&self.index.hash_a)),
            ("hash_b", show_opt(&self.index.hash_b)),
            ("scan_budget", show_opt(&self.index.scan_budget)),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        EngineConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Applies `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = EngineConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EngineConfig::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hex SHA-256 of [`EngineConfig::to_text`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.k == 0 || self.k_list.is_empty() || self.k_list.contains(&0) {
            return bad("k and every k_list entry must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.eval_threshold) {
            return bad("eval_threshold must lie in [0, 1]");
        }
        if self.rnn.lr <= 0.0 || self.rnn.lambda < 0.0 {
            return bad("rnn_lr must be positive and rnn_lambda nonnegative");
        }
        self.ggcn_config().validate()?;
        self.propagation_params().validate()?;
        self.index_config().validate()
    }

    /// Longest list any consumer needs.
    pub fn max_k(&self) -> usize {
        self.k_list.iter().copied().chain([self.k]).max().unwrap_or(1)
    }

    pub fn ggcn_config(&self) -> GgcnConfig {
        GgcnConfig {
            seed: rng::derive(self.seed, 1),
            ..self.ggcn.clone()
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            seed: rng::derive(self.seed, 2),
            ..self.sampler.clone()
        }
    }

    pub fn rnn_config(&self) -> RnnConfig {
        RnnConfig {
            seed: rng::derive(self.seed, 3),
            ..self.rnn.clone()
        }
    }

    pub fn propagation_params(&self) -> PropagationParams {
        PropagationParams {
            seed: rng::derive(self.seed, 4),
            ..self.propagation.clone()
        }
    }

    /// Deterministic single-pass cascades at the evaluation threshold.
    pub fn evaluation_params(&self) -> PropagationParams {
        PropagationParams {
            threshold_mode: ThresholdMode::Fixed(self.eval_threshold),
            replications: 1,
            ..self.propagation_params()
        }
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            seed: rng::derive(self.seed, 5),
            ..self.index.clone()
        }
    }
}
