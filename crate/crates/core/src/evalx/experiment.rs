//! Think-off / think-on / aligned comparison over one dataset.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{load_dataset, EpisodeRecord};
use super::metrics::{ndcg_at_k, recall_at_k};
use super::synth::{synth_dataset, CotStyle};
use crate::align::{build_context, score_episode, think_on_context, AlignConfig, ContextKind};
use crate::backend::{RemoteBackend, RemoteConfig, ScoringBackend, SyntheticModel, SyntheticModelConfig};
use crate::compress::{Compressor, CompressorConfig, RemoteCompressor, RuleBasedCompressor};
use crate::decode::{beam_search_sid, rank_order};
use crate::error::{Error, Result};
use crate::vocab::{tokenize_text, SemanticId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ThinkOff,
    ThinkOn,
    Aligned,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ThinkOff => "think_off",
            Method::ThinkOn => "think_on",
            Method::Aligned => "aligned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Recall,
    #[serde(rename = "NDCG")]
    Ndcg,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Recall => "Recall",
            Metric::Ndcg => "NDCG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: Method,
    pub metric: Metric,
    pub k: usize,
    pub alpha: Option<f64>,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric,K,alpha,value,n\n");
        for r in &self.rows {
            let alpha = r.alpha.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", r.method.as_str(), r.metric.as_str(), r.k, alpha, r.value, r.n);
        }
        out
    }

    pub fn get(&self, method: Method, metric: Metric, k: usize, alpha: Option<f64>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.metric == metric && r.k == k && r.alpha == alpha)
            .map(|r| r.value)
    }

    /// Best aligned value over the α grid.
    pub fn best_aligned(&self, metric: Metric, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == Method::Aligned && r.metric == metric && r.k == k)
            .map(|r| r.value)
            .max_by(f64::total_cmp)
    }
}

fn default_max_in_flight() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSpec {
    pub url: String,
    /// Vocabulary JSON file describing the remote model's SID space.
    pub vocab: PathBuf,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSpec {
    Synthetic(SyntheticModelConfig),
    Remote(RemoteSpec),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Synthetic(SyntheticModelConfig::default())
    }
}

/// A constructed backend. The synthetic variant stays concrete because
/// synthetic datasets are sampled from it.
pub enum LoadedBackend {
    Synthetic(SyntheticModel),
    Remote(RemoteBackend),
}

impl LoadedBackend {
    pub fn as_dyn(&self) -> &dyn ScoringBackend {
        match self {
            LoadedBackend::Synthetic(m) => m,
            LoadedBackend::Remote(r) => r,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.as_dyn().vocab()
    }
}

impl BackendSpec {
    pub fn load(&self) -> Result<LoadedBackend> {
        match self {
            BackendSpec::Synthetic(cfg) => Ok(LoadedBackend::Synthetic(SyntheticModel::new(cfg.clone())?)),
            BackendSpec::Remote(spec) => {
                let text = std::fs::read_to_string(&spec.vocab)
                    .map_err(|e| Error::Io(format!("{}: {e}", spec.vocab.display())))?;
                let vocab = Vocabulary::from_json(&text)?;
                let cfg = RemoteConfig {
                    url: spec.url.clone(),
                    max_in_flight: spec.max_in_flight,
                    timeout_ms: spec.timeout_ms,
                };
                Ok(LoadedBackend::Remote(RemoteBackend::new(cfg, vocab)?))
            }
        }
    }
}

fn default_episodes() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Path(PathBuf),
    Synthetic {
        #[serde(default = "default_episodes")]
        episodes: usize,
        cot_style: CotStyle,
        #[serde(default)]
        seed: u64,
    },
}

fn default_ks() -> Vec<usize> {
    vec![1, 5, 10]
}

fn default_workers() -> usize {
    1
}

/// Experiment file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub backend: BackendSpec,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub compressor: CompressorConfig,
    #[serde(default)]
    pub compressor_endpoint: Option<String>,
    #[serde(default = "default_ks")]
    pub k: Vec<usize>,
    /// Empty means just `align.alpha`.
    #[serde(default)]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

/// Rule-based unless an endpoint is given.
pub fn build_compressor(cfg: &CompressorConfig, endpoint: Option<&str>) -> Result<Box<dyn Compressor>> {
    Ok(match endpoint {
        None => Box::new(RuleBasedCompressor::new(cfg.clone())?),
        Some(url) => Box::new(RemoteCompressor::new(url, cfg.clone(), default_max_in_flight(), default_timeout_ms())?),
    })
}

/// Maps `f` over `items` on a pool of `workers` threads, keeping input
/// order in the output.
pub fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if workers == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

fn ranked_sids(mut scored: Vec<(SemanticId, f64)>) -> Vec<SemanticId> {
    scored.sort_by(rank_order);
    scored.into_iter().map(|(s, _)| s).collect()
}

/// Ranking a single-context method produces: beam search, or scoring of the
/// episode's own candidate list when it has one.
fn single_context_ranking(
    backend: &dyn ScoringBackend,
    episode: &EpisodeRecord,
    context: &[String],
    align: &AlignConfig,
) -> Result<Vec<SemanticId>> {
    match &episode.candidates {
        Some(c) => {
            let scores = backend.score_candidates(context, c)?;
            Ok(ranked_sids(c.iter().cloned().zip(scores).collect()))
        }
        None => Ok(beam_search_sid(backend, context, &align.beam())?.into_iter().map(|(s, _)| s).collect()),
    }
}

struct EpisodeMetrics {
    /// One entry per (method, α) slot, each holding per-K (recall, ndcg).
    slots: Vec<Vec<(u32, f64)>>,
}

fn metrics_for(ranking: &[SemanticId], target: &SemanticId, ks: &[usize]) -> Result<Vec<(u32, f64)>> {
    ks.iter()
        .map(|&k| Ok((recall_at_k(ranking, target, k)?, ndcg_at_k(ranking, target, k)?)))
        .collect()
}

/// Runs all three methods over `episodes`. Aligned rows are emitted for
/// every α in `alphas`.
pub fn evaluate(
    backend: &dyn ScoringBackend,
    episodes: &[EpisodeRecord],
    align: &AlignConfig,
    compressor: &dyn Compressor,
    ks: &[usize],
    alphas: &[f64],
    workers: usize,
) -> Result<ReportTable> {
    align.validate()?;
    if episodes.is_empty() {
        return Err(Error::Config("dataset has no episodes".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("K list must be non-empty and every K >= 1".into()));
    }
    if alphas.is_empty() {
        return Err(Error::Config("alpha grid must not be empty".into()));
    }
    for &a in alphas {
        AlignConfig { alpha: a, ..*align }.validate()?;
    }

    let per_episode = par_map(workers, episodes, |ep| {
        let baseline = build_context(ContextKind::Baseline, &ep.history, &[], &[])?;
        let think_on = think_on_context(&ep.history, &tokenize_text(&ep.cot))?;
        let mut slots = vec![
            metrics_for(&single_context_ranking(backend, ep, &baseline, align)?, &ep.target, ks)?,
            metrics_for(&single_context_ranking(backend, ep, &think_on, align)?, &ep.target, ks)?,
        ];
        let scores = score_episode(backend, ep, align, compressor)?;
        for &a in alphas {
            let ranking: Vec<SemanticId> = scores.rank(a)?.into_iter().map(|c| c.sid).collect();
            slots.push(metrics_for(&ranking, &ep.target, ks)?);
        }
        Ok(EpisodeMetrics { slots })
    })?;

    let n = episodes.len();
    let mut rows = Vec::new();
    let labels = [(Method::ThinkOff, None), (Method::ThinkOn, None)]
        .into_iter()
        .chain(alphas.iter().map(|&a| (Method::Aligned, Some(a))));
    for (slot, (method, alpha)) in labels.enumerate() {
        for metric in [Metric::Recall, Metric::Ndcg] {
            for (ki, &k) in ks.iter().enumerate() {
                let value = match metric {
                    Metric::Recall => {
                        let hits: u64 = per_episode.iter().map(|e| u64::from(e.slots[slot][ki].0)).sum();
                        hits as f64 / n as f64
                    }
                    Metric::Ndcg => per_episode.iter().map(|e| e.slots[slot][ki].1).sum::<f64>() / n as f64,
                };
                rows.push(ReportRow { method, metric, k, alpha, value, n });
            }
        }
    }
    Ok(ReportTable { rows })
}

/// Loads everything named by `config` and evaluates it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportTable> {
    let backend = config.backend.load()?;
    let episodes = match &config.dataset {
        DatasetSource::Path(p) => load_dataset(p, backend.vocab())?,
        DatasetSource::Synthetic { episodes, cot_style, seed } => match &backend {
            LoadedBackend::Synthetic(m) => synth_dataset(m, *episodes, *cot_style, *seed),
            LoadedBackend::Remote(_) => {
                return Err(Error::Config("synthetic datasets need the synthetic backend".into()))
            }
        },
    };
    let compressor = build_compressor(&config.compressor, config.compressor_endpoint.as_deref())?;
    let alphas = if config.alpha_grid.is_empty() {
        vec![config.align.alpha]
    } else {
        config.alpha_grid.clone()
    };
    evaluate(
        backend.as_dyn(),
        &episodes,
        &config.align,
        compressor.as_ref(),
        &config.k,
        &alphas,
        config.workers,
    )
}
