//! An exactly computable stand-in for a semantic-ID recommender.
//!
//! Items are the `C^L` SIDs. A user draws a latent taste cluster; clusters
//! are sharp item distributions. Conditioning on a history yields the
//! posterior-predictive `base(y | h)`. A reasoning block in the context mixes
//! in a popularity prior with weight
//! `gamma_eff = gamma * n_gen / (n_gen + lambda_sid * n_sid)`, so long
//! general-text blocks wash out history evidence. All probabilities are
//! closed-form, which makes every downstream quantity checkable by
//! enumeration.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_score_request, AttentionProfile, BackendError, Capabilities, ScoringBackend};
use crate::vocab::{
    parse_sid_token, sid_token, SemanticId, SubspaceTag, Vocabulary, COT_BEGIN, COT_END,
    HIST_BEGIN, HIST_EMPTY, HIST_END, SID_BEGIN, SID_END,
};

/// Cluster-mention tokens are `topic_{k}`.
pub const CLUSTER_TOKEN_PREFIX: &str = "topic_";

/// Fixed general words used by the episode generator, the compressor
/// template and the diagnostic instruction prompt.
pub const SCAFFOLD_WORDS: &[&str] = &[
    ".", ",", "I", "need", "to", "analyze", "the", "history", "First", "user", "repeatedly",
    "watches", "and", "The", "current", "user's", "preference", "is", "unknown", "Recommend",
    "next", "item", "for", "this", "based", "on",
];

const MAX_SYNTHETIC_ITEMS: usize = 1 << 16;
const EMBEDDING_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticModelConfig {
    pub levels: usize,
    pub codes_per_level: u32,
    pub clusters: usize,
    pub n_general: usize,
    /// Drift strength in [0, 1].
    pub gamma: f64,
    /// Popularity Zipf exponent.
    pub zipf_s: f64,
    /// Weight of SID tokens in the drift dilution ratio.
    pub lambda_sid: f64,
    /// Attention salience gain for general tokens.
    pub kappa: f64,
    /// Cluster sharpness temperature.
    pub tau: f64,
    pub seed: u64,
}

impl Default for SyntheticModelConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            codes_per_level: 8,
            clusters: 8,
            n_general: 256,
            gamma: 0.6,
            zipf_s: 1.1,
            lambda_sid: 1.0,
            kappa: 1.0,
            tau: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticModelConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidConfig(m));
        if self.levels == 0 {
            return bad("levels must be >= 1".into());
        }
        if self.codes_per_level < 2 {
            return bad("codes_per_level must be >= 2".into());
        }
        match (self.codes_per_level as usize).checked_pow(self.levels as u32) {
            Some(n) if n <= MAX_SYNTHETIC_ITEMS => {}
            _ => return bad(format!("synthetic item space is limited to {MAX_SYNTHETIC_ITEMS} items")),
        }
        if self.clusters == 0 {
            return bad("clusters must be >= 1".into());
        }
        let min_general = self.clusters + SCAFFOLD_WORDS.len() + 1;
        if self.n_general < min_general {
            return bad(format!("n_general must be >= {min_general} for {} clusters", self.clusters));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]".into());
        }
        if !(self.zipf_s.is_finite() && self.zipf_s > 0.0) {
            return bad("zipf_s must be > 0".into());
        }
        if !(self.lambda_sid.is_finite() && self.lambda_sid > 0.0) {
            return bad("lambda_sid must be > 0".into());
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return bad("kappa must be >= 0".into());
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau must be > 0".into());
        }
        Ok(())
    }

    pub fn item_count(&self) -> usize {
        (self.codes_per_level as usize).pow(self.levels as u32)
    }
}

/// What the model reads out of a token context.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ContextSummary {
    pub history: Vec<usize>,
    pub mentions: Vec<f64>,
    pub has_cot: bool,
    pub n_gen: usize,
    pub n_sid: usize,
    pub sid_ready: bool,
    pub prefix: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct SyntheticModel {
    config: SyntheticModelConfig,
    vocab: Vocabulary,
    clusters: Vec<Vec<f64>>,
    log_clusters: Vec<Vec<f64>>,
    prior: Vec<f64>,
    popularity: Vec<f64>,
    filler: Vec<String>,
}

fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn general_vocabulary(config: &SyntheticModelConfig) -> (Vec<String>, Vec<String>) {
    let mut general: Vec<String> = (0..config.clusters)
        .map(|k| format!("{CLUSTER_TOKEN_PREFIX}{k}"))
        .collect();
    general.extend(SCAFFOLD_WORDS.iter().map(|w| w.to_string()));
    let n_filler = config.n_general - general.len();
    let filler: Vec<String> = (0..n_filler).map(|i| format!("w{i}")).collect();
    general.extend(filler.iter().cloned());
    (general, filler)
}

impl SyntheticModel {
    pub fn new(config: SyntheticModelConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let n = config.item_count();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let clusters: Vec<Vec<f64>> = (0..config.clusters)
            .map(|_| {
                let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                softmax(&g, config.tau)
            })
            .collect();
        // Dirichlet(1, ..., 1) as normalized unit exponentials
        let raw: Vec<f64> = (0..config.clusters).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = raw.iter().sum();
        let prior = raw.iter().map(|x| x / total).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut popularity = vec![0.0; n];
        for (rank, &item) in order.iter().enumerate() {
            popularity[item] = 1.0 / ((rank + 1) as f64).powf(config.zipf_s);
        }
        let total: f64 = popularity.iter().sum();
        popularity.iter_mut().for_each(|p| *p /= total);
        Self::assemble(config, clusters, prior, popularity)
    }

    /// Builds a model from explicit cluster, prior and popularity tables.
    pub fn from_parts(
        config: SyntheticModelConfig,
        clusters: Vec<Vec<f64>>,
        prior: Vec<f64>,
        popularity: Vec<f64>,
    ) -> Result<Self, BackendError> {
        config.validate()?;
        let n = config.item_count();
        let check = |name: &str, dist: &[f64], len: usize| -> Result<(), BackendError> {
            if dist.len() != len {
                return Err(BackendError::InvalidConfig(format!("{name} has length {}, expected {len}", dist.len())));
            }
            if dist.iter().any(|p| !p.is_finite() || *p <= 0.0) {
                return Err(BackendError::InvalidConfig(format!("{name} entries must be positive")));
            }
            if (dist.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(BackendError::InvalidConfig(format!("{name} must sum to 1")));
            }
            Ok(())
        };
        if clusters.len() != config.clusters {
            return Err(BackendError::InvalidConfig("cluster count mismatch".into()));
        }
        for q in &clusters {
            check("cluster distribution", q, n)?;
        }
        check("prior", &prior, config.clusters)?;
        check("popularity", &popularity, n)?;
        Self::assemble(config, clusters, prior, popularity)
    }

    fn assemble(
        config: SyntheticModelConfig,
        clusters: Vec<Vec<f64>>,
        prior: Vec<f64>,
        popularity: Vec<f64>,
    ) -> Result<Self, BackendError> {
        let (general, filler) = general_vocabulary(&config);
        let vocab = Vocabulary::new(config.levels, config.codes_per_level, general)
            .map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
        let log_clusters = clusters.iter().map(|q| q.iter().map(|p| p.ln()).collect()).collect();
        Ok(Self {
            config,
            vocab,
            clusters,
            log_clusters,
            prior,
            popularity,
            filler,
        })
    }

    pub fn config(&self) -> &SyntheticModelConfig {
        &self.config
    }

    pub fn clusters(&self) -> &[Vec<f64>] {
        &self.clusters
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn popularity(&self) -> &[f64] {
        &self.popularity
    }

    pub fn cluster_token(&self, k: usize) -> String {
        format!("{CLUSTER_TOKEN_PREFIX}{k}")
    }

    /// General tokens that carry no cluster content.
    pub fn filler_tokens(&self) -> &[String] {
        &self.filler
    }

    fn cluster_of_token(&self, token: &str) -> Option<usize> {
        let k: usize = token.strip_prefix(CLUSTER_TOKEN_PREFIX)?.parse().ok()?;
        (k < self.config.clusters && token == format!("{CLUSTER_TOKEN_PREFIX}{k}")).then_some(k)
    }

    /// Posterior cluster weights given history items and mention counts, or
    /// `None` when neither carries evidence.
    pub fn cluster_posterior(&self, history: &[usize], mentions: &[f64]) -> Option<Vec<f64>> {
        if history.is_empty() && mentions.iter().all(|&m| m == 0.0) {
            return None;
        }
        let logw: Vec<f64> = (0..self.config.clusters)
            .map(|k| {
                let m = mentions.get(k).copied().unwrap_or(0.0);
                let mut lw = (self.prior[k] + m).ln();
                for &i in history {
                    lw += self.log_clusters[k][i];
                }
                lw
            })
            .collect();
        Some(softmax(&logw, 1.0))
    }

    /// Drift-free posterior predictive `base(y | h, mentions)`.
    pub fn base_distribution(&self, history: &[usize], mentions: &[f64]) -> Vec<f64> {
        let n = self.config.item_count();
        match self.cluster_posterior(history, mentions) {
            None => vec![1.0 / n as f64; n],
            Some(u) => {
                let mut out = vec![0.0; n];
                for (k, q) in self.clusters.iter().enumerate() {
                    for (o, p) in out.iter_mut().zip(q) {
                        *o += u[k] * p;
                    }
                }
                out
            }
        }
    }

    /// Most probable cluster after seeing `history` (lowest index on ties).
    pub fn map_cluster(&self, history: &[usize]) -> usize {
        let no_mentions = vec![0.0; self.config.clusters];
        match self.cluster_posterior(history, &no_mentions) {
            None => argmax(&self.prior),
            Some(u) => argmax(&u),
        }
    }

    pub(crate) fn analyze(&self, context: &[String]) -> Result<ContextSummary, BackendError> {
        #[derive(PartialEq)]
        enum Region {
            Outside,
            History,
            Cot,
            Sid,
            Done,
        }
        let malformed = |m: String| BackendError::MalformedContext(m);
        let levels = self.config.levels;
        let c = self.config.codes_per_level;
        let mut s = ContextSummary {
            history: Vec::new(),
            mentions: vec![0.0; self.config.clusters],
            has_cot: false,
            n_gen: 0,
            n_sid: 0,
            sid_ready: false,
            prefix: Vec::new(),
        };
        let mut region = Region::Outside;
        let mut group: Vec<u32> = Vec::with_capacity(levels);
        for (pos, tok) in context.iter().enumerate() {
            let tok = tok.as_str();
            if region == Region::Done {
                return Err(malformed(format!("token `{tok}` after {SID_END}")));
            }
            let out_of_place = || malformed(format!("unexpected `{tok}` at position {pos}"));
            match tok {
                HIST_BEGIN if region == Region::Outside => region = Region::History,
                HIST_END if region == Region::History => {
                    if !group.is_empty() {
                        return Err(malformed("incomplete SID in history".into()));
                    }
                    region = Region::Outside;
                }
                HIST_EMPTY if region == Region::History => {}
                COT_BEGIN if region == Region::Outside => {
                    s.has_cot = true;
                    region = Region::Cot;
                }
                COT_END if region == Region::Cot => region = Region::Outside,
                SID_BEGIN if region == Region::Outside => {
                    s.sid_ready = true;
                    region = Region::Sid;
                }
                SID_END if region == Region::Sid && s.prefix.len() == levels => region = Region::Done,
                HIST_BEGIN | HIST_END | HIST_EMPTY | COT_BEGIN | COT_END | SID_BEGIN | SID_END => {
                    return Err(out_of_place())
                }
                _ => match parse_sid_token(tok) {
                    Some((level, code)) if level < levels && code < c => match region {
                        Region::History => {
                            if level != group.len() {
                                return Err(malformed(format!("history SID level order broken at `{tok}`")));
                            }
                            group.push(code);
                            s.n_sid += 1;
                            if group.len() == levels {
                                s.history.push(SemanticId::new(std::mem::take(&mut group)).index(c));
                            }
                        }
                        Region::Sid => {
                            if level != s.prefix.len() {
                                return Err(malformed(format!("decoded SID level order broken at `{tok}`")));
                            }
                            s.prefix.push(code);
                        }
                        _ => s.n_sid += 1,
                    },
                    _ => match region {
                        Region::Sid => return Err(out_of_place()),
                        Region::Cot => {
                            s.n_gen += 1;
                            if let Some(k) = self.cluster_of_token(tok) {
                                s.mentions[k] += 1.0;
                            }
                        }
                        _ => s.n_gen += 1,
                    },
                },
            }
        }
        if matches!(region, Region::History | Region::Cot) {
            return Err(malformed("unterminated history or reasoning block".into()));
        }
        Ok(s)
    }

    fn gamma_eff(&self, s: &ContextSummary) -> f64 {
        let gen = s.n_gen as f64;
        let denom = gen + self.config.lambda_sid * s.n_sid as f64;
        if denom == 0.0 {
            0.0
        } else {
            self.config.gamma * gen / denom
        }
    }

    /// Effective drift weight for a context.
    pub fn effective_gamma(&self, context: &[String]) -> Result<f64, BackendError> {
        Ok(self.gamma_eff(&self.analyze(context)?))
    }

    fn distribution_of(&self, s: &ContextSummary) -> Vec<f64> {
        let base = self.base_distribution(&s.history, &s.mentions);
        if !s.has_cot {
            return base;
        }
        let g = self.gamma_eff(s);
        base.iter()
            .zip(&self.popularity)
            .map(|(b, p)| (1.0 - g) * b + g * p)
            .collect()
    }

    /// Full item distribution `P(y | context)`; any decoded prefix after
    /// `<|sid_begin|>` is ignored.
    pub fn item_distribution(&self, context: &[String]) -> Result<Vec<f64>, BackendError> {
        let s = self.analyze(context)?;
        if !s.sid_ready {
            return Err(BackendError::ContextNotSidReady);
        }
        Ok(self.distribution_of(&s))
    }

    /// Prefix masses per level: `masses[t][j]` is the probability that the
    /// first `t` codes spell the mixed-radix prefix `j`.
    fn level_masses(&self, dist: Vec<f64>) -> Vec<Vec<f64>> {
        let c = self.config.codes_per_level as usize;
        let mut masses = vec![dist];
        for _ in 0..self.config.levels {
            let finer = masses.last().expect("non-empty");
            let coarser: Vec<f64> = finer.chunks(c).map(|ch| ch.iter().sum()).collect();
            masses.push(coarser);
        }
        masses.reverse();
        masses
    }

    /// Deterministic token embeddings: SID and general tokens scatter around
    /// two partially aligned centers.
    pub fn token_embeddings(&self, dim: usize) -> Vec<(String, SubspaceTag, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ EMBEDDING_STREAM);
        let mut normal = |scale: f64| -> Vec<f64> {
            (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let sid_center = normal(2.0);
        let own = normal(2.0);
        let general_center: Vec<f64> = sid_center
            .iter()
            .zip(&own)
            .map(|(s, o)| 0.5 * s + 0.75f64.sqrt() * o)
            .collect();
        let mut out = Vec::new();
        for level in 0..self.config.levels {
            for code in 0..self.config.codes_per_level {
                let noise = normal(1.0);
                let v = sid_center.iter().zip(noise).map(|(c, e)| c + e).collect();
                out.push((sid_token(level, code), SubspaceTag::SemanticId, v));
            }
        }
        for tok in self.vocab.general_tokens() {
            let noise = normal(1.0);
            let v = general_center.iter().zip(noise).map(|(c, e)| c + e).collect();
            out.push((tok.clone(), SubspaceTag::General, v));
        }
        out
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl ScoringBackend for SyntheticModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_attention: true,
            supports_full_distribution: true,
        }
    }

    fn score_candidates(
        &self,
        context: &[String],
        candidates: &[SemanticId],
    ) -> Result<Vec<f64>, BackendError> {
        check_score_request(&self.vocab, context, candidates)?;
        let s = self.analyze(context)?;
        let masses = self.level_masses(self.distribution_of(&s));
        let c = self.config.codes_per_level as usize;
        Ok(candidates
            .iter()
            .map(|sid| {
                let mut score = 0.0;
                let mut parent = 0usize;
                for (t, &code) in sid.codes().iter().enumerate() {
                    let child = parent * c + code as usize;
                    score += (masses[t + 1][child] / masses[t][parent]).ln();
                    parent = child;
                }
                score
            })
            .collect())
    }

    fn next_token_dist(&self, context: &[String]) -> Result<Vec<(String, f64)>, BackendError> {
        let s = self.analyze(context)?;
        if !s.sid_ready {
            return Err(BackendError::ContextNotSidReady);
        }
        let level = s.prefix.len();
        if level == self.config.levels {
            return Ok(vec![(SID_END.to_string(), 1.0)]);
        }
        let masses = self.level_masses(self.distribution_of(&s));
        let c = self.config.codes_per_level;
        let parent = s
            .prefix
            .iter()
            .fold(0usize, |acc, &code| acc * c as usize + code as usize);
        Ok((0..c)
            .map(|code| {
                let child = parent * c as usize + code as usize;
                (sid_token(level, code), masses[level + 1][child] / masses[level][parent])
            })
            .collect())
    }

    fn attention_profile(&self, context: &[String]) -> Result<AttentionProfile, BackendError> {
        let s = self.analyze(context)?;
        let general_salience = self.config.kappa * self.gamma_eff(&s);
        AttentionProfile::from_weights(context.iter().filter_map(|tok| {
            match self.vocab.tag_lenient(tok) {
                SubspaceTag::Structural => None,
                SubspaceTag::SemanticId => Some((tok.clone(), SubspaceTag::SemanticId, 1.0)),
                // salience 1 + kappa * gamma_eff, shifted by the shared 1
                SubspaceTag::General => {
                    Some((tok.clone(), SubspaceTag::General, general_salience.exp()))
                }
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn small_config(levels: usize, c: u32, k: usize, gamma: f64) -> SyntheticModelConfig {
        SyntheticModelConfig {
            levels,
            codes_per_level: c,
            clusters: k,
            n_general: 64,
            gamma,
            seed: 11,
            ..SyntheticModelConfig::default()
        }
    }

    fn two_item_model(gamma: f64) -> SyntheticModel {
        SyntheticModel::from_parts(
            small_config(1, 2, 1, gamma),
            vec![vec![0.75, 0.25]],
            vec![1.0],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn single_cluster_history_scores_closed_form() {
        let m = two_item_model(0.0);
        let ctx = toks("<|hist_begin|> <s_0_0> <|hist_end|> <|sid_begin|>");
        let scores = m
            .score_candidates(&ctx, &[SemanticId::new(vec![0]), SemanticId::new(vec![1])])
            .unwrap();
        assert!((scores[0] - 0.75f64.ln()).abs() < 1e-15);
        assert!((scores[1] - 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_history_without_cot_is_uniform() {
        let m = SyntheticModel::new(small_config(2, 4, 3, 0.0)).unwrap();
        let ctx = toks("<|hist_begin|> <|hist_empty|> <|hist_end|> <|sid_begin|>");
        let all: Vec<_> = m.vocab().all_sids().collect();
        for s in m.score_candidates(&ctx, &all).unwrap() {
            assert!((s - (1.0f64 / 16.0).ln()).abs() < 1e-12);
        }
        for (_, p) in m.next_token_dist(&ctx).unwrap() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn chain_rule_matches_scores_exhaustively() {
        let m = SyntheticModel::new(small_config(2, 4, 3, 0.6)).unwrap();
        let ctx = toks("<|hist_begin|> <s_0_1> <s_1_2> <|hist_end|> <|cot_begin|> w1 w2 topic_1 <|cot_end|> <|sid_begin|>");
        let all: Vec<_> = m.vocab().all_sids().collect();
        let scores = m.score_candidates(&ctx, &all).unwrap();
        let mut total = 0.0;
        for (sid, score) in all.iter().zip(&scores) {
            let mut prod = 1.0;
            let mut prefix = ctx.clone();
            for tok in m.vocab().sid_tokens(sid) {
                let dist = m.next_token_dist(&prefix).unwrap();
                assert!((dist.iter().map(|d| d.1).sum::<f64>() - 1.0).abs() < 1e-12);
                prod *= dist.iter().find(|d| d.0 == tok).unwrap().1;
                prefix.push(tok);
            }
            assert_eq!(m.next_token_dist(&prefix).unwrap(), vec![(SID_END.to_string(), 1.0)]);
            assert!((prod - score.exp()).abs() < 1e-12);
            total += score.exp();
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn determinism_across_instances() {
        let a = SyntheticModel::new(small_config(2, 4, 3, 0.4)).unwrap();
        let b = SyntheticModel::new(small_config(2, 4, 3, 0.4)).unwrap();
        let ctx = toks("<|hist_begin|> <s_0_3> <s_1_0> <|hist_end|> <|cot_begin|> w5 <|cot_end|> <|sid_begin|>");
        let all: Vec<_> = a.vocab().all_sids().collect();
        let sa = a.score_candidates(&ctx, &all).unwrap();
        let sb = b.score_candidates(&ctx, &all).unwrap();
        assert!(sa.iter().zip(&sb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn gamma_zero_ignores_filler_cot() {
        let m = SyntheticModel::new(small_config(2, 4, 3, 0.0)).unwrap();
        let all: Vec<_> = m.vocab().all_sids().collect();
        let plain = toks("<|hist_begin|> <s_0_3> <s_1_0> <|hist_end|> <|sid_begin|>");
        let with_cot = toks("<|hist_begin|> <s_0_3> <s_1_0> <|hist_end|> <|cot_begin|> w1 w2 w3 the user . <|cot_end|> <|sid_begin|>");
        assert_eq!(
            m.score_candidates(&plain, &all).unwrap(),
            m.score_candidates(&with_cot, &all).unwrap()
        );
    }

    #[test]
    fn drift_creates_divergence() {
        let filler: String = (0..40).map(|i| format!("w{} ", i % 20)).collect();
        let ctx = toks(&format!(
            "<|hist_begin|> <s_0_3> <s_1_0> <|hist_end|> <|cot_begin|> {filler} <|cot_end|> <|sid_begin|>"
        ));
        let p0 = SyntheticModel::new(small_config(2, 4, 3, 0.0)).unwrap().item_distribution(&ctx).unwrap();
        let p6 = SyntheticModel::new(small_config(2, 4, 3, 0.6)).unwrap().item_distribution(&ctx).unwrap();
        let kl: f64 = p6.iter().zip(&p0).map(|(p, q)| p * (p / q).ln()).sum();
        assert!(kl > 0.0, "kl = {kl}");
    }

    #[test]
    fn gamma_eff_follows_dilution_formula() {
        let m = SyntheticModel::new(small_config(2, 4, 3, 0.5)).unwrap();
        let ctx = toks("<|hist_begin|> <s_0_3> <s_1_0> <|hist_end|> <|cot_begin|> w1 w2 <|cot_end|> <|sid_begin|>");
        assert!((m.effective_gamma(&ctx).unwrap() - 0.5 * 2.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn attention_is_uniform_without_drift() {
        let m = SyntheticModel::new(small_config(2, 4, 3, 0.0)).unwrap();
        let ctx = toks("<|hist_begin|> <s_0_3> <s_1_0> <|hist_end|> <|cot_begin|> w1 w2 w3 <|cot_end|> <|sid_begin|>");
        let p = m.attention_profile(&ctx).unwrap();
        assert_eq!(p.entries().len(), 5);
        for e in p.entries() {
            assert!((e.mass - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_favours_general_tokens_under_drift() {
        let mut cfg = small_config(2, 4, 3, 1.0);
        cfg.kappa = 1.0;
        let m = SyntheticModel::new(cfg).unwrap();
        let ctx = toks("<|hist_begin|> <s_0_3> <s_1_0> <|hist_end|> <|cot_begin|> w1 w2 <|cot_end|> <|sid_begin|>");
        let p = m.attention_profile(&ctx).unwrap();
        let g_min = p.entries().iter().filter(|e| e.tag == SubspaceTag::General).map(|e| e.mass).fold(1.0, f64::min);
        let s_max = p.entries().iter().filter(|e| e.tag == SubspaceTag::SemanticId).map(|e| e.mass).fold(0.0, f64::max);
        assert!(g_min > s_max);
        assert!((p.entries().iter().map(|e| e.mass).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mentions_shift_the_posterior() {
        let m = SyntheticModel::new(small_config(2, 4, 3, 0.0)).unwrap();
        let s = m
            .analyze(&toks("<|hist_begin|> <|hist_empty|> <|hist_end|> <|cot_begin|> topic_2 topic_2 topic_9 <|cot_end|> <|sid_begin|>"))
            .unwrap();
        assert_eq!(s.mentions, vec![0.0, 0.0, 2.0]);
        assert_eq!(s.n_gen, 3);
        assert!(s.history.is_empty());
    }

    #[test]
    fn malformed_contexts_are_rejected() {
        let m = SyntheticModel::new(small_config(2, 4, 3, 0.0)).unwrap();
        let cand = [SemanticId::new(vec![0, 0])];
        for bad in [
            "<|hist_begin|> <s_0_1> <|hist_end|> <|sid_begin|>",
            "<|hist_begin|> <s_1_1> <s_0_1> <|hist_end|> <|sid_begin|>",
            "<|cot_begin|> w1 <|sid_begin|>",
            "<|hist_begin|> <|hist_begin|> <|sid_begin|>",
        ] {
            assert!(matches!(
                m.score_candidates(&toks(bad), &cand),
                Err(BackendError::MalformedContext(_))
            ), "{bad}");
        }
        assert_eq!(
            m.score_candidates(&toks("<|hist_begin|> <|hist_empty|> <|hist_end|>"), &cand),
            Err(BackendError::ContextNotSidReady)
        );
        assert_eq!(
            m.score_candidates(&toks("<|sid_begin|>"), &[]),
            Err(BackendError::EmptyCandidates)
        );
        assert!(matches!(
            m.score_candidates(&toks("<|sid_begin|>"), &[SemanticId::new(vec![0, 4])]),
            Err(BackendError::InvalidCandidate(_))
        ));
        assert!(matches!(
            m.next_token_dist(&toks("<|sid_begin|> w1")),
            Err(BackendError::MalformedContext(_))
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = small_config(2, 4, 3, 0.5);
        for cfg in [
            SyntheticModelConfig { gamma: 1.5, ..base.clone() },
            SyntheticModelConfig { tau: 0.0, ..base.clone() },
            SyntheticModelConfig { clusters: 0, ..base.clone() },
            SyntheticModelConfig { n_general: 5, ..base.clone() },
            SyntheticModelConfig { lambda_sid: 0.0, ..base.clone() },
            SyntheticModelConfig { kappa: -1.0, ..base.clone() },
            SyntheticModelConfig { zipf_s: 0.0, ..base.clone() },
            SyntheticModelConfig { levels: 9, codes_per_level: 8, ..base.clone() },
        ] {
            assert!(matches!(SyntheticModel::new(cfg), Err(BackendError::InvalidConfig(_))));
        }
    }

    #[test]
    fn embeddings_cover_both_subspaces() {
        let m = SyntheticModel::new(small_config(2, 4, 3, 0.5)).unwrap();
        let e = m.token_embeddings(8);
        assert_eq!(e.len(), 8 + m.vocab().general_tokens().len());
        assert!(e.iter().all(|(_, _, v)| v.len() == 8));
        assert_eq!(e, m.token_embeddings(8));
    }
}
