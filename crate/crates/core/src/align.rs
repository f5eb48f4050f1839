//! Three-context contrastive reranking and the CPMI score decomposition.
//!
//! Each candidate `y` is scored under three contexts:
//! Expert (history plus compressed reasoning ĉ), Amateur (raw reasoning c
//! with a null history) and Baseline (history only). Scores are z-normalized
//! per context over the candidate set and combined as
//! `S(y) = (1 + α)·z̃_E − α·(z̃_A − z̃_B)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ScoringBackend};
use crate::compress::{CompressError, Compressor};
use crate::decode::{beam_search_sid, rank_order, BeamConfig, DecodeError};
use crate::evalx::EpisodeRecord;
use crate::vocab::{
    tokenize_text, SemanticId, Vocabulary, COT_BEGIN, COT_END, HIST_BEGIN, HIST_EMPTY, HIST_END, SID_BEGIN,
};

/// Smallest stabilizer actually used by [`zscore_normalize`].
pub const EPSILON_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("history must not be empty")]
    EmptyHistory,
    #[error("cannot normalize an empty score list")]
    EmptyInput,
    #[error("epsilon must be a non-negative number, got {0}")]
    InvalidEpsilon(f64),
    #[error("alpha must be >= 0, got {0}")]
    NegativeAlpha(f64),
    #[error("expert context needs a non-empty compressed chain")]
    MissingCompressed,
    #[error("invalid align config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Compress(#[from] CompressError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Expert,
    Amateur,
    Baseline,
}

fn history_block(history: &[SemanticId], out: &mut Vec<String>) -> Result<(), AlignError> {
    if history.is_empty() {
        return Err(AlignError::EmptyHistory);
    }
    out.push(HIST_BEGIN.to_string());
    for sid in history {
        out.extend(sid.tokens());
    }
    out.push(HIST_END.to_string());
    Ok(())
}

fn cot_block(tokens: &[String], out: &mut Vec<String>) {
    out.push(COT_BEGIN.to_string());
    out.extend(tokens.iter().cloned());
    out.push(COT_END.to_string());
}

/// Lays out one of the three scoring contexts, ending in `<|sid_begin|>`.
pub fn build_context(
    kind: ContextKind,
    history: &[SemanticId],
    cot_tokens: &[String],
    compressed: &[String],
) -> Result<Vec<String>, AlignError> {
    let mut out = Vec::new();
    match kind {
        ContextKind::Baseline => history_block(history, &mut out)?,
        ContextKind::Expert => {
            history_block(history, &mut out)?;
            if compressed.is_empty() {
                return Err(AlignError::MissingCompressed);
            }
            cot_block(compressed, &mut out);
        }
        ContextKind::Amateur => {
            out.extend([HIST_BEGIN, HIST_EMPTY, HIST_END].map(String::from));
            cot_block(cot_tokens, &mut out);
        }
    }
    out.push(SID_BEGIN.to_string());
    Ok(out)
}

/// History followed by the raw reasoning chain: what a thinking model sees
/// before it starts emitting the SID.
pub fn think_on_context(history: &[SemanticId], cot_tokens: &[String]) -> Result<Vec<String>, AlignError> {
    let mut out = Vec::new();
    history_block(history, &mut out)?;
    cot_block(cot_tokens, &mut out);
    out.push(SID_BEGIN.to_string());
    Ok(out)
}

/// `(s_i − μ) / (σ + ε)` with the population standard deviation. `ε` below
/// [`EPSILON_FLOOR`] is raised to it, so a constant list maps to zeros.
pub fn zscore_normalize(scores: &[f64], epsilon: f64) -> Result<Vec<f64>, AlignError> {
    if scores.is_empty() {
        return Err(AlignError::EmptyInput);
    }
    if epsilon.is_nan() || epsilon < 0.0 || epsilon.is_infinite() {
        return Err(AlignError::InvalidEpsilon(epsilon));
    }
    let eps = epsilon.max(EPSILON_FLOOR);
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + eps;
    Ok(scores.iter().map(|s| (s - mean) / denom).collect())
}

pub fn contrastive_score(zt_e: f64, zt_a: f64, zt_b: f64, alpha: f64) -> Result<f64, AlignError> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(AlignError::NegativeAlpha(alpha));
    }
    Ok((1.0 + alpha) * zt_e - alpha * (zt_a - zt_b))
}

/// `total = log P(y | x, c)`, `prior = log P(y | c)` and their difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cpmi {
    pub cpmi: f64,
    pub prior: f64,
    pub total: f64,
}

/// Splits the think-on score of `y` into the history-attributable CPMI and
/// the reasoning-only prior. The prior is scored under the Amateur context.
pub fn cpmi_decompose(
    backend: &dyn ScoringBackend,
    history: &[SemanticId],
    cot_tokens: &[String],
    y: &SemanticId,
) -> Result<Cpmi, AlignError> {
    let joint = think_on_context(history, cot_tokens)?;
    let prior_ctx = build_context(ContextKind::Amateur, history, cot_tokens, &[])?;
    let candidate = std::slice::from_ref(y);
    let total = backend.score_candidates(&joint, candidate)?[0];
    let prior = backend.score_candidates(&prior_ctx, candidate)?[0];
    Ok(Cpmi {
        cpmi: total - prior,
        prior,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePolicy {
    ExpertBeam,
    UnionExpertBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub candidate_policy: CandidatePolicy,
    pub num_beams: usize,
    pub num_return: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epsilon: 1e-6,
            candidate_policy: CandidatePolicy::UnionExpertBaseline,
            num_beams: 32,
            num_return: 32,
        }
    }
}

impl AlignConfig {
    pub fn beam(&self) -> BeamConfig {
        BeamConfig {
            num_beams: self.num_beams,
            num_return: self.num_return,
        }
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        if self.alpha.is_nan() || self.alpha < 0.0 || self.alpha.is_infinite() {
            return Err(AlignError::NegativeAlpha(self.alpha));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(AlignError::InvalidEpsilon(self.epsilon));
        }
        self.beam()
            .validate()
            .map_err(|e| AlignError::InvalidConfig(e.to_string()))
    }
}

/// Candidate pool for one episode, from beam search under the Expert
/// context and, for the union policy, the Baseline context as well.
pub fn generate_candidates(
    backend: &dyn ScoringBackend,
    episode: &EpisodeRecord,
    cfg: &AlignConfig,
    compressed: &[String],
) -> Result<Vec<SemanticId>, AlignError> {
    cfg.validate()?;
    let beam = cfg.beam();
    let expert = build_context(ContextKind::Expert, &episode.history, &[], compressed)?;
    let mut out: Vec<SemanticId> = beam_search_sid(backend, &expert, &beam)?.into_iter().map(|(s, _)| s).collect();
    if cfg.candidate_policy == CandidatePolicy::UnionExpertBaseline {
        let baseline = build_context(ContextKind::Baseline, &episode.history, &[], &[])?;
        for (sid, _) in beam_search_sid(backend, &baseline, &beam)? {
            if !out.contains(&sid) {
                out.push(sid);
            }
        }
    }
    Ok(out)
}

/// Raw and normalized context scores for one episode's candidate pool, in
/// pool order. Independent of α, so one scoring serves a whole α sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeScores {
    pub compressed: String,
    pub candidates: Vec<SemanticId>,
    pub z_e: Vec<f64>,
    pub z_a: Vec<f64>,
    pub z_b: Vec<f64>,
    pub zt_e: Vec<f64>,
    pub zt_a: Vec<f64>,
    pub zt_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub sid: SemanticId,
    pub z_e: f64,
    pub z_a: f64,
    pub z_b: f64,
    pub zt_e: f64,
    pub zt_a: f64,
    pub zt_b: f64,
    pub drift: f64,
    pub final_score: f64,
}

impl EpisodeScores {
    /// Candidates sorted by final score, ties by SID.
    pub fn rank(&self, alpha: f64) -> Result<Vec<ScoredCandidate>, AlignError> {
        let mut out = Vec::with_capacity(self.candidates.len());
        for (i, sid) in self.candidates.iter().enumerate() {
            let (zt_e, zt_a, zt_b) = (self.zt_e[i], self.zt_a[i], self.zt_b[i]);
            out.push(ScoredCandidate {
                sid: sid.clone(),
                z_e: self.z_e[i],
                z_a: self.z_a[i],
                z_b: self.z_b[i],
                zt_e,
                zt_a,
                zt_b,
                drift: zt_a - zt_b,
                final_score: contrastive_score(zt_e, zt_a, zt_b, alpha)?,
            });
        }
        out.sort_by(|a, b| rank_order(&(a.sid.clone(), a.final_score), &(b.sid.clone(), b.final_score)));
        Ok(out)
    }
}

/// Compresses the chain, builds the candidate pool (the episode's own list
/// when it carries one) and scores it under all three contexts.
pub fn score_episode(
    backend: &dyn ScoringBackend,
    episode: &EpisodeRecord,
    cfg: &AlignConfig,
    compressor: &dyn Compressor,
) -> Result<EpisodeScores, AlignError> {
    cfg.validate()?;
    if episode.history.is_empty() {
        return Err(AlignError::EmptyHistory);
    }
    let compressed = compressor.compress(&episode.cot)?;
    let c_hat = tokenize_text(&compressed);
    let cot = tokenize_text(&episode.cot);
    let candidates = match &episode.candidates {
        Some(c) => c.clone(),
        None => generate_candidates(backend, episode, cfg, &c_hat)?,
    };
    let expert = build_context(ContextKind::Expert, &episode.history, &cot, &c_hat)?;
    let amateur = build_context(ContextKind::Amateur, &episode.history, &cot, &c_hat)?;
    let baseline = build_context(ContextKind::Baseline, &episode.history, &cot, &c_hat)?;
    let score = |ctx: &[String]| backend.score_candidates(ctx, &candidates);
    let (z_e, (z_a, z_b)) = rayon::join(|| score(&expert), || rayon::join(|| score(&amateur), || score(&baseline)));
    let (z_e, z_a, z_b) = (z_e?, z_a?, z_b?);
    Ok(EpisodeScores {
        compressed,
        zt_e: zscore_normalize(&z_e, cfg.epsilon)?,
        zt_a: zscore_normalize(&z_a, cfg.epsilon)?,
        zt_b: zscore_normalize(&z_b, cfg.epsilon)?,
        candidates,
        z_e,
        z_a,
        z_b,
    })
}

/// Full pipeline for one episode at `cfg.alpha`.
pub fn rerank(
    backend: &dyn ScoringBackend,
    episode: &EpisodeRecord,
    cfg: &AlignConfig,
    compressor: &dyn Compressor,
) -> Result<Vec<ScoredCandidate>, AlignError> {
    score_episode(backend, episode, cfg, compressor)?.rank(cfg.alpha)
}

#[derive(Serialize)]
struct ScoreLine {
    sid: String,
    #[serde(rename = "zE")]
    z_e: f64,
    #[serde(rename = "zA")]
    z_a: f64,
    #[serde(rename = "zB")]
    z_b: f64,
    #[serde(rename = "ztE")]
    zt_e: f64,
    #[serde(rename = "ztA")]
    zt_a: f64,
    #[serde(rename = "ztB")]
    zt_b: f64,
    drift: f64,
    #[serde(rename = "final")]
    final_score: f64,
}

#[derive(Serialize)]
struct RerankLine<'a> {
    user: &'a str,
    ranking: Vec<String>,
    scores: Vec<ScoreLine>,
}

/// One line of rerank output JSONL (no trailing newline).
pub fn rerank_json_line(user: &str, ranked: &[ScoredCandidate], vocab: &Vocabulary) -> String {
    let line = RerankLine {
        user,
        ranking: ranked.iter().map(|c| vocab.render_sid(&c.sid)).collect(),
        scores: ranked
            .iter()
            .map(|c| ScoreLine {
                sid: vocab.render_sid(&c.sid),
                z_e: c.z_e,
                z_a: c.z_a,
                z_b: c.z_b,
                zt_e: c.zt_e,
                zt_a: c.zt_a,
                zt_b: c.zt_b,
                drift: c.drift,
                final_score: c.final_score,
            })
            .collect(),
    };
    serde_json::to_string(&line).expect("rerank line serializes")
}
