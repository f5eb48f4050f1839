//! Scoring backends: the `P(y | context)` oracle behind every context score.

mod remote;
mod synthetic;

use thiserror::Error;

use crate::vocab::{SemanticId, SubspaceTag, VocabError, SID_BEGIN};

pub use remote::{RemoteBackend, RemoteConfig, ScoreRequest, ScoreResponse};
pub(crate) use remote::{
    agent as remote_agent, endpoint as remote_endpoint, post_json, Limiter, PostError,
};
pub use synthetic::{SyntheticModel, SyntheticModelConfig, CLUSTER_TOKEN_PREFIX, SCAFFOLD_WORDS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("context must end with {SID_BEGIN}")]
    ContextNotSidReady,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend does not support {0}")]
    UnsupportedCapability(&'static str),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("malformed context: {0}")]
    MalformedContext(String),
    #[error("invalid candidate: {0}")]
    InvalidCandidate(#[from] VocabError),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub supports_attention: bool,
    pub supports_full_distribution: bool,
}

/// One attended context token.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionEntry {
    pub token: String,
    pub tag: SubspaceTag,
    pub mass: f64,
}

/// Attention mass over the non-structural tokens of one context, in context
/// order. Masses sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProfile {
    entries: Vec<AttentionEntry>,
}

impl AttentionProfile {
    /// Builds a profile from non-negative weights, normalizing them to sum
    /// to one. Structural tokens are rejected.
    pub fn from_weights(
        entries: impl IntoIterator<Item = (String, SubspaceTag, f64)>,
    ) -> Result<Self, BackendError> {
        let raw: Vec<_> = entries.into_iter().collect();
        if raw.is_empty() {
            return Err(BackendError::MalformedContext("no attendable tokens".into()));
        }
        if raw.iter().any(|(_, tag, _)| *tag == SubspaceTag::Structural) {
            return Err(BackendError::MalformedContext(
                "structural tokens carry no attention mass".into(),
            ));
        }
        if raw.iter().any(|(_, _, w)| !w.is_finite() || *w < 0.0) {
            return Err(BackendError::MalformedContext("attention weights must be finite and >= 0".into()));
        }
        let total: f64 = raw.iter().map(|(_, _, w)| w).sum();
        if total <= 0.0 {
            return Err(BackendError::MalformedContext("attention weights sum to zero".into()));
        }
        Ok(Self {
            entries: raw
                .into_iter()
                .map(|(token, tag, w)| AttentionEntry { token, tag, mass: w / total })
                .collect(),
        })
    }

    pub fn entries(&self) -> &[AttentionEntry] {
        &self.entries
    }

    pub fn count(&self, tag: SubspaceTag) -> usize {
        self.entries.iter().filter(|e| e.tag == tag).count()
    }

    pub fn mass(&self, tag: SubspaceTag) -> f64 {
        self.entries.iter().filter(|e| e.tag == tag).map(|e| e.mass).sum()
    }
}

/// A model that scores semantic IDs after a context ending in `<|sid_begin|>`.
///
/// Implementations must be deterministic: the same context and candidates
/// always produce the same values.
pub trait ScoringBackend: Send + Sync {
    fn vocab(&self) -> &crate::vocab::Vocabulary;

    fn capabilities(&self) -> Capabilities;

    /// Total log-probability of each candidate's `L` code tokens.
    fn score_candidates(
        &self,
        context: &[String],
        candidates: &[SemanticId],
    ) -> Result<Vec<f64>, BackendError>;

    /// Distribution over the next token given a context ending in
    /// `<|sid_begin|>` followed by zero or more SID code tokens.
    fn next_token_dist(&self, _context: &[String]) -> Result<Vec<(String, f64)>, BackendError> {
        Err(BackendError::UnsupportedCapability("full next-token distributions"))
    }

    fn attention_profile(&self, _context: &[String]) -> Result<AttentionProfile, BackendError> {
        Err(BackendError::UnsupportedCapability("attention profiles"))
    }
}

pub(crate) fn check_score_request(
    vocab: &crate::vocab::Vocabulary,
    context: &[String],
    candidates: &[SemanticId],
) -> Result<(), BackendError> {
    if candidates.is_empty() {
        return Err(BackendError::EmptyCandidates);
    }
    if context.last().map(String::as_str) != Some(SID_BEGIN) {
        return Err(BackendError::ContextNotSidReady);
    }
    for c in candidates {
        vocab.check_sid(c)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_normalizes_weights() {
        let p = AttentionProfile::from_weights(vec![
            ("a".to_string(), SubspaceTag::General, 2.0),
            ("<s_0_1>".to_string(), SubspaceTag::SemanticId, 6.0),
        ])
        .unwrap();
        assert_eq!(p.entries()[0].mass, 0.25);
        assert_eq!(p.mass(SubspaceTag::SemanticId), 0.75);
        assert_eq!(p.count(SubspaceTag::General), 1);
    }

    #[test]
    fn profile_rejects_degenerate_input() {
        assert!(AttentionProfile::from_weights(Vec::new()).is_err());
        assert!(AttentionProfile::from_weights(vec![("a".into(), SubspaceTag::General, 0.0)]).is_err());
        assert!(AttentionProfile::from_weights(vec![("a".into(), SubspaceTag::General, -1.0)]).is_err());
        assert!(AttentionProfile::from_weights(vec![(
            SID_BEGIN.into(),
            SubspaceTag::Structural,
            1.0
        )])
        .is_err());
    }
}
