//! Constrained semantic-ID beam search and the exhaustive enumeration oracle.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ScoringBackend};
use crate::vocab::{parse_sid_token, SemanticId, SID_BEGIN};

/// Largest item space [`enumerate_all_sids`] will score.
pub const ENUMERATION_LIMIT: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid beam config: {0}")]
    InvalidConfig(String),
    #[error("item space of {0} SIDs exceeds the enumeration limit of {ENUMERATION_LIMIT}")]
    SpaceTooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub num_beams: usize,
    pub num_return: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            num_beams: 32,
            num_return: 32,
        }
    }
}

impl BeamConfig {
    pub fn new(num_beams: usize, num_return: usize) -> Result<Self, DecodeError> {
        let cfg = Self { num_beams, num_return };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.num_beams == 0 || self.num_return == 0 {
            return Err(DecodeError::InvalidConfig("num_beams and num_return must be >= 1".into()));
        }
        if self.num_return > self.num_beams {
            return Err(DecodeError::InvalidConfig(format!(
                "num_return ({}) must not exceed num_beams ({})",
                self.num_return, self.num_beams
            )));
        }
        Ok(())
    }
}

/// Score descending, then SID ascending.
pub fn rank_order(a: &(SemanticId, f64), b: &(SemanticId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Survivors after each level of a beam search, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeamTrace {
    pub levels: Vec<Vec<(SemanticId, f64)>>,
}

/// Width-limited search over the `L` code levels. Scores are sums of step
/// log-probabilities; there is no length normalization since every SID has
/// the same length.
pub fn beam_search_sid(
    backend: &dyn ScoringBackend,
    context: &[String],
    cfg: &BeamConfig,
) -> Result<Vec<(SemanticId, f64)>, DecodeError> {
    beam_search_traced(backend, context, cfg).map(|(out, _)| out)
}

pub fn beam_search_traced(
    backend: &dyn ScoringBackend,
    context: &[String],
    cfg: &BeamConfig,
) -> Result<(Vec<(SemanticId, f64)>, BeamTrace), DecodeError> {
    cfg.validate()?;
    if !backend.capabilities().supports_full_distribution {
        return Err(BackendError::UnsupportedCapability("full next-token distributions").into());
    }
    if context.last().map(String::as_str) != Some(SID_BEGIN) {
        return Err(BackendError::ContextNotSidReady.into());
    }
    let vocab = backend.vocab();
    let mut beams: Vec<(SemanticId, f64)> = vec![(SemanticId::new(Vec::new()), 0.0)];
    let mut trace = BeamTrace::default();
    let mut ctx = context.to_vec();
    for level in 0..vocab.levels() {
        let mut expanded = Vec::with_capacity(beams.len() * vocab.codes_per_level() as usize);
        for (prefix, score) in &beams {
            ctx.truncate(context.len());
            ctx.extend(vocab.sid_tokens(prefix));
            for (tok, p) in backend.next_token_dist(&ctx)? {
                let code = match parse_sid_token(&tok) {
                    Some((l, code)) if l == level && code < vocab.codes_per_level() => code,
                    _ => {
                        return Err(BackendError::Protocol(format!(
                            "token `{tok}` is not a level-{level} SID token"
                        ))
                        .into())
                    }
                };
                if p <= 0.0 {
                    continue;
                }
                let mut codes = prefix.codes().to_vec();
                codes.push(code);
                expanded.push((SemanticId::new(codes), score + p.ln()));
            }
        }
        expanded.sort_by(rank_order);
        expanded.truncate(cfg.num_beams);
        trace.levels.push(expanded.clone());
        beams = expanded;
    }
    beams.truncate(cfg.num_return);
    Ok((beams, trace))
}

/// Exact ranking of every SID. Oracle for beam search.
pub fn enumerate_all_sids(
    backend: &dyn ScoringBackend,
    context: &[String],
) -> Result<Vec<(SemanticId, f64)>, DecodeError> {
    let vocab = backend.vocab();
    let n = vocab.item_count();
    if n > ENUMERATION_LIMIT {
        return Err(DecodeError::SpaceTooLarge(n));
    }
    let all: Vec<SemanticId> = vocab.all_sids().collect();
    let scores = backend.score_candidates(context, &all)?;
    let mut ranked: Vec<_> = all.into_iter().zip(scores).collect();
    ranked.sort_by(rank_order);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{SyntheticModel, SyntheticModelConfig};

    fn model(levels: usize, c: u32, gamma: f64, seed: u64) -> SyntheticModel {
        SyntheticModel::new(SyntheticModelConfig {
            levels,
            codes_per_level: c,
            clusters: 3,
            n_general: 64,
            gamma,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn ctx(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    const CTX: &str = "<|hist_begin|> <s_0_1> <s_1_3> <|hist_end|> <|cot_begin|> w1 w2 w3 <|cot_end|> <|sid_begin|>";
    const CTX3: &str =
        "<|hist_begin|> <s_0_1> <s_1_3> <s_2_0> <|hist_end|> <|cot_begin|> w1 w2 w3 <|cot_end|> <|sid_begin|>";

    #[test]
    fn wide_beam_equals_enumeration() {
        let m = model(2, 4, 0.5, 3);
        let beam = beam_search_sid(&m, &ctx(CTX), &BeamConfig::new(16, 16).unwrap()).unwrap();
        let oracle = enumerate_all_sids(&m, &ctx(CTX)).unwrap();
        assert_eq!(beam.len(), 16);
        for (b, o) in beam.iter().zip(&oracle) {
            assert_eq!(b.0, o.0);
            assert_eq!(b.1.to_bits(), o.1.to_bits());
        }
    }

    #[test]
    fn width_one_is_greedy() {
        let m = model(3, 4, 0.5, 5);
        let beam = beam_search_sid(&m, &ctx(CTX3), &BeamConfig::new(1, 1).unwrap()).unwrap();
        let mut prefix = ctx(CTX3);
        let mut codes = Vec::new();
        let mut total = 0.0;
        for _ in 0..3 {
            let dist = m.next_token_dist(&prefix).unwrap();
            let (best, p) = dist
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |acc, (i, (_, p))| if *p > acc.1 { (i, *p) } else { acc });
            codes.push(best as u32);
            total += p.ln();
            prefix.push(dist[best].0.clone());
        }
        assert_eq!(beam[0].0.codes(), &codes[..]);
        assert!((beam[0].1 - total).abs() < 1e-12);
    }

    #[test]
    fn survivors_extend_earlier_survivors() {
        let m = model(3, 4, 0.3, 9);
        let (_, trace) = beam_search_traced(&m, &ctx(CTX3), &BeamConfig::new(5, 3).unwrap()).unwrap();
        for pair in trace.levels.windows(2) {
            for (sid, _) in &pair[1] {
                let parent = &sid.codes()[..sid.len() - 1];
                assert!(pair[0].iter().any(|(p, _)| p.codes() == parent));
            }
        }
    }

    #[test]
    fn uniform_model_enumerates_lexicographically() {
        let m = model(2, 3, 0.0, 1);
        let e = enumerate_all_sids(&m, &ctx("<|hist_begin|> <|hist_empty|> <|hist_end|> <|sid_begin|>")).unwrap();
        let sids: Vec<_> = e.iter().map(|x| x.0.clone()).collect();
        let expected: Vec<_> = m.vocab().all_sids().collect();
        assert_eq!(sids, expected);
        for (_, s) in &e {
            assert!((s - (1.0f64 / 9.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_is_normalized() {
        let m = model(2, 4, 0.7, 2);
        let e = enumerate_all_sids(&m, &ctx(CTX)).unwrap();
        assert!((e.iter().map(|x| x.1.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn closed_form_two_item_ranking() {
        let cfg = SyntheticModelConfig {
            levels: 1,
            codes_per_level: 2,
            clusters: 1,
            n_general: 64,
            gamma: 0.0,
            ..Default::default()
        };
        let m = SyntheticModel::from_parts(cfg, vec![vec![0.75, 0.25]], vec![1.0], vec![0.5, 0.5]).unwrap();
        let e = enumerate_all_sids(&m, &ctx("<|hist_begin|> <s_0_0> <|hist_end|> <|sid_begin|>")).unwrap();
        assert_eq!(e[0].0.codes(), &[0]);
        assert!((e[0].1 - 0.75f64.ln()).abs() < 1e-15);
        assert_eq!(e[1].0.codes(), &[1]);
        assert!((e[1].1 - 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn error_paths() {
        let m = model(2, 4, 0.5, 3);
        assert_eq!(
            beam_search_sid(&m, &ctx("<|hist_begin|> <|hist_empty|> <|hist_end|>"), &BeamConfig::default()),
            Err(DecodeError::Backend(BackendError::ContextNotSidReady))
        );
        assert!(BeamConfig::new(2, 3).is_err());
        assert!(BeamConfig::new(0, 0).is_err());
        let big = model(5, 8, 0.5, 3);
        assert_eq!(enumerate_all_sids(&big, &ctx(CTX)), Err(DecodeError::SpaceTooLarge(32768)));
    }
}
