//! Reasoning-chain compression.
//!
//! A raw chain of thought is reduced to a single sentence of the form
//! `The current user's preference is <summary>.` with at most `budget`
//! whitespace-separated tokens. The rule-based compressor strips filler
//! phrases, takes the most recent clause that carries a preference cue and
//! templatizes what follows the cue. It is deterministic and idempotent.
//! The remote compressor asks an instruction-following model through the
//! compress protocol and validates the reply against the same template.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{post_json, Limiter};

pub const TEMPLATE_PREFIX: &str = "The current user's preference is";
pub const FALLBACK_SUMMARY: &str = "unknown";

/// System message sent with every remote compression request. The
/// input/output example pair at its end is illustrative and was written for
/// this project.
pub const SYSTEM_PROMPT: &str = include_str!("../assets/compress_system.txt");

/// The template alone is five tokens plus at least one summary token.
pub const MIN_BUDGET: usize = 6;
pub const DEFAULT_BUDGET: usize = 32;

const TEMPLATE_TOKENS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressError {
    #[error("compression endpoint unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("reply does not contain a templated preference sentence: {0:?}")]
    NonConformingReply(String),
    #[error("compressed sentence has {tokens} tokens, budget is {budget}")]
    BudgetExceeded { tokens: usize, budget: usize },
    #[error("invalid compressor config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressorConfig {
    /// Maximum whitespace token count of the compressed sentence.
    pub budget: usize,
    pub cue_lexicon: Vec<String>,
    pub filler_lexicon: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for CompressorConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            cue_lexicon: strings(&[
                "repeatedly watches",
                "repeatedly buys",
                "repeatedly clicks",
                "keeps buying",
                "keeps watching",
                "is interested in",
                "is drawn to",
                "prefers",
                "likes",
                "enjoys",
                "loves",
                "favors",
                "leans toward",
                "focuses on",
            ]),
            filler_lexicon: strings(&[
                "I need to analyze",
                "Let me think",
                "Let me analyze",
                "Let's see",
                "First,",
                "First",
                "Second,",
                "Next,",
                "Then,",
                "Finally,",
                "In summary,",
                "Overall,",
                "Okay,",
                "Hmm,",
                "It seems that",
            ]),
        }
    }
}

impl CompressorConfig {
    pub fn with_budget(budget: usize) -> Self {
        Self {
            budget,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CompressError> {
        if self.budget < MIN_BUDGET {
            return Err(CompressError::InvalidConfig(format!(
                "budget must be >= {MIN_BUDGET} (the template alone uses {TEMPLATE_TOKENS} tokens)"
            )));
        }
        if self.cue_lexicon.iter().chain(&self.filler_lexicon).any(|p| p.trim().is_empty()) {
            return Err(CompressError::InvalidConfig("lexicon entries must not be blank".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    TemplateMismatch,
    BudgetExceeded { tokens: usize, budget: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn template_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^The current user's preference is .+\.$").expect("valid regex"))
}

fn template_search_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"The current user's preference is\s+([^.]+)\.").expect("valid regex"))
}

fn reply_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"The current user's preference is [^.\n]+\.").expect("valid regex"))
}

/// Accepts iff the sentence matches the template and fits the budget.
pub fn validate_compressed(candidate: &str, cfg: &CompressorConfig) -> Validation {
    let mut violations = Vec::new();
    if !template_regex().is_match(candidate) {
        violations.push(Violation::TemplateMismatch);
    }
    let tokens = token_count(candidate);
    if tokens > cfg.budget {
        violations.push(Violation::BudgetExceeded {
            tokens,
            budget: cfg.budget,
        });
    }
    Validation { violations }
}

/// Anything that turns a raw reasoning chain into a templated sentence.
pub trait Compressor: Send + Sync {
    fn compress(&self, cot: &str) -> Result<String, CompressError>;
}

fn phrase_pattern(phrases: &[String]) -> Option<Regex> {
    let mut sorted: Vec<&String> = phrases.iter().collect();
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let alts: Vec<String> = sorted
        .iter()
        .map(|p| {
            let p = p.trim();
            let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
            let lead = if word(p.chars().next()) { r"\b" } else { "" };
            let trail = if word(p.chars().last()) { r"\b" } else { "" };
            format!("{lead}{}{trail}", regex::escape(p))
        })
        .collect();
    if alts.is_empty() {
        return None;
    }
    Some(Regex::new(&format!("(?i)(?:{})", alts.join("|"))).expect("escaped alternation"))
}

#[derive(Debug, Clone)]
pub struct RuleBasedCompressor {
    cfg: CompressorConfig,
    filler: Option<Regex>,
    cue: Option<Regex>,
}

impl RuleBasedCompressor {
    pub fn new(cfg: CompressorConfig) -> Result<Self, CompressError> {
        cfg.validate()?;
        Ok(Self {
            filler: phrase_pattern(&cfg.filler_lexicon),
            cue: phrase_pattern(&cfg.cue_lexicon),
            cfg,
        })
    }

    pub fn config(&self) -> &CompressorConfig {
        &self.cfg
    }

    fn summary_budget(&self) -> usize {
        self.cfg.budget - TEMPLATE_TOKENS
    }

    /// Normalizes summary text so that templatizing it is a fixed point.
    fn sanitize(&self, raw: &str) -> String {
        let no_dots = raw.replace('.', " ");
        let joined = no_dots
            .split_whitespace()
            .take(self.summary_budget())
            .collect::<Vec<_>>()
            .join(" ");
        joined
            .trim_matches(|c: char| c.is_whitespace() || matches!(c, ',' | ':' | ';'))
            .to_string()
    }

    fn summarize(&self, cot: &str) -> Option<String> {
        // already templated: keep the most recent non-empty summary
        let templated = template_search_regex()
            .captures_iter(cot)
            .map(|c| self.sanitize(&c[1]))
            .filter(|s| !s.is_empty())
            .last();
        if templated.is_some() {
            return templated;
        }
        let stripped = match &self.filler {
            Some(re) => re.replace_all(cot, " ").into_owned(),
            None => cot.to_string(),
        };
        let cue = self.cue.as_ref()?;
        stripped
            .split(['.', '!', '?', ';', '\n'])
            .rev()
            .find_map(|clause| {
                let m = cue.find_iter(clause).last()?;
                let s = self.sanitize(&clause[m.end()..]);
                (!s.is_empty()).then_some(s)
            })
    }

    pub fn compress_str(&self, cot: &str) -> String {
        let summary = self.summarize(cot).unwrap_or_else(|| FALLBACK_SUMMARY.to_string());
        format!("{TEMPLATE_PREFIX} {summary}.")
    }
}

impl Compressor for RuleBasedCompressor {
    fn compress(&self, cot: &str) -> Result<String, CompressError> {
        Ok(self.compress_str(cot))
    }
}

/// One-shot rule-based compression.
pub fn compress_rule_based(cot: &str, cfg: &CompressorConfig) -> Result<String, CompressError> {
    Ok(RuleBasedCompressor::new(cfg.clone())?.compress_str(cot))
}

#[derive(Debug, Serialize)]
struct CompressRequest<'a> {
    system: &'a str,
    cot: &'a str,
}

#[derive(Debug, Deserialize)]
struct CompressReply {
    summary: String,
}

/// Client for `POST /v1/compress {"system", "cot"} -> {"summary"}`.
#[derive(Debug)]
pub struct RemoteCompressor {
    endpoint: String,
    cfg: CompressorConfig,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl RemoteCompressor {
    pub fn new(
        endpoint: &str,
        cfg: CompressorConfig,
        max_in_flight: usize,
        timeout_ms: u64,
    ) -> Result<Self, CompressError> {
        cfg.validate()?;
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(CompressError::InvalidConfig(format!("`{endpoint}` is not an http(s) URL")));
        }
        if max_in_flight == 0 {
            return Err(CompressError::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        Ok(Self {
            endpoint: crate::backend::remote_endpoint(endpoint, "/v1/compress"),
            cfg,
            agent: crate::backend::remote_agent(timeout_ms),
            limiter: Limiter::new(max_in_flight),
        })
    }

    /// Pulls the templated sentence out of a model reply and checks it.
    pub fn accept_reply(&self, reply: &str) -> Result<String, CompressError> {
        let sentence = reply_regex()
            .find(reply)
            .ok_or_else(|| CompressError::NonConformingReply(reply.to_string()))?
            .as_str()
            .to_string();
        for v in validate_compressed(&sentence, &self.cfg).violations {
            return Err(match v {
                Violation::TemplateMismatch => CompressError::NonConformingReply(reply.to_string()),
                Violation::BudgetExceeded { tokens, budget } => CompressError::BudgetExceeded { tokens, budget },
            });
        }
        Ok(sentence)
    }
}

impl Compressor for RemoteCompressor {
    fn compress(&self, cot: &str) -> Result<String, CompressError> {
        use crate::backend::PostError;
        let _permit = self.limiter.acquire();
        let reply: CompressReply = post_json(
            &self.agent,
            &self.endpoint,
            &CompressRequest {
                system: SYSTEM_PROMPT,
                cot,
            },
        )
        .map_err(|e| match e {
            PostError::Transport(m) => CompressError::RemoteUnavailable(m),
            PostError::Status(code, m) => CompressError::RemoteUnavailable(format!("HTTP {code}: {m}")),
            PostError::Decode(m) => CompressError::NonConformingReply(m),
        })?;
        self.accept_reply(&reply.summary)
    }
}

/// One-shot remote compression against `endpoint`.
pub fn compress_remote(cot: &str, endpoint: &str, cfg: &CompressorConfig) -> Result<String, CompressError> {
    RemoteCompressor::new(endpoint, cfg.clone(), 1, 30_000)?.compress(cot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compressor() -> RuleBasedCompressor {
        RuleBasedCompressor::new(CompressorConfig::default()).unwrap()
    }

    #[test]
    fn extracts_last_cue_clause() {
        let out = compressor().compress_str(
            "I need to analyze the history. First, the user repeatedly watches sci-fi movies.",
        );
        assert_eq!(out, "The current user's preference is sci-fi movies.");
    }

    #[test]
    fn empty_input_falls_back() {
        assert_eq!(compressor().compress_str(""), "The current user's preference is unknown.");
        assert_eq!(
            compressor().compress_str("nothing to see here"),
            "The current user's preference is unknown."
        );
    }

    #[test]
    fn templated_input_is_a_fixed_point() {
        let s = "The current user's preference is jazz.";
        assert_eq!(compressor().compress_str(s), s);
    }

    #[test]
    fn recency_wins_over_earlier_cues() {
        let out = compressor().compress_str("The user likes rock. Later the user enjoys jazz; then nothing.");
        assert_eq!(out, "The current user's preference is jazz.");
    }

    #[test]
    fn summary_is_truncated_to_budget() {
        let c = RuleBasedCompressor::new(CompressorConfig::with_budget(8)).unwrap();
        let out = c.compress_str("the user likes a b c d e f g h");
        assert_eq!(out, "The current user's preference is a b c.");
        assert!(validate_compressed(&out, c.config()).is_ok());
        assert_eq!(c.compress_str(&out), out);
    }

    #[test]
    fn synthetic_cot_compresses_to_cluster_mention() {
        let out = compressor().compress_str(
            "I need to analyze the history . w3 w9 . First , the user repeatedly watches topic_4 . w1 w2 w7 .",
        );
        assert_eq!(out, "The current user's preference is topic_4.");
    }

    #[test]
    fn validation_reports_reasons() {
        let cfg = CompressorConfig::with_budget(16);
        assert!(validate_compressed("The current user's preference is hiking gear.", &cfg).is_ok());
        assert_eq!(
            validate_compressed("User likes hiking.", &cfg).violations,
            vec![Violation::TemplateMismatch]
        );
        let long = format!("The current user's preference is {}.", vec!["x"; 295].join(" "));
        assert_eq!(
            validate_compressed(&long, &CompressorConfig::with_budget(32)).violations,
            vec![Violation::BudgetExceeded { tokens: 300, budget: 32 }]
        );
    }

    #[test]
    fn rejects_small_budget() {
        assert!(matches!(
            RuleBasedCompressor::new(CompressorConfig::with_budget(5)),
            Err(CompressError::InvalidConfig(_))
        ));
    }

    #[test]
    fn reply_extraction() {
        let c = RemoteCompressor::new("http://127.0.0.1:1", CompressorConfig::default(), 1, 100).unwrap();
        assert_eq!(
            c.accept_reply("The current user's preference is retro handheld consoles.").unwrap(),
            "The current user's preference is retro handheld consoles."
        );
        assert_eq!(
            c.accept_reply("Sure! The current user's preference is jazz vinyl.").unwrap(),
            "The current user's preference is jazz vinyl."
        );
        assert!(matches!(c.accept_reply("cannot summarize"), Err(CompressError::NonConformingReply(_))));
        let long = format!("The current user's preference is {}.", vec!["x"; 40].join(" "));
        assert!(matches!(c.accept_reply(&long), Err(CompressError::BudgetExceeded { .. })));
    }

    #[test]
    fn system_prompt_carries_the_template() {
        assert!(SYSTEM_PROMPT.starts_with("You are a user profiling expert."));
        assert!(SYSTEM_PROMPT.contains("Format: The current user's preference is [summary content]."));
    }
}
