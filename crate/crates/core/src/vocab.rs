//! Partitioned token universe and the semantic-ID text codec.
//!
//! Every token belongs to exactly one of three disjoint classes: SID code
//! tokens `<s_{level}_{code}>`, general (natural-language) tokens, and a
//! fixed set of structural delimiters.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HIST_BEGIN: &str = "<|hist_begin|>";
pub const HIST_END: &str = "<|hist_end|>";
pub const HIST_EMPTY: &str = "<|hist_empty|>";
pub const COT_BEGIN: &str = "<|cot_begin|>";
pub const COT_END: &str = "<|cot_end|>";
pub const SID_BEGIN: &str = "<|sid_begin|>";
pub const SID_END: &str = "<|sid_end|>";

pub const STRUCTURAL_TOKENS: [&str; 7] = [
    HIST_BEGIN, HIST_END, HIST_EMPTY, COT_BEGIN, COT_END, SID_BEGIN, SID_END,
];

/// Upper bound on `C^L` accepted by [`Vocabulary::new`].
pub const MAX_ITEMS: usize = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VocabError {
    #[error("malformed SID `{text}`: {reason}")]
    MalformedSid { text: String, reason: String },
    #[error("SID level order violated in `{text}`: expected level {expected}, found {found}")]
    LevelOrderError {
        text: String,
        expected: usize,
        found: usize,
    },
    #[error("SID code {code} at level {level} is out of range (codes per level = {codes_per_level})")]
    CodeRangeError {
        level: usize,
        code: u32,
        codes_per_level: u32,
    },
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
}

/// Which subspace a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubspaceTag {
    SemanticId,
    General,
    Structural,
}

impl SubspaceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SubspaceTag::SemanticId => "sid",
            SubspaceTag::General => "general",
            SubspaceTag::Structural => "structural",
        }
    }
}

impl fmt::Display for SubspaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An L-level hierarchical item code. Ordering is lexicographic over codes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticId {
    codes: Vec<u32>,
}

impl SemanticId {
    pub fn new(codes: Vec<u32>) -> Self {
        Self { codes }
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Mixed-radix index; lexicographic SID order equals index order.
    pub fn index(&self, codes_per_level: u32) -> usize {
        self.codes
            .iter()
            .fold(0usize, |acc, &c| acc * codes_per_level as usize + c as usize)
    }

    /// The `L` code tokens, `<s_0_..>` first.
    pub fn tokens(&self) -> Vec<String> {
        self.codes
            .iter()
            .enumerate()
            .map(|(level, &code)| sid_token(level, code))
            .collect()
    }

    pub fn from_index(mut index: usize, levels: usize, codes_per_level: u32) -> Self {
        let c = codes_per_level as usize;
        let mut codes = vec![0u32; levels];
        for slot in codes.iter_mut().rev() {
            *slot = (index % c) as u32;
            index /= c;
        }
        Self { codes }
    }
}

/// Canonical single-token surface form `<s_{level}_{code}>`.
pub fn sid_token(level: usize, code: u32) -> String {
    format!("<s_{level}_{code}>")
}

fn parse_decimal(s: &str) -> Option<u64> {
    if s.is_empty() || s.len() > 9 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    // canonical form has no leading zeros
    if s.len() > 1 && s.starts_with('0') {
        return None;
    }
    s.parse().ok()
}

/// Parses one `<s_{level}_{code}>` token without range checks.
pub fn parse_sid_token(token: &str) -> Option<(usize, u32)> {
    let inner = token.strip_prefix("<s_")?.strip_suffix('>')?;
    let (level, code) = inner.split_once('_')?;
    Some((parse_decimal(level)? as usize, parse_decimal(code)? as u32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub levels: usize,
    pub codes_per_level: u32,
    pub general_tokens: Vec<String>,
}

/// The token universe. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    levels: usize,
    codes_per_level: u32,
    general_tokens: Vec<String>,
    general_set: HashSet<String>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.levels == other.levels
            && self.codes_per_level == other.codes_per_level
            && self.general_tokens == other.general_tokens
    }
}

impl Vocabulary {
    pub fn new(
        levels: usize,
        codes_per_level: u32,
        general_tokens: Vec<String>,
    ) -> Result<Self, VocabError> {
        let invalid = |m: String| Err(VocabError::InvalidVocabulary(m));
        if levels == 0 {
            return invalid("levels must be >= 1".into());
        }
        if codes_per_level < 2 {
            return invalid("codes_per_level must be >= 2".into());
        }
        match (codes_per_level as usize).checked_pow(levels as u32) {
            Some(n) if n <= MAX_ITEMS => {}
            _ => return invalid(format!("item space exceeds {MAX_ITEMS} items")),
        }
        let mut general_set = HashSet::with_capacity(general_tokens.len());
        for tok in &general_tokens {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return invalid(format!("general token `{tok}` is empty or contains whitespace"));
            }
            if STRUCTURAL_TOKENS.contains(&tok.as_str()) {
                return invalid(format!("general token `{tok}` collides with a structural token"));
            }
            if parse_sid_token(tok).is_some() {
                return invalid(format!("general token `{tok}` uses the SID token grammar"));
            }
            if !general_set.insert(tok.clone()) {
                return invalid(format!("duplicate general token `{tok}`"));
            }
        }
        Ok(Self {
            levels,
            codes_per_level,
            general_tokens,
            general_set,
        })
    }

    pub fn from_file(file: VocabularyFile) -> Result<Self, VocabError> {
        Self::new(file.levels, file.codes_per_level, file.general_tokens)
    }

    pub fn from_json(json: &str) -> Result<Self, VocabError> {
        let file: VocabularyFile = serde_json::from_str(json)
            .map_err(|e| VocabError::InvalidVocabulary(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> VocabularyFile {
        VocabularyFile {
            levels: self.levels,
            codes_per_level: self.codes_per_level,
            general_tokens: self.general_tokens.clone(),
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn codes_per_level(&self) -> u32 {
        self.codes_per_level
    }

    pub fn general_tokens(&self) -> &[String] {
        &self.general_tokens
    }

    pub fn item_count(&self) -> usize {
        (self.codes_per_level as usize).pow(self.levels as u32)
    }

    /// All SIDs in lexicographic order.
    pub fn all_sids(&self) -> impl Iterator<Item = SemanticId> + '_ {
        (0..self.item_count()).map(|i| SemanticId::from_index(i, self.levels, self.codes_per_level))
    }

    pub fn check_sid(&self, sid: &SemanticId) -> Result<(), VocabError> {
        if sid.len() != self.levels {
            return Err(VocabError::MalformedSid {
                text: format!("{:?}", sid.codes()),
                reason: format!("expected {} levels, found {}", self.levels, sid.len()),
            });
        }
        for (level, &code) in sid.codes().iter().enumerate() {
            if code >= self.codes_per_level {
                return Err(VocabError::CodeRangeError {
                    level,
                    code,
                    codes_per_level: self.codes_per_level,
                });
            }
        }
        Ok(())
    }

    /// Decodes a concatenation of `L` SID tokens.
    pub fn parse_sid(&self, text: &str) -> Result<SemanticId, VocabError> {
        let malformed = |reason: &str| VocabError::MalformedSid {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let mut codes = Vec::with_capacity(self.levels);
        let mut rest = text;
        while !rest.is_empty() {
            let end = rest.find('>').ok_or_else(|| malformed("unterminated token"))?;
            let (tok, tail) = rest.split_at(end + 1);
            let (level, code) =
                parse_sid_token(tok).ok_or_else(|| malformed("token does not match <s_LEVEL_CODE>"))?;
            let expected = codes.len();
            if level != expected || level >= self.levels {
                return Err(VocabError::LevelOrderError {
                    text: text.to_string(),
                    expected,
                    found: level,
                });
            }
            if code >= self.codes_per_level {
                return Err(VocabError::CodeRangeError {
                    level,
                    code,
                    codes_per_level: self.codes_per_level,
                });
            }
            codes.push(code);
            rest = tail;
        }
        if codes.len() != self.levels {
            return Err(malformed(&format!(
                "expected {} level tokens, found {}",
                self.levels,
                codes.len()
            )));
        }
        Ok(SemanticId::new(codes))
    }

    pub fn sid_tokens(&self, sid: &SemanticId) -> Vec<String> {
        sid.tokens()
    }

    pub fn render_sid(&self, sid: &SemanticId) -> String {
        self.sid_tokens(sid).concat()
    }

    /// Strict classification; tokens outside the vocabulary are an error.
    pub fn classify_token(&self, token: &str) -> Result<SubspaceTag, VocabError> {
        if STRUCTURAL_TOKENS.contains(&token) {
            return Ok(SubspaceTag::Structural);
        }
        if let Some((level, code)) = parse_sid_token(token) {
            if level < self.levels && code < self.codes_per_level {
                return Ok(SubspaceTag::SemanticId);
            }
            return Err(VocabError::UnknownToken(token.to_string()));
        }
        if self.general_set.contains(token) {
            return Ok(SubspaceTag::General);
        }
        Err(VocabError::UnknownToken(token.to_string()))
    }

    /// Classification used when scoring free text: anything that is not a
    /// structural token or an in-range SID token counts as general.
    pub fn tag_lenient(&self, token: &str) -> SubspaceTag {
        if STRUCTURAL_TOKENS.contains(&token) {
            return SubspaceTag::Structural;
        }
        match parse_sid_token(token) {
            Some((level, code)) if level < self.levels && code < self.codes_per_level => {
                SubspaceTag::SemanticId
            }
            _ => SubspaceTag::General,
        }
    }

    /// Every token of the vocabulary: structural, then SID, then general.
    pub fn all_tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = STRUCTURAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for level in 0..self.levels {
            for code in 0..self.codes_per_level {
                out.push(sid_token(level, code));
            }
        }
        out.extend(self.general_tokens.iter().cloned());
        out
    }
}

/// Splits text on whitespace and detaches trailing punctuation into tokens
/// of their own, so `"jazz."` becomes `["jazz", "."]`.
pub fn tokenize_text(text: &str) -> Vec<String> {
    const PUNCT: &[char] = &['.', ',', ';', ':', '!', '?'];
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let stem = word.trim_end_matches(PUNCT);
        if !stem.is_empty() {
            out.push(stem.to_string());
        }
        out.extend(word[stem.len()..].chars().map(String::from));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(levels: usize, c: u32) -> Vocabulary {
        Vocabulary::new(levels, c, vec!["hello".into(), "world".into()]).unwrap()
    }

    #[test]
    fn parse_three_level_sid() {
        let v = vocab(3, 8);
        let sid = v.parse_sid("<s_0_3><s_1_7><s_2_1>").unwrap();
        assert_eq!(sid.codes(), &[3, 7, 1]);
        assert_eq!(v.render_sid(&sid), "<s_0_3><s_1_7><s_2_1>");
    }

    #[test]
    fn parse_minimal_sid() {
        let v = vocab(1, 2);
        let sid = v.parse_sid("<s_0_0>").unwrap();
        assert_eq!(sid.codes(), &[0]);
        assert_eq!(v.render_sid(&sid), "<s_0_0>");
    }

    #[test]
    fn level_order_violation() {
        let v = vocab(2, 8);
        assert!(matches!(
            v.parse_sid("<s_1_7><s_0_3>"),
            Err(VocabError::LevelOrderError { expected: 0, found: 1, .. })
        ));
    }

    #[test]
    fn malformed_and_range_errors() {
        let v = vocab(2, 8);
        for bad in ["", "<s_0_1>", "<s_0_1><s_1_2>x", "<s_0_1><s_1_>", "<s_0_01><s_1_2>", "s_0_1"] {
            assert!(
                matches!(v.parse_sid(bad), Err(VocabError::MalformedSid { .. })),
                "{bad}"
            );
        }
        assert!(matches!(
            v.parse_sid("<s_0_8><s_1_0>"),
            Err(VocabError::CodeRangeError { level: 0, code: 8, .. })
        ));
        assert!(matches!(
            v.parse_sid("<s_0_1><s_1_2><s_2_0>"),
            Err(VocabError::LevelOrderError { .. })
        ));
    }

    #[test]
    fn codec_is_bijective_for_small_vocabularies() {
        for levels in 1..=3 {
            for c in 2..=8u32 {
                let v = vocab(levels, c);
                let mut seen = HashSet::new();
                for sid in v.all_sids() {
                    let text = v.render_sid(&sid);
                    assert!(seen.insert(text.clone()));
                    assert_eq!(v.parse_sid(&text).unwrap(), sid);
                }
                assert_eq!(seen.len(), v.item_count());
            }
        }
    }

    #[test]
    fn index_order_matches_lexicographic_order() {
        let v = vocab(2, 4);
        let sids: Vec<_> = v.all_sids().collect();
        assert_eq!(sids.len(), 16);
        assert!(sids.windows(2).all(|w| w[0] < w[1]));
        for (i, s) in sids.iter().enumerate() {
            assert_eq!(s.index(4), i);
        }
    }

    #[test]
    fn classify_tokens() {
        let v = vocab(3, 8);
        assert_eq!(v.classify_token("<s_0_3>").unwrap(), SubspaceTag::SemanticId);
        assert_eq!(v.classify_token(&v.general_tokens()[0]).unwrap(), SubspaceTag::General);
        assert_eq!(v.classify_token(COT_BEGIN).unwrap(), SubspaceTag::Structural);
        assert!(matches!(v.classify_token("nope"), Err(VocabError::UnknownToken(_))));
        assert!(matches!(v.classify_token("<s_3_0>"), Err(VocabError::UnknownToken(_))));
    }

    #[test]
    fn partition_is_complete_and_disjoint() {
        let v = vocab(2, 3);
        let mut counts = [0usize; 3];
        for tok in v.all_tokens() {
            match v.classify_token(&tok).unwrap() {
                SubspaceTag::SemanticId => counts[0] += 1,
                SubspaceTag::General => counts[1] += 1,
                SubspaceTag::Structural => counts[2] += 1,
            }
        }
        assert_eq!(counts, [6, 2, 7]);
    }

    #[test]
    fn rejects_bad_vocabularies() {
        assert!(Vocabulary::new(0, 4, vec![]).is_err());
        assert!(Vocabulary::new(2, 1, vec![]).is_err());
        assert!(Vocabulary::new(2, 4, vec!["a".into(), "a".into()]).is_err());
        assert!(Vocabulary::new(2, 4, vec![SID_BEGIN.into()]).is_err());
        assert!(Vocabulary::new(2, 4, vec!["<s_0_1>".into()]).is_err());
        assert!(Vocabulary::new(2, 4, vec!["two words".into()]).is_err());
        assert!(Vocabulary::new(30, 8, vec![]).is_err());
    }

    #[test]
    fn vocabulary_json_roundtrip() {
        let v = Vocabulary::from_json(r#"{"levels":2,"codes_per_level":4,"general_tokens":["a","b"]}"#)
            .unwrap();
        assert_eq!(v.levels(), 2);
        let back = Vocabulary::from_json(&serde_json::to_string(&v.to_file()).unwrap()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn tokenize_detaches_trailing_punctuation() {
        assert_eq!(
            tokenize_text("The current user's preference is jazz vinyl."),
            vec!["The", "current", "user's", "preference", "is", "jazz", "vinyl", "."]
        );
        assert_eq!(tokenize_text("  a , b..  "), vec!["a", ",", "b", ".", "."]);
        assert!(tokenize_text("").is_empty());
    }
}
