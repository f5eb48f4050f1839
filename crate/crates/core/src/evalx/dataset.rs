//! JSONL episode datasets.
//!
//! One JSON object per line:
//! `{"user": .., "history": [sid, ..], "cot": .., "candidates": [sid, ..]?, "target": sid}`
//! with every SID in its textual codec form.

use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::vocab::{SemanticId, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("cannot read dataset: {0}")]
    Io(String),
    #[error("line {line}: parse error: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: invalid SID: {message}")]
    InvalidSid { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: invalid record: {message}")]
    InvalidRecord { line: usize, message: String },
}

/// One evaluation instance: history `x`, raw reasoning chain `c` and the
/// ground-truth next item.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub user: String,
    pub history: Vec<SemanticId>,
    pub cot: String,
    pub candidates: Option<Vec<SemanticId>>,
    pub target: SemanticId,
}

#[derive(Serialize)]
struct RecordLine<'a> {
    user: &'a str,
    history: Vec<String>,
    cot: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<String>>,
    target: String,
}

impl EpisodeRecord {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), String> {
        if self.history.is_empty() {
            return Err("history must not be empty".into());
        }
        for sid in self.history.iter().chain(std::iter::once(&self.target)) {
            vocab.check_sid(sid).map_err(|e| e.to_string())?;
        }
        if let Some(cands) = &self.candidates {
            if cands.is_empty() {
                return Err("candidates must not be empty when present".into());
            }
            let mut seen = HashSet::new();
            for c in cands {
                vocab.check_sid(c).map_err(|e| e.to_string())?;
                if !seen.insert(c) {
                    return Err(format!("duplicate candidate {}", vocab.render_sid(c)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self, vocab: &Vocabulary) -> String {
        let line = RecordLine {
            user: &self.user,
            history: self.history.iter().map(|s| vocab.render_sid(s)).collect(),
            cot: &self.cot,
            candidates: self
                .candidates
                .as_ref()
                .map(|c| c.iter().map(|s| vocab.render_sid(s)).collect()),
            target: vocab.render_sid(&self.target),
        };
        serde_json::to_string(&line).expect("record serializes")
    }
}

pub fn to_jsonl(records: &[EpisodeRecord], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line(vocab));
        out.push('\n');
    }
    out
}

fn parse_line(line: usize, text: &str, vocab: &Vocabulary) -> Result<EpisodeRecord, DatasetError> {
    let parse_err = |message: String| DatasetError::ParseError { line, message };
    let value: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| parse_err("record is not a JSON object".into()))?;
    let field = |name: &'static str| obj.get(name).ok_or(DatasetError::MissingField { line, field: name });
    let string = |name: &'static str, v: &Value| -> Result<String, DatasetError> {
        v.as_str()
            .map(String::from)
            .ok_or_else(|| parse_err(format!("`{name}` must be a string")))
    };
    let sid = |v: &Value, name: &'static str| -> Result<SemanticId, DatasetError> {
        let text = string(name, v)?;
        vocab
            .parse_sid(&text)
            .map_err(|e| DatasetError::InvalidSid { line, message: e.to_string() })
    };
    let sid_list = |name: &'static str, v: &Value| -> Result<Vec<SemanticId>, DatasetError> {
        v.as_array()
            .ok_or_else(|| parse_err(format!("`{name}` must be an array")))?
            .iter()
            .map(|x| sid(x, name))
            .collect()
    };

    let user = string("user", field("user")?)?;
    let history = sid_list("history", field("history")?)?;
    let cot = match obj.get("cot") {
        None | Some(Value::Null) => String::new(),
        Some(v) => string("cot", v)?,
    };
    let candidates = match obj.get("candidates") {
        None | Some(Value::Null) => None,
        Some(v) => Some(sid_list("candidates", v)?),
    };
    let target = sid(field("target")?, "target")?;
    let record = EpisodeRecord {
        user,
        history,
        cot,
        candidates,
        target,
    };
    record
        .validate(vocab)
        .map_err(|message| DatasetError::InvalidRecord { line, message })?;
    Ok(record)
}

/// Parses JSONL text; blank lines are skipped, line numbers are 1-based.
pub fn parse_dataset(text: &str, vocab: &Vocabulary) -> Result<Vec<EpisodeRecord>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(i + 1, l, vocab))
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<EpisodeRecord>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(3, 8, vec![]).unwrap()
    }

    #[test]
    fn parses_a_valid_line() {
        let line = r#"{"user":"u1","history":["<s_0_3><s_1_7><s_2_1>"],"cot":"hmm","target":"<s_0_2><s_1_0><s_2_5>"}"#;
        let recs = parse_dataset(line, &vocab()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].history[0].codes(), &[3, 7, 1]);
        assert_eq!(recs[0].target.codes(), &[2, 0, 5]);
        assert_eq!(recs[0].candidates, None);
        assert_eq!(recs[0].to_json_line(&vocab()), line);
    }

    #[test]
    fn missing_target_is_reported_with_line() {
        let text = "\n{\"user\":\"u1\",\"history\":[\"<s_0_3><s_1_7><s_2_1>\"],\"cot\":\"\"}";
        assert_eq!(
            parse_dataset(text, &vocab()),
            Err(DatasetError::MissingField { line: 2, field: "target" })
        );
    }

    #[test]
    fn out_of_range_history_code() {
        let line = r#"{"user":"u1","history":["<s_0_9><s_1_7><s_2_1>"],"cot":"","target":"<s_0_2><s_1_0><s_2_5>"}"#;
        assert!(matches!(
            parse_dataset(line, &vocab()),
            Err(DatasetError::InvalidSid { line: 1, .. })
        ));
    }

    #[test]
    fn structural_problems() {
        let v = vocab();
        assert!(matches!(parse_dataset("{oops", &v), Err(DatasetError::ParseError { line: 1, .. })));
        assert!(matches!(parse_dataset("[1]", &v), Err(DatasetError::ParseError { .. })));
        let empty_hist = r#"{"user":"u","history":[],"target":"<s_0_2><s_1_0><s_2_5>"}"#;
        assert!(matches!(parse_dataset(empty_hist, &v), Err(DatasetError::InvalidRecord { .. })));
        let dup = r#"{"user":"u","history":["<s_0_2><s_1_0><s_2_5>"],"candidates":["<s_0_2><s_1_0><s_2_5>","<s_0_2><s_1_0><s_2_5>"],"target":"<s_0_2><s_1_0><s_2_5>"}"#;
        assert!(matches!(parse_dataset(dup, &v), Err(DatasetError::InvalidRecord { .. })));
        let no_user = r#"{"history":["<s_0_2><s_1_0><s_2_5>"],"target":"<s_0_2><s_1_0><s_2_5>"}"#;
        assert_eq!(parse_dataset(no_user, &v), Err(DatasetError::MissingField { line: 1, field: "user" }));
    }
}
