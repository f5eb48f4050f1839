//! C ABI over `sidalign`.
//!
//! Every fallible function returns a [`SidalignStatus`]; on failure the
//! message is available from [`sidalign_last_error`] on the same thread.
//! Strings returned through out-parameters are owned by the caller and must
//! be released with [`sidalign_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use sidalign::align::{self, rerank_json_line, AlignConfig};
use sidalign::backend::{ScoringBackend, SyntheticModel, SyntheticModelConfig};
use sidalign::compress::{compress_rule_based, token_count, CompressorConfig, RuleBasedCompressor};
use sidalign::evalx::parse_dataset;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SidalignStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad input: malformed JSON, SIDs, contexts or out-of-range parameters.
    InvalidArgument = 3,
    /// Output buffer length does not match the number of results.
    BufferSize = 4,
    /// A backend or I/O failure.
    Failure = 5,
    Panic = 6,
}

/// Opaque handle to a synthetic scoring model.
pub struct SidalignModel {
    inner: SyntheticModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(SidalignStatus, String);

impl From<sidalign::Error> for Fail {
    fn from(e: sidalign::Error) -> Self {
        let status = if e.is_validation() {
            SidalignStatus::InvalidArgument
        } else {
            SidalignStatus::Failure
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SidalignStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SidalignStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SidalignStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SidalignStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SidalignStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SidalignStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

fn out_string(s: String, out: *mut *mut c_char) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|_| Fail(SidalignStatus::Failure, "result contains a NUL byte".into()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn null_check<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(SidalignStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn sidalign_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a synthetic model from a JSON config. `config_json` may be NULL
/// or empty for the defaults.
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string; `out` must be a
/// valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn sidalign_model_new(config_json: *const c_char, out: *mut *mut SidalignModel) -> SidalignStatus {
    guard(|| {
        null_check(out, "out")?;
        let cfg = if config_json.is_null() {
            SyntheticModelConfig::default()
        } else {
            let text = str_arg(config_json, "config_json")?;
            if text.trim().is_empty() {
                SyntheticModelConfig::default()
            } else {
                serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))?
            }
        };
        let inner = SyntheticModel::new(cfg).map_err(|e| invalid(e.to_string()))?;
        *out = Box::into_raw(Box::new(SidalignModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`sidalign_model_new`] that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn sidalign_model_free(model: *mut SidalignModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of items (`C^L`) in the model's SID space, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sidalign_model_item_count(model: *const SidalignModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.vocab().item_count())
}

/// Scores candidates after a context. `context` is whitespace-separated
/// tokens ending in `<|sid_begin|>`, e.g.
/// `<|hist_begin|> <s_0_1> <s_1_2> <|hist_end|> <|sid_begin|>`.
/// `candidates` is whitespace-separated SIDs such as `<s_0_1><s_1_2>`. Writes one log-probability per
/// candidate to `out`, which must hold exactly `out_len` values.
///
/// # Safety
/// `model` must be a live handle, the strings NUL-terminated, and `out`
/// valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn sidalign_score_candidates(
    model: *const SidalignModel,
    context: *const c_char,
    candidates: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> SidalignStatus {
    guard(|| {
        null_check(model, "model")?;
        null_check(out, "out")?;
        let m = &(*model).inner;
        let ctx: Vec<String> = str_arg(context, "context")?.split_whitespace().map(String::from).collect();
        let cands = str_arg(candidates, "candidates")?
            .split_whitespace()
            .map(|s| m.vocab().parse_sid(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid(e.to_string()))?;
        if cands.len() != out_len {
            return Err(Fail(
                SidalignStatus::BufferSize,
                format!("{} candidates but out_len is {out_len}", cands.len()),
            ));
        }
        let scores = m.score_candidates(&ctx, &cands).map_err(|e| invalid(e.to_string()))?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&scores);
        Ok(())
    })
}

/// Z-score normalization with population std; `out` may alias `scores`.
///
/// # Safety
/// `scores` and `out` must be valid for `n` reads and writes respectively.
#[no_mangle]
pub unsafe extern "C" fn sidalign_zscore_normalize(
    scores: *const f64,
    n: usize,
    epsilon: f64,
    out: *mut f64,
) -> SidalignStatus {
    guard(|| {
        null_check(scores, "scores")?;
        null_check(out, "out")?;
        let input = std::slice::from_raw_parts(scores, n).to_vec();
        let z = align::zscore_normalize(&input, epsilon).map_err(|e| invalid(e.to_string()))?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&z);
        Ok(())
    })
}

/// `(1 + alpha)·zt_e − alpha·(zt_a − zt_b)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sidalign_contrastive_score(
    zt_e: f64,
    zt_a: f64,
    zt_b: f64,
    alpha: f64,
    out: *mut f64,
) -> SidalignStatus {
    guard(|| {
        null_check(out, "out")?;
        *out = align::contrastive_score(zt_e, zt_a, zt_b, alpha).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    })
}

/// Rule-based compression of a reasoning chain under a token budget.
///
/// # Safety
/// `cot` must be NUL-terminated and `out` a valid pointer. Free the result
/// with [`sidalign_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sidalign_compress(cot: *const c_char, budget: usize, out: *mut *mut c_char) -> SidalignStatus {
    guard(|| {
        null_check(out, "out")?;
        let text = str_arg(cot, "cot")?;
        let s = compress_rule_based(text, &CompressorConfig::with_budget(budget)).map_err(|e| invalid(e.to_string()))?;
        out_string(s, out)
    })
}

/// Reranks one episode given as a dataset JSON line and returns the rerank
/// output line. `align_json` may be NULL for the default align settings.
///
/// # Safety
/// `model` must be a live handle, the strings NUL-terminated and `out` a
/// valid pointer. Free the result with [`sidalign_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sidalign_rerank_json(
    model: *const SidalignModel,
    episode_json: *const c_char,
    align_json: *const c_char,
    out: *mut *mut c_char,
) -> SidalignStatus {
    guard(|| {
        null_check(model, "model")?;
        null_check(out, "out")?;
        let m = &(*model).inner;
        let cfg: AlignConfig = if align_json.is_null() {
            AlignConfig::default()
        } else {
            serde_json::from_str(str_arg(align_json, "align_json")?).map_err(|e| invalid(format!("align: {e}")))?
        };
        let episodes = parse_dataset(str_arg(episode_json, "episode_json")?, m.vocab())
            .map_err(|e| invalid(e.to_string()))?;
        let [episode] = episodes.as_slice() else {
            return Err(invalid(format!("expected one episode, got {}", episodes.len())));
        };
        let compressor = RuleBasedCompressor::new(CompressorConfig::default()).map_err(|e| invalid(e.to_string()))?;
        let ranked = align::rerank(m, episode, &cfg, &compressor).map_err(sidalign::Error::from)?;
        out_string(rerank_json_line(&episode.user, &ranked, m.vocab()), out)
    })
}

/// Whitespace token count of `text` (the compression budget measure), or 0 for NULL or
/// invalid UTF-8.
///
/// # Safety
/// `text` must be NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sidalign_token_count(text: *const c_char) -> usize {
    str_arg(text, "text").map_or(0, token_count)
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sidalign_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
