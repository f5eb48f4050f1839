use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::PathBuf;
use std::ptr;

use sidalign::align::{contrastive_score, rerank, AlignConfig};
use sidalign::backend::{ScoringBackend, SyntheticModel, SyntheticModelConfig};
use sidalign::compress::{CompressorConfig, RuleBasedCompressor};
use sidalign::evalx::{synth_dataset, to_jsonl, CotStyle};
use sidalign_ffi::*;

const SMALL: &str = r#"{"levels": 2, "codes_per_level": 4, "clusters": 3, "n_general": 64, "gamma": 0.6, "seed": 4}"#;

fn model(cfg: &str) -> *mut SidalignModel {
    let c = CString::new(cfg).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sidalign_model_new(c.as_ptr(), &mut m) }, SidalignStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sidalign_last_error()) }.to_str().unwrap().to_string()
}

fn take_string(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { sidalign_string_free(p) };
    s
}

fn small_rust_model() -> SyntheticModel {
    SyntheticModel::new(serde_json::from_str::<SyntheticModelConfig>(SMALL).unwrap()).unwrap()
}

#[test]
fn model_lifecycle() {
    let m = model(SMALL);
    assert_eq!(unsafe { sidalign_model_item_count(m) }, 16);
    unsafe { sidalign_model_free(m) };
    let d = model("");
    assert_eq!(unsafe { sidalign_model_item_count(d) }, 512);
    unsafe { sidalign_model_free(d) };
    let mut n = ptr::null_mut();
    assert_eq!(unsafe { sidalign_model_new(ptr::null(), &mut n) }, SidalignStatus::Ok);
    unsafe { sidalign_model_free(n) };
    unsafe { sidalign_model_free(ptr::null_mut()) };
    assert_eq!(unsafe { sidalign_model_item_count(ptr::null()) }, 0);
}

#[test]
fn bad_model_config() {
    let mut m = ptr::null_mut();
    let c = CString::new(r#"{"levels": 0}"#).unwrap();
    assert_eq!(unsafe { sidalign_model_new(c.as_ptr(), &mut m) }, SidalignStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(!last_error().is_empty());
    let c = CString::new("{not json").unwrap();
    assert_eq!(unsafe { sidalign_model_new(c.as_ptr(), &mut m) }, SidalignStatus::InvalidArgument);
    assert_eq!(unsafe { sidalign_model_new(c.as_ptr(), ptr::null_mut()) }, SidalignStatus::NullPointer);
}

#[test]
fn scores_match_the_library() {
    let m = model(SMALL);
    let rust = small_rust_model();
    let ctx = "<|hist_begin|> <s_0_1> <s_1_2> <|hist_end|> <|sid_begin|>";
    let cands = "<s_0_0><s_1_0> <s_0_1><s_1_2> <s_0_3><s_1_3>";
    let mut out = [0.0f64; 3];
    let (cc, ck) = (CString::new(ctx).unwrap(), CString::new(cands).unwrap());
    let st = unsafe { sidalign_score_candidates(m, cc.as_ptr(), ck.as_ptr(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, SidalignStatus::Ok, "{}", last_error());
    let toks: Vec<String> = ctx.split_whitespace().map(String::from).collect();
    let sids: Vec<_> = cands.split_whitespace().map(|s| rust.vocab().parse_sid(s).unwrap()).collect();
    assert_eq!(out.to_vec(), rust.score_candidates(&toks, &sids).unwrap());

    let st = unsafe { sidalign_score_candidates(m, cc.as_ptr(), ck.as_ptr(), out.as_mut_ptr(), 2) };
    assert_eq!(st, SidalignStatus::BufferSize);
    let bad = CString::new("<s_0_9><s_1_0>").unwrap();
    let st = unsafe { sidalign_score_candidates(m, cc.as_ptr(), bad.as_ptr(), out.as_mut_ptr(), 1) };
    assert_eq!(st, SidalignStatus::InvalidArgument);
    let st = unsafe { sidalign_score_candidates(m, ptr::null(), ck.as_ptr(), out.as_mut_ptr(), 3) };
    assert_eq!(st, SidalignStatus::NullPointer);
    unsafe { sidalign_model_free(m) };
}

#[test]
fn zscore_and_contrastive() {
    let scores = [-1.0, -2.0, -3.0];
    let mut z = [0.0; 3];
    let st = unsafe { sidalign_zscore_normalize(scores.as_ptr(), 3, 1e-6, z.as_mut_ptr()) };
    assert_eq!(st, SidalignStatus::Ok);
    assert_eq!(z.to_vec(), sidalign::align::zscore_normalize(&scores, 1e-6).unwrap());

    let mut inplace = scores;
    let p = inplace.as_mut_ptr();
    assert_eq!(unsafe { sidalign_zscore_normalize(p, 3, 1e-6, p) }, SidalignStatus::Ok);
    assert_eq!(inplace, z);

    assert_eq!(
        unsafe { sidalign_zscore_normalize(scores.as_ptr(), 3, -1.0, z.as_mut_ptr()) },
        SidalignStatus::InvalidArgument
    );

    let mut s = 0.0;
    assert_eq!(unsafe { sidalign_contrastive_score(1.2, 0.4, -0.3, 0.5, &mut s) }, SidalignStatus::Ok);
    assert_eq!(s, contrastive_score(1.2, 0.4, -0.3, 0.5).unwrap());
    assert_eq!(
        unsafe { sidalign_contrastive_score(1.0, 0.0, 0.0, -0.1, &mut s) },
        SidalignStatus::InvalidArgument
    );
}

#[test]
fn compress_round_trip() {
    let cot = CString::new("Hmm. The user repeatedly watches science fiction films.").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sidalign_compress(cot.as_ptr(), 32, &mut out) }, SidalignStatus::Ok);
    let s = take_string(out);
    assert_eq!(s, "The current user's preference is science fiction films.");
    let cs = CString::new(s).unwrap();
    assert_eq!(unsafe { sidalign_token_count(cs.as_ptr()) }, 8);
    assert_eq!(unsafe { sidalign_compress(cot.as_ptr(), 2, &mut out) }, SidalignStatus::InvalidArgument);
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { sidalign_compress(bad.as_ptr() as *const c_char, 32, &mut out) },
        SidalignStatus::InvalidUtf8
    );
    assert_eq!(unsafe { sidalign_token_count(ptr::null()) }, 0);
}

#[test]
fn rerank_matches_the_library() {
    let rust = small_rust_model();
    let m = model(SMALL);
    let episodes = synth_dataset(&rust, 3, CotStyle::Short, 11);
    let cfg = AlignConfig {
        num_beams: 8,
        num_return: 8,
        ..Default::default()
    };
    let cfg_json = CString::new(serde_json::to_string(&cfg).unwrap()).unwrap();
    let compressor = RuleBasedCompressor::new(CompressorConfig::default()).unwrap();
    for ep in &episodes {
        let line = CString::new(to_jsonl(std::slice::from_ref(ep), rust.vocab())).unwrap();
        let mut out = ptr::null_mut();
        let st = unsafe { sidalign_rerank_json(m, line.as_ptr(), cfg_json.as_ptr(), &mut out) };
        assert_eq!(st, SidalignStatus::Ok, "{}", last_error());
        let expected = sidalign::align::rerank_json_line(
            &ep.user,
            &rerank(&rust, ep, &cfg, &compressor).unwrap(),
            rust.vocab(),
        );
        assert_eq!(take_string(out), expected);
    }
    let two = CString::new(to_jsonl(&episodes[..2], rust.vocab())).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { sidalign_rerank_json(m, two.as_ptr(), ptr::null(), &mut out) },
        SidalignStatus::InvalidArgument
    );
    unsafe { sidalign_model_free(m) };
}

#[test]
fn errors_are_per_thread() {
    let mut s = 0.0;
    assert_eq!(unsafe { sidalign_contrastive_score(0.0, 0.0, 0.0, -1.0, &mut s) }, SidalignStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    std::thread::spawn(|| assert!(last_error().is_empty())).join().unwrap();
    assert_eq!(unsafe { sidalign_contrastive_score(0.0, 0.0, 0.0, 1.0, &mut s) }, SidalignStatus::Ok);
    assert!(last_error().is_empty());
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/sidalign.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "typedef struct SidalignModel SidalignModel;",
        "SIDALIGN_STATUS_OK = 0",
        "SIDALIGN_STATUS_INVALID_ARGUMENT",
        "sidalign_last_error(void)",
        "sidalign_model_new(",
        "sidalign_model_free(",
        "sidalign_model_item_count(",
        "sidalign_score_candidates(",
        "sidalign_zscore_normalize(",
        "sidalign_contrastive_score(",
        "sidalign_compress(",
        "sidalign_rerank_json(",
        "sidalign_token_count(",
        "sidalign_string_free(",
    ] {
        assert!(h.contains(name), "missing {name}");
    }
}

/// Compiles and links a small C program against the header and the static
/// library when a C compiler is on PATH.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which("cc") else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let target_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target");
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    let lib = target_dir.join(profile).join("libsidalign_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let src = dir.join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "sidalign.h"
int main(void) {
    SidalignModel *m = NULL;
    if (sidalign_model_new(NULL, &m) != SIDALIGN_STATUS_OK) return 1;
    if (sidalign_model_item_count(m) != 512) return 2;
    double z[3], in[3] = {-1.0, -2.0, -3.0};
    if (sidalign_zscore_normalize(in, 3, 1e-6, z) != SIDALIGN_STATUS_OK) return 3;
    if (!(z[0] > 0.0 && z[2] < 0.0)) return 4;
    char *s = NULL;
    if (sidalign_compress("I think the user prefers jazz vinyl.", 32, &s) != SIDALIGN_STATUS_OK) return 5;
    printf("%s\n", s);
    sidalign_string_free(s);
    if (sidalign_compress("x", 1, &s) != SIDALIGN_STATUS_INVALID_ARGUMENT) return 6;
    if (strlen(sidalign_last_error()) == 0) return 7;
    sidalign_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.join("smoke");
    let status = std::process::Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&out.stdout),
        "The current user's preference is jazz vinyl.\n"
    );
}

fn which(name: &str) -> Result<PathBuf, ()> {
    std::env::var_os("PATH")
        .and_then(|paths| std::env::split_paths(&paths).map(|p| p.join(name)).find(|p| p.is_file()))
        .ok_or(())
}
