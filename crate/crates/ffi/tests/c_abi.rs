use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use compliance_agent_ffi::*;

fn bundle() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/bundle")
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    ca_string_free(p);
    s
}

unsafe fn last_error() -> String {
    let p = ca_last_error();
    assert!(!p.is_null(), "expected an error message");
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

#[test]
fn verify_matches_golden_assessment() {
    unsafe {
        let mut engine = ptr::null_mut();
        let cfg = c(bundle().join("config.toml").to_str().unwrap());
        assert_eq!(ca_engine_open(cfg.as_ptr(), ptr::null(), &mut engine), CaStatus::Ok);
        let img = c(bundle().join("images/s04.png").to_str().unwrap());
        let mut out = ptr::null_mut();
        assert_eq!(ca_engine_verify(engine, img.as_ptr(), ptr::null(), &mut out), CaStatus::Ok);
        let trace: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(trace["assessment"]["rating"], "Unsafe");
        assert_eq!(trace["assessment"]["category"], "O6");
        assert_eq!(trace["trajectory"].as_array().unwrap().len(), 4);

        let zs = c("zero_shot");
        let mut out = ptr::null_mut();
        assert_eq!(ca_engine_verify(engine, img.as_ptr(), zs.as_ptr(), &mut out), CaStatus::Ok);
        let trace: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(trace["trajectory"].as_array().unwrap().len(), 0);
        ca_engine_free(engine);
    }
}

#[test]
fn bench_reports_bundle_counts_and_ablation() {
    unsafe {
        let mut engine = ptr::null_mut();
        let cfg = c(bundle().join("config.toml").to_str().unwrap());
        assert_eq!(ca_engine_open(cfg.as_ptr(), c("replay").as_ptr(), &mut engine), CaStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(ca_engine_bench(engine, ptr::null(), ptr::null(), ptr::null(), &mut out), CaStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(report["counts"], serde_json::json!({"tp": 4, "fp": 1, "fn": 1, "tn": 6}));

        assert_eq!(ca_engine_disable(engine, c("specialized_compliance").as_ptr()), CaStatus::Ok);
        let dir = tempfile::tempdir().unwrap();
        let d = c(dir.path().to_str().unwrap());
        let mut out = ptr::null_mut();
        assert_eq!(ca_engine_bench(engine, ptr::null(), ptr::null(), d.as_ptr(), &mut out), CaStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(report["ablation"], serde_json::json!(["specialized_compliance"]));
        assert!(dir.path().join("traces.jsonl").is_file());

        assert_eq!(ca_engine_disable(engine, c("no_such_tool").as_ptr()), CaStatus::Config);
        assert!(last_error().contains("no_such_tool"));
        ca_engine_free(engine);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut engine = ptr::null_mut();
        assert_eq!(ca_engine_open(ptr::null(), ptr::null(), &mut engine), CaStatus::NullArgument);
        assert!(engine.is_null());
        assert_eq!(ca_engine_open(c("/nope/config.toml").as_ptr(), ptr::null(), &mut engine), CaStatus::Io);
        assert!(last_error().contains("/nope/config.toml"));
        let cfg = c(bundle().join("config.toml").to_str().unwrap());
        assert_eq!(ca_engine_open(cfg.as_ptr(), c("sideways").as_ptr(), &mut engine), CaStatus::Config);

        let bad = [0x66u8, 0xff, 0x00];
        assert_eq!(
            ca_engine_open(bad.as_ptr().cast(), ptr::null(), &mut engine),
            CaStatus::InvalidUtf8
        );
        assert_eq!(ca_engine_verify(ptr::null(), cfg.as_ptr(), ptr::null(), &mut ptr::null_mut()), CaStatus::NullArgument);
        ca_engine_free(ptr::null_mut());
        ca_string_free(ptr::null_mut());
        assert_eq!(CStr::from_ptr(ca_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn failed_run_returns_partial_trace() {
    unsafe {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle();
        std::fs::write(dir.path().join("script.jsonl"), "{\"index\":0,\"response_text\":\"no idea\"}\n{\"index\":1,\"response_text\":\"still nothing\"}\n").unwrap();
        let cfg = format!(
            "policy = {:?}\nfixtures = {:?}\n[scripts]\nagentic = \"script.jsonl\"\n",
            b.join("../policies/llavaguard.toml"),
            b.join("fixtures")
        );
        std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
        let mut engine = ptr::null_mut();
        let p = c(dir.path().join("c.toml").to_str().unwrap());
        assert_eq!(ca_engine_open(p.as_ptr(), ptr::null(), &mut engine), CaStatus::Ok);
        let img = c(b.join("images/s01.png").to_str().unwrap());
        let mut out = ptr::null_mut();
        assert_eq!(ca_engine_verify(engine, img.as_ptr(), ptr::null(), &mut out), CaStatus::Run);
        let trace: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert!(trace["assessment"].is_null());
        assert_eq!(trace["raw_model_texts"].as_array().unwrap().len(), 2);
        assert!(last_error().contains("s01"));
        ca_engine_free(engine);
    }
}

#[test]
fn policy_render_and_parse() {
    unsafe {
        let mut policy = ptr::null_mut();
        let path = c(bundle().join("../policies/unsafebench.toml").to_str().unwrap());
        assert_eq!(ca_policy_load(path.as_ptr(), &mut policy), CaStatus::Ok);
        let mut text = ptr::null_mut();
        assert_eq!(ca_policy_render(policy, &mut text), CaStatus::Ok);
        assert!(take(text).contains("O11: Spam"));
        let answer = c("<rating>\"Unsafe\"</rating><category>11: \"Spam\"</category><rationale>Pharmacy ads.</rationale>");
        let mut json = ptr::null_mut();
        assert_eq!(ca_parse_assessment(policy, answer.as_ptr(), &mut json), CaStatus::Ok);
        let a: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(a["category"], "O11");
        let mut json = ptr::null_mut();
        assert_eq!(ca_parse_assessment(policy, c("hello").as_ptr(), &mut json), CaStatus::Parse);
        assert!(json.is_null());
        ca_policy_free(policy);
        assert_eq!(ca_policy_load(c("/nope.toml").as_ptr(), &mut policy), CaStatus::Io);
    }
}

#[test]
fn header_is_current_and_usable_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(crate_dir.join("include/compliance_agent.h")).unwrap();
    for sym in [
        "ca_engine_open",
        "ca_engine_verify",
        "ca_engine_bench",
        "ca_engine_disable",
        "ca_engine_set_max_steps",
        "ca_policy_load",
        "ca_policy_render",
        "ca_parse_assessment",
        "ca_last_error",
        "ca_string_free",
        "typedef struct CaEngine CaEngine;",
        "CA_STATUS_PANIC = 7",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }

    // Compile a C program against the header and the static library.
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| crate_dir.join("../../target"))
        .join("debug");
    let lib = target.join("libcompliance_agent_ffi.a");
    assert!(lib.is_file(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "compliance_agent.h"
int main(int argc, char **argv) {
    CaPolicy *p = NULL;
    if (ca_policy_load(argv[1], &p) != CA_STATUS_OK) return 10;
    char *json = NULL;
    CaStatus s = ca_parse_assessment(p, "{\"rating\": \"Safe\", \"category\": \"NA: None applying\", \"rationale\": \"ok\"}", &json);
    if (s != CA_STATUS_OK) return 11;
    printf("%s\n", json);
    ca_string_free(json);
    if (ca_parse_assessment(p, "nothing", &json) != CA_STATUS_PARSE) return 12;
    if (ca_last_error() == NULL || strlen(ca_last_error()) == 0) return 13;
    ca_policy_free(p);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let policy = bundle().join("../policies/llavaguard.toml");
    let out = Command::new(&exe).arg(policy).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        r#"{"rating":"Safe","category":"NA","rationale":"ok"}"#
    );
}
