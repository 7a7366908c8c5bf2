//! C interface to the compliance-agent engine.
//!
//! Conventions:
//! - Every fallible function returns a [`CaStatus`]. On failure a message is
//!   available from [`ca_last_error`] on the same thread.
//! - Strings passed in must be NUL-terminated UTF-8. Strings handed out are
//!   owned by the caller and must be released with [`ca_string_free`].
//! - Handles are opaque and released with their `_free` function. A handle
//!   may be shared across threads for read-only calls (`verify`, `bench`,
//!   `render`, `parse`); mutating calls need exclusive access.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use compliance_agent::config::{ConfigError, Mode};
use compliance_agent::engine::{Engine, EngineError};
use compliance_agent::eval::write_bench_outputs;
use compliance_agent::image::ImageRef;
use compliance_agent::policy::{Policy, PolicyError};
use compliance_agent::trace::Pipeline;
use compliance_agent::verifier::parse_assessment;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Bad configuration, unknown tool or pipeline name, bad mode.
    Config = 3,
    /// A file could not be read or written.
    Io = 4,
    /// Input text could not be parsed.
    Parse = 5,
    /// A verification run failed. Output, when produced, holds the partial trace.
    Run = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Opaque engine handle.
pub struct CaEngine {
    inner: Engine,
}

/// Opaque policy handle.
pub struct CaPolicy {
    inner: Policy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(CaStatus, String);

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::Run(_) => CaStatus::Run,
            EngineError::Config(ConfigError::Io { .. }) | EngineError::Policy(PolicyError::Io { .. }) => CaStatus::Io,
            EngineError::Manifest(compliance_agent::eval::ManifestError::Io { .. }) => CaStatus::Io,
            EngineError::Manifest(_) | EngineError::Policy(_) => CaStatus::Parse,
            _ => CaStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f` behind a panic guard and records any failure message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CaStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CaStatus::Panic
        }
    }
}

unsafe fn arg_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(CaStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CaStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        arg_str(p, name).map(Some)
    }
}

fn check_out<T>(out: *mut T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure(CaStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior NULs removed").into_raw()
}

fn parse_pipeline(p: Option<&str>) -> Result<Pipeline, Failure> {
    p.unwrap_or("agentic").parse().map_err(|e| Failure(CaStatus::Config, e))
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ca_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ca_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ca_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens an engine from a TOML config file. `mode` is "replay" or "live";
/// NULL means "replay".
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ca_engine_open(
    config_path: *const c_char,
    mode: *const c_char,
    out: *mut *mut CaEngine,
) -> CaStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = ptr::null_mut();
        let path = arg_str(config_path, "config_path")?;
        let mode: Mode = opt_str(mode, "mode")?
            .unwrap_or("replay")
            .parse()
            .map_err(|e| Failure(CaStatus::Config, e))?;
        let engine = Engine::from_path(Path::new(path), mode)?;
        *out = Box::into_raw(Box::new(CaEngine { inner: engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` must come from [`ca_engine_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ca_engine_free(engine: *mut CaEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Disables a tool or tool category for subsequent runs.
///
/// # Safety
/// `engine` must be a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn ca_engine_disable(engine: *mut CaEngine, target: *const c_char) -> CaStatus {
    guard(|| {
        let engine = engine.as_mut().ok_or(Failure(CaStatus::NullArgument, "engine is null".into()))?;
        let target = arg_str(target, "target")?;
        engine.inner.disable(&[target])?;
        Ok(())
    })
}

/// Sets the planner step limit.
///
/// # Safety
/// `engine` must be a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn ca_engine_set_max_steps(engine: *mut CaEngine, max_steps: usize) -> CaStatus {
    guard(|| {
        let engine = engine.as_mut().ok_or(Failure(CaStatus::NullArgument, "engine is null".into()))?;
        engine.inner.set_max_steps(max_steps)?;
        Ok(())
    })
}

/// Verifies one image. `pipeline` is "agentic", "routing" or "zero_shot"
/// (NULL means agentic). On `Ok` and on `Run`, `*out_trace_json` receives
/// the trace record as JSON.
///
/// # Safety
/// `engine` must be a live handle; strings NUL-terminated; `out_trace_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ca_engine_verify(
    engine: *const CaEngine,
    image_path: *const c_char,
    pipeline: *const c_char,
    out_trace_json: *mut *mut c_char,
) -> CaStatus {
    guard(|| {
        check_out(out_trace_json, "out_trace_json")?;
        *out_trace_json = ptr::null_mut();
        let engine = engine.as_ref().ok_or(Failure(CaStatus::NullArgument, "engine is null".into()))?;
        let image = arg_str(image_path, "image_path")?;
        let pipeline = parse_pipeline(opt_str(pipeline, "pipeline")?)?;
        if !Path::new(image).is_file() {
            return Err(Failure(CaStatus::Io, format!("image {image} does not exist")));
        }
        match engine.inner.verify(pipeline, &ImageRef::from_path(image)) {
            Ok(trace) => {
                *out_trace_json = into_c_string(trace.to_json_line());
                Ok(())
            }
            Err(EngineError::Run(trace)) => {
                *out_trace_json = into_c_string(trace.to_json_line());
                Err(EngineError::Run(trace).into())
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// Runs a benchmark. `manifest` NULL uses the configured manifest; `out_dir`
/// NULL skips writing report files. `*out_report_json` receives the metrics.
///
/// # Safety
/// `engine` must be a live handle; strings NUL-terminated; `out_report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ca_engine_bench(
    engine: *const CaEngine,
    manifest: *const c_char,
    pipeline: *const c_char,
    out_dir: *const c_char,
    out_report_json: *mut *mut c_char,
) -> CaStatus {
    guard(|| {
        check_out(out_report_json, "out_report_json")?;
        *out_report_json = ptr::null_mut();
        let engine = engine.as_ref().ok_or(Failure(CaStatus::NullArgument, "engine is null".into()))?;
        let manifest = opt_str(manifest, "manifest")?;
        let pipeline = parse_pipeline(opt_str(pipeline, "pipeline")?)?;
        let out_dir = opt_str(out_dir, "out_dir")?;
        let samples = engine.inner.load_samples(manifest.map(Path::new))?;
        let result = engine.inner.bench(pipeline, &samples)?;
        if let Some(dir) = out_dir {
            write_bench_outputs(Path::new(dir), &result).map_err(|e| Failure(CaStatus::Io, e.to_string()))?;
        }
        let json = serde_json::to_string(&result.report).expect("report serializes");
        *out_report_json = into_c_string(json);
        Ok(())
    })
}

/// Loads a policy from a TOML or JSON file.
///
/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ca_policy_load(path: *const c_char, out: *mut *mut CaPolicy) -> CaStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = ptr::null_mut();
        let path = arg_str(path, "path")?;
        let policy = Policy::load(path).map_err(|e| {
            let status = if matches!(e, PolicyError::Io { .. }) { CaStatus::Io } else { CaStatus::Parse };
            Failure(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(CaPolicy { inner: policy }));
        Ok(())
    })
}

/// # Safety
/// `policy` must come from [`ca_policy_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ca_policy_free(policy: *mut CaPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Renders the policy as prompt text.
///
/// # Safety
/// `policy` must be a live handle; `out_text` writable.
#[no_mangle]
pub unsafe extern "C" fn ca_policy_render(policy: *const CaPolicy, out_text: *mut *mut c_char) -> CaStatus {
    guard(|| {
        check_out(out_text, "out_text")?;
        *out_text = ptr::null_mut();
        let policy = policy.as_ref().ok_or(Failure(CaStatus::NullArgument, "policy is null".into()))?;
        *out_text = into_c_string(policy.inner.render_text());
        Ok(())
    })
}

/// Parses a model answer (JSON template or tagged format) into an
/// assessment, returned as JSON `{"rating","category","rationale"}`.
///
/// # Safety
/// `policy` must be a live handle; `text` NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ca_parse_assessment(
    policy: *const CaPolicy,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> CaStatus {
    guard(|| {
        check_out(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let policy = policy.as_ref().ok_or(Failure(CaStatus::NullArgument, "policy is null".into()))?;
        let text = arg_str(text, "text")?;
        let a = parse_assessment(text, &policy.inner).map_err(|e| Failure(CaStatus::Parse, e.to_string()))?;
        *out_json = into_c_string(serde_json::to_string(&a).expect("assessment serializes"));
        Ok(())
    })
}
