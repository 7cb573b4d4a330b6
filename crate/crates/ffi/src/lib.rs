//! C interface to the segmentation pipeline.
//!
//! Every function returns a [`PsStatus`]. On failure the message is available
//! from [`ps_last_error_message`] on the same thread. Objects handed out through
//! `out` pointers are owned by the caller and released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use plantseg::metrics::evaluate;
use plantseg::pipeline::segment;
use plantseg::scene::{load_result, result_json_bytes, save_instances, to_json_bytes};
use plantseg::synth::{generate_scene, write_generated, SceneSpec};
use plantseg::{BinaryMask, Error, PipelineConfig, Scene, SegmentationResult};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    /// Null pointer or non-UTF-8 string argument.
    InvalidArgument = 1,
    Schema = 2,
    Config = 3,
    Io = 4,
    DimensionMismatch = 5,
    Infeasible = 6,
    Internal = 7,
    Panic = 8,
}

/// Opaque loaded scene.
pub struct PsScene(Scene);
/// Opaque pipeline configuration.
pub struct PsConfig(PipelineConfig);
/// Opaque segmentation result.
pub struct PsResult(SegmentationResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        Error::Schema { .. } | Error::Json { .. } => PsStatus::Schema,
        Error::Config(_) => PsStatus::Config,
        Error::Io { .. } | Error::Image(_) => PsStatus::Io,
        Error::DimensionMismatch(_) | Error::UndefinedIou => PsStatus::DimensionMismatch,
        Error::Infeasible(_) => PsStatus::Infeasible,
        Error::DegenerateAttention { .. } | Error::StemMiss { .. } | Error::Internal { .. } => PsStatus::Internal,
    }
}

struct Failure(PsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(PsStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(&format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(&format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("out is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, bytes: Vec<u8>) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("out is null"));
    }
    let s = CString::new(bytes).map_err(|_| Failure(PsStatus::Internal, "interior NUL in output".into()))?;
    *out = s.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_config_default(out: *mut *mut PsConfig) -> PsStatus {
    guard(|| put(out, PsConfig(PipelineConfig::default())))
}

/// Configuration from a JSON document; missing fields take their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_config_from_json(json: *const c_char, out: *mut *mut PsConfig) -> PsStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Failure(PsStatus::Config, format!("config: {e}")))?;
        cfg.validate()?;
        put(out, PsConfig(cfg))
    })
}

/// # Safety
/// `cfg` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ps_config_free(cfg: *mut PsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Loads `scene.json` (or a directory holding it) with its attention files.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_scene_load(path: *const c_char, out: *mut *mut PsScene) -> PsStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        put(out, PsScene(plantseg::load_scene(&path)?))
    })
}

/// Number of candidate masks in a scene.
///
/// # Safety
/// `scene` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_scene_candidate_count(scene: *const PsScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.candidates.len())
}

/// # Safety
/// `scene` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ps_scene_free(scene: *mut PsScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Runs the full pipeline. A null `cfg` uses the defaults.
///
/// # Safety
/// `scene` must be a live handle, `cfg` null or a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_segment(scene: *const PsScene, cfg: *const PsConfig, out: *mut *mut PsResult) -> PsStatus {
    guard(|| {
        let scene = ref_arg(scene, "scene")?;
        let default = PipelineConfig::default();
        let cfg = cfg.as_ref().map_or(&default, |c| &c.0);
        let run = segment(&scene.0, cfg, None)?;
        put(out, PsResult(run.result))
    })
}

/// Loads a result file (also used for ground truth).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_result_load(path: *const c_char, out: *mut *mut PsResult) -> PsStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        put(out, PsResult(load_result(&path)?))
    })
}

/// # Safety
/// `result` must be a live handle; `leaves`, `plants` and `stems` may be null.
#[no_mangle]
pub unsafe extern "C" fn ps_result_counts(
    result: *const PsResult,
    leaves: *mut usize,
    plants: *mut usize,
    stems: *mut usize,
) -> PsStatus {
    guard(|| {
        let r = &ref_arg(result, "result")?.0;
        for (p, v) in [(leaves, r.leaves.len()), (plants, r.plants.len()), (stems, r.stems.len())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Result document as JSON; free with [`ps_string_free`].
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_result_to_json(result: *const PsResult, out: *mut *mut c_char) -> PsStatus {
    guard(|| put_string(out, result_json_bytes(&ref_arg(result, "result")?.0)))
}

/// # Safety
/// `result` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ps_result_save(result: *const PsResult, path: *const c_char) -> PsStatus {
    guard(|| {
        let r = ref_arg(result, "result")?;
        save_instances(&PathBuf::from(str_arg(path, "path")?), &r.0)?;
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ps_result_free(result: *mut PsResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Metrics report for one prediction/ground-truth pair as JSON.
///
/// # Safety
/// `pred` and `gt` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_evaluate(pred: *const PsResult, gt: *const PsResult, out: *mut *mut c_char) -> PsStatus {
    guard(|| {
        let (p, g) = (ref_arg(pred, "pred")?, ref_arg(gt, "gt")?);
        let report = evaluate(&[(&p.0, &g.0)])?;
        put_string(out, to_json_bytes(&report))
    })
}

/// IoU of two run-length masks of the same size (runs start with background).
///
/// # Safety
/// `runs_a`/`runs_b` must point to `len_a`/`len_b` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ps_mask_iou(
    width: u32,
    height: u32,
    runs_a: *const u32,
    len_a: usize,
    runs_b: *const u32,
    len_b: usize,
    out: *mut f64,
) -> PsStatus {
    guard(|| {
        if runs_a.is_null() || runs_b.is_null() || out.is_null() {
            return Err(invalid("null pointer"));
        }
        let a = BinaryMask::from_runs(width, height, std::slice::from_raw_parts(runs_a, len_a).to_vec())?;
        let b = BinaryMask::from_runs(width, height, std::slice::from_raw_parts(runs_b, len_b).to_vec())?;
        *out = a.iou(&b)?;
        Ok(())
    })
}

/// Generates a synthetic scene from a JSON spec (fields optional) into `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ps_generate_scene(spec_json: *const c_char, out_dir: *const c_char) -> PsStatus {
    guard(|| {
        let spec: SceneSpec = serde_json::from_str(str_arg(spec_json, "spec_json")?)
            .map_err(|e| Failure(PsStatus::Config, format!("spec: {e}")))?;
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let generated = generate_scene(&spec)?;
        write_generated(&dir, &spec, &generated)?;
        Ok(())
    })
}
