use std::ffi::{CStr, CString};
use std::ptr;

use plantseg_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = ps_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(ps_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generate_segment_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let scene_dir = cstr(dir.path().join("scene").to_str().unwrap());
    unsafe {
        assert_eq!(ps_generate_scene(cstr(r#"{"plants": 3, "seed": 2}"#).as_ptr(), scene_dir.as_ptr()), PsStatus::Ok);

        let mut scene = ptr::null_mut();
        assert_eq!(ps_scene_load(scene_dir.as_ptr(), &mut scene), PsStatus::Ok);
        assert!(ps_scene_candidate_count(scene) > 0);

        let mut cfg = ptr::null_mut();
        assert_eq!(ps_config_from_json(cstr(r#"{"eps": 24.0}"#).as_ptr(), &mut cfg), PsStatus::Ok);
        let mut result = ptr::null_mut();
        assert_eq!(ps_segment(scene, cfg, &mut result), PsStatus::Ok);
        let (mut leaves, mut plants) = (0usize, 0usize);
        assert_eq!(ps_result_counts(result, &mut leaves, &mut plants, ptr::null_mut()), PsStatus::Ok);
        assert_eq!(plants, 3);
        assert!(leaves >= 9);

        let mut json = ptr::null_mut();
        assert_eq!(ps_result_to_json(result, &mut json), PsStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        ps_string_free(json);
        assert!(text.contains("\"plants\""));

        let saved = cstr(dir.path().join("result.json").to_str().unwrap());
        assert_eq!(ps_result_save(result, saved.as_ptr()), PsStatus::Ok);
        assert_eq!(std::fs::read_to_string(dir.path().join("result.json")).unwrap(), text);

        let mut gt = ptr::null_mut();
        let gt_path = cstr(dir.path().join("scene").join("gt.json").to_str().unwrap());
        assert_eq!(ps_result_load(gt_path.as_ptr(), &mut gt), PsStatus::Ok);
        let mut report = ptr::null_mut();
        assert_eq!(ps_evaluate(result, gt, &mut report), PsStatus::Ok);
        let report_text = CStr::from_ptr(report).to_str().unwrap().to_owned();
        ps_string_free(report);
        let v: serde_json::Value = serde_json::from_str(&report_text).unwrap();
        assert_eq!(v["pq_plant"].as_f64(), Some(1.0));

        ps_result_free(gt);
        ps_result_free(result);
        ps_config_free(cfg);
        ps_scene_free(scene);
    }
}

#[test]
fn default_config_and_null_config_agree() {
    let dir = tempfile::tempdir().unwrap();
    let scene_dir = cstr(dir.path().to_str().unwrap());
    unsafe {
        assert_eq!(ps_generate_scene(cstr(r#"{"plants": 2, "seed": 9}"#).as_ptr(), scene_dir.as_ptr()), PsStatus::Ok);
        let mut scene = ptr::null_mut();
        assert_eq!(ps_scene_load(scene_dir.as_ptr(), &mut scene), PsStatus::Ok);
        let mut cfg = ptr::null_mut();
        assert_eq!(ps_config_default(&mut cfg), PsStatus::Ok);
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(ps_segment(scene, cfg, &mut a), PsStatus::Ok);
        assert_eq!(ps_segment(scene, ptr::null(), &mut b), PsStatus::Ok);
        let (mut ja, mut jb) = (ptr::null_mut(), ptr::null_mut());
        ps_result_to_json(a, &mut ja);
        ps_result_to_json(b, &mut jb);
        assert_eq!(CStr::from_ptr(ja), CStr::from_ptr(jb));
        ps_string_free(ja);
        ps_string_free(jb);
        ps_result_free(a);
        ps_result_free(b);
        ps_config_free(cfg);
        ps_scene_free(scene);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(ps_config_from_json(cstr(r#"{"window": 8, "window_overlap": 8}"#).as_ptr(), &mut cfg), PsStatus::Config);
        assert!(cfg.is_null());
        assert!(last_error().contains("window_overlap"));

        assert_eq!(ps_config_from_json(cstr("{").as_ptr(), &mut cfg), PsStatus::Config);
        assert_eq!(ps_config_from_json(ptr::null(), &mut cfg), PsStatus::InvalidArgument);

        let mut scene = ptr::null_mut();
        assert_eq!(ps_scene_load(cstr("/nonexistent/scene.json").as_ptr(), &mut scene), PsStatus::Io);
        assert_eq!(ps_segment(ptr::null(), ptr::null(), &mut ptr::null_mut()), PsStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("scene.json"), "{\"image\": 3}").unwrap();
        assert_eq!(ps_scene_load(cstr(dir.path().to_str().unwrap()).as_ptr(), &mut scene), PsStatus::Schema);

        assert_eq!(
            ps_generate_scene(cstr(r#"{"plants": 200, "min_center_separation": 9}"#).as_ptr(), cstr("/tmp/x").as_ptr()),
            PsStatus::Infeasible
        );

        // null handles are ignored by the free functions
        ps_scene_free(ptr::null_mut());
        ps_result_free(ptr::null_mut());
        ps_config_free(ptr::null_mut());
        ps_string_free(ptr::null_mut());
    }
}

#[test]
fn mask_iou_on_runs() {
    // 4x1 masks: [0,1,1,0] and [0,1,1,1]
    let a = [1u32, 2, 1];
    let b = [1u32, 3];
    let mut iou = 0.0;
    unsafe {
        assert_eq!(ps_mask_iou(4, 1, a.as_ptr(), a.len(), b.as_ptr(), b.len(), &mut iou), PsStatus::Ok);
        assert!((iou - 2.0 / 3.0).abs() < 1e-12);
        let empty = [4u32];
        assert_eq!(ps_mask_iou(4, 1, empty.as_ptr(), 1, empty.as_ptr(), 1, &mut iou), PsStatus::DimensionMismatch);
        let bad = [1u32, 9];
        assert_eq!(ps_mask_iou(4, 1, bad.as_ptr(), 2, b.as_ptr(), 2, &mut iou), PsStatus::Schema);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/plantseg.h")).unwrap();
    for sym in [
        "ps_last_error_message",
        "ps_version",
        "ps_string_free",
        "ps_config_default",
        "ps_config_from_json",
        "ps_config_free",
        "ps_scene_load",
        "ps_scene_candidate_count",
        "ps_scene_free",
        "ps_segment",
        "ps_result_load",
        "ps_result_counts",
        "ps_result_to_json",
        "ps_result_save",
        "ps_result_free",
        "ps_evaluate",
        "ps_mask_iou",
        "ps_generate_scene",
        "typedef struct PsScene PsScene",
        "PS_STATUS_PANIC = 8",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "plantseg.h"
int run(const char *scene_dir) {
    PsScene *scene = NULL;
    PsResult *result = NULL;
    size_t leaves = 0, plants = 0;
    if (ps_scene_load(scene_dir, &scene) != PS_STATUS_OK) return 1;
    if (ps_segment(scene, NULL, &result) != PS_STATUS_OK) return 2;
    ps_result_counts(result, &leaves, &plants, NULL);
    ps_result_free(result);
    ps_scene_free(scene);
    return (int)plants;
}
"#,
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("no C compiler available, header not compiled: {e}"),
    }
}
