use std::path::Path;
use std::process::{Command, Output};

fn plantseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plantseg")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn version_mentions_schema() {
    let out = plantseg(&["--version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("schema 1"));
}

#[test]
fn generate_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        assert!(plantseg(&["generate", "--plants", "10", "--seed", "7", "--out", p(d)]).status.success());
    }
    let (ca, cb) = (dir_contents(&a), dir_contents(&b));
    assert!(ca.len() > 3);
    assert_eq!(ca, cb);
}

#[test]
fn empty_scene_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let scene = t.path().join("s");
    assert!(plantseg(&["generate", "--plants", "0", "--out", p(&scene)]).status.success());
    let out = t.path().join("o");
    assert!(plantseg(&["segment", "--scene", p(&scene), "--out", p(&out)]).status.success());
    let result: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["plants"].as_array().unwrap().len(), 0);
}

#[test]
fn segment_eval_render() {
    let t = tempfile::tempdir().unwrap();
    let scene = t.path().join("s");
    assert!(plantseg(&["generate", "--plants", "4", "--seed", "3", "--duplicates", "0.2", "--out", p(&scene)]).status.success());
    let out = t.path().join("o");
    assert!(plantseg(&["segment", "--scene", p(&scene.join("scene.json")), "--out", p(&out)]).status.success());

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let result: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["leaves"], result["leaves"].as_array().unwrap().len());
    assert_eq!(manifest["counts"]["plants"], result["plants"].as_array().unwrap().len());
    assert!(manifest["version"].is_string() && manifest["timings"].is_array());

    let report = t.path().join("report.json");
    let gt = scene.join("gt.json");
    let ev = plantseg(&["eval", "--pred", p(&out.join("result.json")), "--gt", p(&gt), "--report", p(&report)]);
    assert!(ev.status.success());
    assert!(String::from_utf8_lossy(&ev.stdout).contains("plant: prec50"));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(r["pq_plant"].as_f64().unwrap() > 0.9);

    let png = t.path().join("overlay.png");
    let result_path = out.join("result.json");
    assert!(plantseg(&["render", "--scene", p(&scene), "--result", p(&result_path), "--out", p(&png)]).status.success());
    assert_eq!(&std::fs::read(&png).unwrap()[1..4], b"PNG");

    let other = t.path().join("small");
    assert!(plantseg(&["generate", "--plants", "1", "--width", "320", "--out", p(&other)]).status.success());
    let out2 = plantseg(&["render", "--scene", p(&other), "--result", p(&result_path), "--out", p(&png)]);
    assert_eq!(out2.status.code(), Some(2));
}

#[test]
fn segment_flags_override_config() {
    let t = tempfile::tempdir().unwrap();
    let scene = t.path().join("s");
    assert!(plantseg(&["generate", "--plants", "2", "--out", p(&scene)]).status.success());
    let cfg = t.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"eps": 10.0}"#).unwrap();
    let out = t.path().join("o");
    let args = ["segment", "--scene", p(&scene), "--config", p(&cfg), "--eps", "30", "--min-pts", "3", "--out", p(&out)];
    assert!(plantseg(&args).status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["eps"], 30.0);
    assert_eq!(manifest["config"]["init_min_pts"], 3);

    let bad = plantseg(&["segment", "--scene", p(&scene), "--eps", "-1", "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn input_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let scene = t.path().join("s");
    assert!(plantseg(&["generate", "--plants", "1", "--out", p(&scene)]).status.success());

    let cfg = t.path().join("bad.json");
    std::fs::write(&cfg, r#"{"window": 64, "window_overlap": 64}"#).unwrap();
    let out = plantseg(&["segment", "--scene", p(&scene), "--config", p(&cfg), "--out", p(&t.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    let unknown = t.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"windwo": 64}"#).unwrap();
    let out = plantseg(&["segment", "--scene", p(&scene), "--config", p(&unknown), "--out", p(&t.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = plantseg(&["segment", "--scene", p(&t.path().join("missing")), "--out", p(&t.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(scene.join("scene.json"), "{not json").unwrap();
    let out = plantseg(&["segment", "--scene", p(&scene), "--out", p(&t.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = plantseg(&["generate", "--plants", "3", "--duplicates", "2", "--out", p(&t.path().join("g"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = plantseg(&["generate", "--plants", "200", "--separation", "8", "--out", p(&t.path().join("g"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = plantseg(&["eval", "--pred", "a.json", "--pred", "b.json", "--gt", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
}
