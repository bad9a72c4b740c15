use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use microatt::digest::sha256_hex;
use microatt::optflow::GrayImage;
use microatt::pipeline::imageio::write_gray;
use microatt::pipeline::{write_manifest, ManifestEntry};
use microatt::types::{Split, View};

fn microatt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microatt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tree(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, sha256_hex(&fs::read(&p).unwrap()));
            }
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = microatt(&["synth", "--seed", "7", "--out", s(d)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.contains_key("manifest.jsonl") && ta.contains_key("truth.jsonl"));
    assert!(ta.len() > 200 * 9);
    // the echoed config names its own output directory
    let differing: Vec<_> = ta.iter().filter(|(k, v)| tb.get(*k) != Some(v)).map(|(k, _)| k).collect();
    assert_eq!(differing, ["config.json"]);

    let o = microatt(&["synth", "--seed", "7", "--out", s(&a)]);
    assert!(o.status.success());
    assert_eq!(tree(&a), ta);
}

#[test]
fn static_sequence_gets_a_low_confidence_apex() {
    let dir = tempfile::tempdir().unwrap();
    let frames_dir = dir.path().join("data/frames/still");
    fs::create_dir_all(&frames_dir).unwrap();
    let frame = GrayImage::from_fn_clamped(64, 64, |x, y| {
        0.5 + 0.3 * ((x as f64 * 0.4).sin() * (y as f64 * 0.3).cos())
    });
    let paths: Vec<_> = (0..5)
        .map(|t| {
            let p = frames_dir.join(format!("f{t:03}.pgm"));
            write_gray(&p, &frame).unwrap();
            p
        })
        .collect();
    let manifest = dir.path().join("data/manifest.jsonl");
    write_manifest(
        &manifest,
        &[ManifestEntry {
            sequence_id: "still".into(),
            subject_id: "s0".into(),
            view: View::Left,
            frame_paths: paths,
            labels: [1, 0, 0, 0, 0],
            split: Split::Train,
            bboxes: None,
        }],
    )
    .unwrap();
    let run = dir.path().join("run");
    let o = microatt(&["extract", "--data", s(&manifest), "--out", s(&run), "--input-side", "16"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(run.join("extract/stage.log")).unwrap();
    assert!(log.contains("low-confidence apex: still left"), "{log}");
    let apex = fs::read_to_string(run.join("extract/apex.jsonl")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(apex.lines().next().unwrap()).unwrap();
    assert_eq!(entry["low_confidence"], true);
    assert_eq!(entry["apex"], 1, "all-zero intensities resolve to the earliest frame");

    let config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["model"]["input_side"], 16);
}

#[test]
fn exit_codes() {
    let o = microatt(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    assert_eq!(microatt(&["fit"]).status.code(), Some(2));
    assert_eq!(microatt(&["--help"]).status.code(), Some(0));
    assert_eq!(microatt(&["eval", "--precision", "f16"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = microatt(&["train", "--out", s(&run), "--threshold", "3"]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"model": {"kernel": 4}}"#).unwrap();
    let o = microatt(&["train", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&cfg, r#"{"modle": {}}"#).unwrap();
    assert_eq!(microatt(&["train", "--config", s(&cfg)]).status.code(), Some(2));

    // no dataset configured at all is a configuration problem, a missing one a data problem
    assert_eq!(microatt(&["extract", "--out", s(&run)]).status.code(), Some(2));
    let missing = dir.path().join("nowhere/manifest.jsonl");
    let o = microatt(&["extract", "--out", s(&run), "--data", s(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
}

#[test]
fn gradcheck_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = microatt(&["gradcheck", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("gradcheck.txt")).unwrap();
    assert!(text.ends_with("pass\n"), "{text}");
}
