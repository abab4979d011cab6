use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn esgx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esgx"))
        .args(args)
        .output()
        .expect("spawn esgx")
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture_dir() -> PathBuf {
    root().join("fixtures/synthetic")
}

fn fixture_config() -> String {
    fixture_dir().join("esgx.toml").display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn all_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

/// Copy of the synthetic fixture with its own corpus directory.
fn scratch_fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in all_files(&fixture_dir()) {
        let rel = f.strip_prefix(fixture_dir()).unwrap();
        if rel.starts_with("golden") {
            continue;
        }
        let dest = dir.path().join(rel);
        fs::create_dir_all(dest.parent().unwrap()).unwrap();
        fs::copy(&f, dest).unwrap();
    }
    dir
}

#[test]
fn synth_reproduces_committed_fixture() {
    let out = tempfile::tempdir().unwrap();
    let o = esgx(&["synth", "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in all_files(out.path()) {
        let rel = f.strip_prefix(out.path()).unwrap();
        if rel == Path::new("manifest.json") {
            continue;
        }
        let committed = fs::read(fixture_dir().join(rel)).unwrap_or_default();
        assert!(
            committed == fs::read(&f).unwrap(),
            "{} differs from the committed fixture",
            rel.display()
        );
    }
}

#[test]
fn extract_and_evaluate_match_golden_files() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let c = fixture_config();
    let r = esgx(&["-c", &c, "--output", o, "extract"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let r = esgx(&["-c", &c, "--output", o, "evaluate"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let golden = fixture_dir().join("golden");
    assert!(
        fs::read(out.path().join("extract/records.jsonl")).unwrap() == fs::read(golden.join("records.jsonl")).unwrap()
    );
    assert!(
        fs::read(out.path().join("evaluate/report.json")).unwrap() == fs::read(golden.join("report.json")).unwrap()
    );
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(
        stdout.contains("mean (10 docs)") && stdout.contains("100.0%"),
        "{stdout}"
    );
}

#[test]
fn every_output_directory_has_one_manifest_with_valid_digests() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let c = fixture_config();
    for cmd in ["ingest", "build-kb", "extract", "analyze"] {
        let r = esgx(&["-c", &c, "--output", o, cmd]);
        assert!(r.status.success(), "{cmd}: {}", stderr(&r));
        let dir = out.path().join(cmd);
        let manifests: Vec<_> = all_files(&dir)
            .into_iter()
            .filter(|p| p.file_name().unwrap() == "manifest.json")
            .collect();
        assert_eq!(manifests.len(), 1, "{cmd}");
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifests[0]).unwrap()).unwrap();
        assert_eq!(m["command"], cmd);
        assert_eq!(m["tool"], "esgx");
        assert!(m["config"]["providers"]["mode"] == "offline");
        assert!(!m["inputs"].as_array().unwrap().is_empty());
        for f in m["outputs"].as_array().unwrap() {
            let bytes = fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
            assert_eq!(f["sha256"], esgx_core::fsutil::sha256_hex(&bytes));
        }
    }
    let analytics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("analyze/analytics.json")).unwrap()).unwrap();
    assert_eq!(analytics["disclosure_overall"][0]["n_companies"], 10);
}

#[test]
fn kb_cache_is_reused_and_keyed_by_content() {
    let dir = scratch_fixture();
    let cfg = dir.path().join("esgx.toml").display().to_string();
    assert!(esgx(&["-c", &cfg, "build-kb"]).status.success());
    let cache = dir.path().join("out/kb-cache");
    let before: Vec<_> = all_files(&cache)
        .into_iter()
        .map(|p| (p.clone(), fs::metadata(&p).unwrap().modified().unwrap()))
        .collect();
    assert_eq!(before.len(), 10);
    assert!(esgx(&["-c", &cfg, "build-kb"]).status.success());
    for (p, t) in &before {
        assert_eq!(
            fs::metadata(p).unwrap().modified().unwrap(),
            *t,
            "cache entry rewritten"
        );
    }
    let doc = dir.path().join("docs/synth-01.md");
    let text = fs::read_to_string(&doc)
        .unwrap()
        .replace("# Glossary", "# Glossary\n\nAn extra note.");
    fs::write(&doc, text).unwrap();
    assert!(esgx(&["-c", &cfg, "build-kb"]).status.success());
    assert_eq!(all_files(&cache).len(), 11);
}

#[test]
fn missing_registry_exits_1_naming_path() {
    let dir = scratch_fixture();
    let cfg = dir.path().join("esgx.toml");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("registry = \"bundled\"", "registry = \"missing-registry.json\"");
    fs::write(&cfg, text).unwrap();
    let r = esgx(&["-c", cfg.to_str().unwrap(), "extract"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("missing-registry.json"), "{}", stderr(&r));
}

#[test]
fn corrupt_document_is_skipped_and_listed() {
    let dir = scratch_fixture();
    fs::write(dir.path().join("docs/broken.json"), "{ not json").unwrap();
    let cfg = dir.path().join("esgx.toml").display().to_string();
    let r = esgx(&["-c", &cfg, "extract"]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/extract/manifest.json")).unwrap()).unwrap();
    let warnings = m["warnings"].to_string();
    assert!(warnings.contains("broken.json"), "{warnings}");
    assert!(String::from_utf8_lossy(&r.stdout).contains("from 10 documents"));
}

#[test]
fn empty_labels_exit_2() {
    let dir = scratch_fixture();
    fs::write(dir.path().join("labels.jsonl"), "").unwrap();
    let cfg = dir.path().join("esgx.toml").display().to_string();
    let r = esgx(&[
        "-c",
        &cfg,
        "evaluate",
        "--records",
        fixture_dir().join("golden/records.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2), "{}", stderr(&r));
    let r = esgx(&["-c", &cfg, "ablate"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn missing_records_exit_2() {
    let dir = scratch_fixture();
    let cfg = dir.path().join("esgx.toml").display().to_string();
    let r = esgx(&["-c", &cfg, "evaluate"]);
    assert_eq!(r.status.code(), Some(2), "{}", stderr(&r));
}

#[test]
fn unreachable_online_provider_exits_3() {
    let dir = scratch_fixture();
    let cfg = dir.path().join("esgx.toml");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("mode = \"offline\"\nmock_replies = \"mock_replies.json\"\n", "mode = \"online\"\n")
        + "\n[providers.embedding]\nname = \"emb\"\nurl = \"http://127.0.0.1:9/embed\"\ndim = 8\ntimeout_ms = 500\nretries = 0\n\
           \n[providers.chat]\nname = \"chat\"\nurl = \"http://127.0.0.1:9/chat\"\n";
    fs::write(&cfg, text).unwrap();
    let r = esgx(&["-c", cfg.to_str().unwrap(), "extract"]);
    assert_eq!(r.status.code(), Some(3), "{}", stderr(&r));
    assert!(!dir.path().join("out/extract").exists());
}

#[test]
fn dry_run_has_no_side_effects() {
    let dir = scratch_fixture();
    let cfg = dir.path().join("esgx.toml").display().to_string();
    let before = all_files(dir.path());
    for cmd in ["ingest", "build-kb", "extract", "evaluate", "ablate", "analyze"] {
        let r = esgx(&["-c", &cfg, "--dry-run", cmd]);
        assert!(r.status.success(), "{cmd}: {}", stderr(&r));
        assert!(String::from_utf8_lossy(&r.stdout).starts_with(&format!("plan: {cmd}")));
    }
    let synth_out = dir.path().join("synth-out");
    let r = esgx(&["--dry-run", "synth", "--out", synth_out.to_str().unwrap()]);
    assert!(r.status.success());
    assert_eq!(all_files(dir.path()), before);
}

#[test]
fn jobs_do_not_change_records() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = fixture_config();
    assert!(esgx(&[
        "-c",
        &c,
        "--output",
        a.path().to_str().unwrap(),
        "--jobs",
        "1",
        "extract"
    ])
    .status
    .success());
    assert!(esgx(&[
        "-c",
        &c,
        "--output",
        b.path().to_str().unwrap(),
        "--jobs",
        "4",
        "extract"
    ])
    .status
    .success());
    assert!(
        fs::read(a.path().join("extract/records.jsonl")).unwrap()
            == fs::read(b.path().join("extract/records.jsonl")).unwrap()
    );
}

#[test]
fn metadata_commands() {
    let r = esgx(&["metadata", "stats"]);
    assert!(r.status.success());
    let s = String::from_utf8_lossy(&r.stdout);
    assert!(s.contains("total            34       36     70"), "{s}");
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("reg.json");
    fs::write(&p, esgx_core::metadata::MetadataRegistry::bundled_hkex_json()).unwrap();
    let r = esgx(&["metadata", "validate", p.to_str().unwrap()]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).contains("70 indicators"));
    let mut reg: serde_json::Value =
        serde_json::from_str(esgx_core::metadata::MetadataRegistry::bundled_hkex_json()).unwrap();
    let first = reg["indicators"][0].clone();
    reg["indicators"].as_array_mut().unwrap().push(first);
    fs::write(&p, reg.to_string()).unwrap();
    let r = esgx(&["metadata", "validate", p.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "duplicate indicator id accepted");
    fs::write(&p, "{ not json").unwrap();
    assert_eq!(
        esgx(&["metadata", "validate", p.to_str().unwrap()]).status.code(),
        Some(2)
    );
}
