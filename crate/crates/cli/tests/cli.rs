use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use claid_cli::commands::{read_results, ResultLine};

fn claid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_claid")).args(args).output().expect("spawn claid")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_corpus(dir: &Path) -> std::path::PathBuf {
    let corpus = dir.join("corpus");
    let out = claid(&["synth", "--out", p(&corpus), "--images", "4", "--queries", "3", "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    corpus
}

#[test]
fn stages_chain_and_agree_with_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let manifest = corpus.join("manifest.json");
    let (hier, desc, index, results) = (
        dir.path().join("h"),
        dir.path().join("d"),
        dir.path().join("i/index.cix"),
        dir.path().join("r.jsonl"),
    );
    for args in [
        vec!["decompose", "--manifest", p(&manifest), "--out", p(&hier)],
        vec!["describe", "--manifest", p(&manifest), "--hierarchies", p(&hier), "--out", p(&desc)],
        vec!["index", "--manifest", p(&manifest), "--descriptors", p(&desc), "--out", p(&index)],
        vec!["search", "--index", p(&index), "--queries", p(&corpus.join("queries.json")), "--out", p(&results)],
    ] {
        let out = claid(&args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let eval_out = dir.path().join("eval.json");
    let out = claid(&["eval", "--manifest", p(&manifest), "--results", p(&results), "--hierarchies", p(&hier), "--out", p(&eval_out)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("mAP-all"));
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(&eval_out).unwrap()).unwrap();
    assert_eq!(eval["map_all"], 1.0);
    assert_eq!(eval["config"]["tau1"], 0.97);

    let line: ResultLine = serde_json::from_str(fs::read_to_string(&results).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!((line.query_id.as_str(), line.rank), ("q_000", 1));
    assert_eq!(read_results(&results).unwrap().len(), 3);

    let run = dir.path().join("run");
    let out = claid(&["pipeline", "--manifest", p(&manifest), "--queries", p(&corpus.join("queries.json")), "--out", p(&run)]);
    assert!(out.status.success());
    assert_eq!(fs::read(&results).unwrap(), fs::read(run.join("results.jsonl")).unwrap());
    assert_eq!(fs::read(&index).unwrap(), fs::read(run.join("index.cix")).unwrap());
}

#[test]
fn invalid_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = claid(&["decompose", "--manifest", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let corpus = small_corpus(dir.path());
    let m = corpus.join("manifest.json");
    let out = claid(&["decompose", "--manifest", p(&m), "--out", p(dir.path()), "--set", "tua1=0.5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = claid(&["decompose", "--manifest", p(&m), "--out", p(dir.path()), "--set", "tau1=2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = claid(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_image_is_a_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    fs::remove_file(corpus.join("features/img_001.cft")).unwrap();
    let out_dir = dir.path().join("h");
    let out = claid(&["decompose", "--manifest", p(&corpus.join("manifest.json")), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out_dir.join("img_000.hier.json").exists());
    assert!(!out_dir.join("img_001.hier.json").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("decompose_report.json")).unwrap()).unwrap();
    assert_eq!(report["failed"], 1);
    assert!(report["images"][1]["error"].as_str().unwrap().contains("img_001"));
}

#[test]
fn corrupt_feature_file_is_reported_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    fs::write(corpus.join("features/img_002.cft"), b"XXXXrest").unwrap();
    let out_dir = dir.path().join("h");
    let out = claid(&["decompose", "--manifest", p(&corpus.join("manifest.json")), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("img_002"));
}

#[test]
fn config_file_and_flags_are_embedded_in_reports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "tau2 = 0.1\nmax_nodes = 64\n").unwrap();
    let out_dir = dir.path().join("h");
    let out = claid(&[
        "decompose",
        "--manifest",
        p(&corpus.join("manifest.json")),
        "--out",
        p(&out_dir),
        "--config",
        p(&conf),
        "--set",
        "max_nodes=32",
        "--threads",
        "2",
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("decompose_report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["tau2"], 0.1);
    assert_eq!(report["config"]["max_nodes"], 32);
    assert_eq!(report["config"]["threads"], 2);
    let hier: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("img_000.hier.json")).unwrap()).unwrap();
    assert_eq!(hier["params"]["max_nodes"], 32);
}

#[test]
fn no_dummy_filter_emits_more_features() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let (manifest, queries) = (corpus.join("manifest.json"), corpus.join("queries.json"));
    let run = |name: &str, extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let mut args = vec![
            "pipeline",
            "--manifest",
            p(&manifest),
            "--queries",
            p(&queries),
            "--out",
            p(&out_dir),
        ];
        args.extend_from_slice(extra);
        let out = claid(&args);
        assert!(out.status.success());
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("pipeline_report.json")).unwrap()).unwrap();
        (report["features_emitted"].as_u64().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
    };
    let (on, _) = run("on", &[]);
    let (off, stdout) = run("off", &["--no-dummy-filter"]);
    assert!(off > on);
    assert!(stdout.contains(&format!("delta {}", off - on)));
}

#[test]
fn bench_reports_single_threaded_timing() {
    let out = claid(&["bench", "--repeats", "1"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["grid"], serde_json::json!([45, 60, 768]));
    assert!(report["cut_count"].as_u64().unwrap() > 0);
    assert!(report["seconds"].as_f64().unwrap() > 0.0);
}
