use std::path::Path;

use parag_forge::cli::run;
use parag_forge::dataio::{read_ift, read_pairs, write_corpus, write_qa};
use parag_forge::toy;
use serde_json::Value;

fn parag(args: &[&str]) -> i32 {
    run(std::iter::once("parag").chain(args.iter().copied()))
}

fn toy_files(dir: &Path) -> (String, String) {
    let world = toy::generate(8, 5);
    let qa = dir.join("qa.jsonl");
    let corpus = dir.join("corpus.tsv");
    write_qa(&qa, &world.questions).unwrap();
    write_corpus(&corpus, &world.corpus).unwrap();
    (qa.display().to_string(), corpus.display().to_string())
}

#[test]
fn offline_build_chain() {
    let dir = tempfile::tempdir().unwrap();
    let (qa, corpus) = toy_files(dir.path());
    let out = dir.path().join("out");
    let out_s = out.display().to_string();
    let common = ["--qa", &qa, "--corpus", &corpus, "--out", &out_s, "--mock", "--seed", "42"];

    assert_eq!(parag(&[&["build-ift"], &common[..]].concat()), 0);
    assert!(out.join("ift.jsonl").exists());
    assert!(out.join("manifest.json").exists());
    assert!(!read_ift(out.join("ift.jsonl")).unwrap().is_empty());

    let ift = out.join("ift.jsonl").display().to_string();
    assert_eq!(parag(&[&["build-pref", "--perspective", "ri", "--ift", &ift], &common[..]].concat()), 0);
    let ri = out.join("ri.jsonl").display().to_string();
    assert_eq!(parag(&[&["build-pref", "--perspective", "rr", "--ri", &ri, "--workers", "2"], &common[..]].concat()), 0);
    assert_eq!(parag(&[&["build-pref", "--perspective", "cq"], &common[..]].concat()), 0);
    for f in ["ri.jsonl", "rr.jsonl", "cq.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    for p in read_pairs(out.join("rr.jsonl")).unwrap() {
        assert_eq!(p.perspective.as_str(), "RR");
    }

    let stats = dir.path().join("stats.json");
    let stats_s = stats.display().to_string();
    assert_eq!(parag(&["stats", &ift, &ri, "--qa", &qa, "--out", &stats_s]), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    let hist = v[&ift]["citations_per_claim"].as_object().unwrap();
    let total: f64 = hist.values().map(|x| x.as_f64().unwrap()).sum();
    assert!((total - 100.0).abs() < 0.05, "{total}");
}

#[test]
fn ri_without_ift_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (qa, corpus) = toy_files(dir.path());
    let out = dir.path().join("out").display().to_string();
    assert_eq!(parag(&["build-pref", "--perspective", "ri", "--qa", &qa, "--corpus", &corpus, "--out", &out, "--mock"]), 1);
}

#[test]
fn eval_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (qa, corpus) = toy_files(dir.path());
    let out = dir.path().join("out");
    let out_s = out.display().to_string();
    assert_eq!(parag(&["build-ift", "--qa", &qa, "--corpus", &corpus, "--out", &out_s, "--mock"]), 0);
    let rep = dir.path().join("rep.json");
    let ift = out.join("ift.jsonl").display().to_string();
    assert_eq!(parag(&["eval", "--qa", &qa, "--responses", &ift, "--mock", "--out", &rep.display().to_string()]), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    for k in ["em", "rec", "prec", "f1"] {
        assert_eq!(v["aggregate"][k].as_f64(), Some(100.0), "{k}");
    }
    assert!(!v["per_question"].as_array().unwrap().is_empty());
}

#[test]
fn missing_qa_is_usage_error() {
    assert_eq!(parag(&["eval", "--responses", "r.jsonl", "--out", "rep.json", "--mock"]), 1);
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(parag(&["stats", "x.jsonl", "--bogus"]), 1);
}

#[test]
fn missing_endpoint_without_mock_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (qa, corpus) = toy_files(dir.path());
    let out = dir.path().join("o").display().to_string();
    // assumes GENERATOR_URL and NLI_URL are unset in the test environment
    if std::env::var_os("GENERATOR_URL").is_some() || std::env::var_os("NLI_URL").is_some() {
        return;
    }
    let code = parag(&["build-ift", "--qa", &qa, "--corpus", &corpus, "--out", &out]);
    assert_eq!(code, 1);
}

#[test]
fn unreachable_backend_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (qa, corpus) = toy_files(dir.path());
    let out = dir.path().join("out");
    let out_s = out.display().to_string();
    assert_eq!(parag(&["build-ift", "--qa", &qa, "--corpus", &corpus, "--out", &out_s, "--mock"]), 0);
    let ift = out.join("ift.jsonl").display().to_string();
    let rep = dir.path().join("rep.json").display().to_string();
    let code = parag(&["eval", "--qa", &qa, "--responses", &ift, "--out", &rep, "--nli-url", "http://127.0.0.1:1", "--retries", "1", "--timeout", "2"]);
    assert_eq!(code, 2);
    assert!(!Path::new(&rep).exists());
}

#[test]
fn manifest_export_and_override() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    assert_eq!(parag(&["export-manifest", "--out", &m.display().to_string()]), 0);
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&m).unwrap()).unwrap();
    v["stages"][0]["epochs"] = 3.into();
    std::fs::write(&m, v.to_string()).unwrap();
    let m2 = dir.path().join("m2.json");
    assert_eq!(parag(&["export-manifest", "--from", &m.display().to_string(), "--out", &m2.display().to_string()]), 0);
    let v2: Value = serde_json::from_str(&std::fs::read_to_string(&m2).unwrap()).unwrap();
    assert_eq!(v2["stages"][0]["epochs"], 3);
    assert_eq!(v2["stages"][3]["learning_rate"], 2e-7);
}
