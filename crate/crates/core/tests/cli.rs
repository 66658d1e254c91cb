mod common;

use std::fs;

use common::{path_str, run, write_fixture};
use ethno_core::manifest::RunManifest;
use ethno_core::prediction::read_predictions;
use serde_json::Value;

fn read_json(path: &std::path::Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn sample_counts_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write_fixture(tmp.path(), 30, 1);
    let (rec, map, scheme) = (path_str(&f.records), path_str(&f.map), path_str(&f.scheme));
    for out in ["a", "b"] {
        let code = run(&[
            "-q", "--seed", "7", "--out-dir", &path_str(&tmp.path().join(out)),
            "sample", "--in", &rec, "--map", &map, "--scheme", &scheme, "--n", "25",
        ]);
        assert_eq!(code, 0);
    }
    let a = fs::read(tmp.path().join("a/sample.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/sample.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 100);

    let m = RunManifest::load(tmp.path().join("a/manifest.json")).unwrap();
    assert_eq!(m.command, "sample");
    assert_eq!(m.seed, 7);
    assert_eq!(m.input_digests.len(), 3);
    assert_eq!(m.input_digests[&rec], ethno_core::manifest::file_digest(&f.records).unwrap());

    let code = run(&[
        "-q", "--out-dir", &path_str(&tmp.path().join("c")),
        "sample", "--in", &rec, "--map", &map, "--scheme", &scheme, "--n", "31",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn bisg_classify_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write_fixture(tmp.path(), 40, 2);
    let out = tmp.path().join("bisg");
    let code = run(&[
        "-q", "--out-dir", &path_str(&out),
        "classify", "--engine", "bisg",
        "--in", &path_str(&f.records), "--map", &path_str(&f.map), "--scheme", &path_str(&f.scheme),
        "--surname-table", &path_str(&f.surnames), "--geo-table", &path_str(&f.geo), "--geo-level", "county",
    ]);
    assert_eq!(code, 0);
    let preds = read_predictions(out.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.len(), 160);
    assert!(preds.iter().all(|p| p.model_id == "bisg:surname+county"));
    assert!(preds.iter().all(|p| p.probs.as_ref().unwrap().len() == 4));

    let code = run(&[
        "-q", "--out-dir", &path_str(&out),
        "evaluate", "--preds", &path_str(&out.join("predictions.jsonl")),
        "--truth", &path_str(&f.records), "--map", &path_str(&f.map), "--scheme", &path_str(&f.scheme),
    ]);
    assert_eq!(code, 0);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["n"], 160);
    // every surname's dominant label is its own label, so BISG is accurate
    assert!(report["accuracy"].as_f64().unwrap() > 0.9);
    // one manifest for the directory, from the last command
    let m = RunManifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(m.command, "evaluate");
}

#[test]
fn bisg_missing_geography_level_fails_per_row() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write_fixture(tmp.path(), 3, 3);
    let code = run(&[
        "-q", "--out-dir", &path_str(&tmp.path().join("o")),
        "classify", "--engine", "bisg",
        "--in", &path_str(&f.records), "--map", &path_str(&f.map), "--scheme", &path_str(&f.scheme),
        "--surname-table", &path_str(&f.surnames), "--geo-table", &path_str(&f.geo), "--geo-level", "precinct",
    ]);
    assert_eq!(code, 1);
    assert!(!tmp.path().join("o/predictions.jsonl").exists());
}

#[test]
fn bisg_requires_geo_choice() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write_fixture(tmp.path(), 3, 3);
    let code = run(&[
        "-q", "classify", "--engine", "bisg",
        "--in", &path_str(&f.records), "--map", &path_str(&f.map), "--scheme", &path_str(&f.scheme),
        "--surname-table", &path_str(&f.surnames), "--geo-table", &path_str(&f.geo),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn llm_mock_with_warm_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write_fixture(tmp.path(), 10, 4);
    let cache = path_str(&tmp.path().join("cache"));
    let classify = |out: &str| {
        run(&[
            "-q", "--seed", "3", "--cache-dir", &cache, "--out-dir", &path_str(&tmp.path().join(out)),
            "classify", "--engine", "llm", "--backend", "mock", "--model", "mock-1", "--mock", "truth:0.25",
            "--geo-level", "county", "--geo-context", "state", "--features", "party",
            "--in", &path_str(&f.records), "--map", &path_str(&f.map), "--scheme", &path_str(&f.scheme),
        ])
    };
    assert_eq!(classify("cold"), 0);
    assert_eq!(classify("warm"), 0);
    let cold = read_json(&tmp.path().join("cold/usage.json"));
    let warm = read_json(&tmp.path().join("warm/usage.json"));
    assert_eq!(cold["calls"], 40);
    assert_eq!((warm["calls"].as_u64(), warm["cache_hits"].as_u64()), (Some(0), Some(40)));
    let a = read_predictions(tmp.path().join("cold/predictions.jsonl")).unwrap();
    let b = read_predictions(tmp.path().join("warm/predictions.jsonl")).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((&x.id, &x.label, &x.raw_response), (&y.id, &y.label, &y.raw_response));
    }
    // records sharing a prompt share a cache entry
    let mut keys: Vec<_> = a.iter().map(|p| p.prompt_hash.clone()).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(fs::read_dir(&cache).unwrap().count(), keys.len());
}

#[test]
fn llm_without_api_key_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write_fixture(tmp.path(), 2, 5);
    let code = run(&[
        "-q", "--out-dir", &path_str(&tmp.path().join("o")),
        "classify", "--engine", "llm", "--backend", "no-such-backend", "--geo-level", "county",
        "--in", &path_str(&f.records), "--map", &path_str(&f.map), "--scheme", &path_str(&f.scheme),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn audit_aggregate_and_distill_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write_fixture(tmp.path(), 50, 6);
    let (rec, map, scheme) = (path_str(&f.records), path_str(&f.map), path_str(&f.scheme));
    let out = tmp.path().join("run");
    let o = path_str(&out);
    assert_eq!(
        run(&[
            "-q", "--out-dir", &o, "classify", "--engine", "llm", "--backend", "mock", "--mock", "truth:0.3",
            "--geo-level", "county", "--in", &rec, "--map", &map, "--scheme", &scheme,
        ]),
        0
    );
    let preds = path_str(&out.join("predictions.jsonl"));
    assert_eq!(
        run(&["-q", "--out-dir", &o, "audit-bias", "--preds", &preds, "--truth", &rec, "--map", &map, "--scheme", &scheme]),
        0
    );
    let csv = fs::read_to_string(out.join("ventiles.csv")).unwrap();
    assert!(csv.starts_with("race,bin,lo,hi,rate,n\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 20);

    assert_eq!(
        run(&["-q", "--out-dir", &o, "aggregate-validate", "--preds", &preds, "--census", &path_str(&f.census), "--scheme", &scheme]),
        0
    );
    let agg = read_json(&out.join("aggregate.json"));
    // 25% each predicted share against 53/16/26/5
    let err = agg["models"]["predictions"]["avg_error_pp"].as_f64().unwrap();
    assert!(err > 5.0 && err < 20.0, "{err}");

    let distill = path_str(&tmp.path().join("distill"));
    assert_eq!(
        run(&["-q", "--seed", "11", "--out-dir", &distill, "export-distill", "--teacher", &preds, "--in", &rec, "--map", &map, "--scheme", &scheme]),
        0
    );
    let test = fs::read_to_string(tmp.path().join("distill/test.jsonl")).unwrap();
    let train = fs::read_to_string(tmp.path().join("distill/train.jsonl")).unwrap();
    assert_eq!((train.lines().count(), test.lines().count()), (160, 40));

    // students: base answers White for everything, fine-tuned echoes the teacher
    let mut base = String::new();
    let mut ft = String::new();
    for line in test.lines() {
        let row: Value = serde_json::from_str(line).unwrap();
        base.push_str(&format!("{{\"id\": {}, \"label\": \"White\"}}\n", row["id"]));
        ft.push_str(&format!("{{\"id\": {}, \"label\": {}}}\n", row["id"], row["label"]));
    }
    let base_p = tmp.path().join("distill/base.jsonl");
    let ft_p = tmp.path().join("distill/ft.jsonl");
    fs::write(&base_p, base).unwrap();
    fs::write(&ft_p, ft).unwrap();
    assert_eq!(
        run(&[
            "-q", "--out-dir", &distill, "score-student", "--test", &path_str(&tmp.path().join("distill/test.jsonl")),
            "--base", &path_str(&base_p), "--finetuned", &path_str(&ft_p), "--scheme", &scheme,
        ]),
        0
    );
    let r = read_json(&tmp.path().join("distill/student_report.json"));
    assert_eq!(r["gap_pp"].as_f64(), Some(0.0));
    assert_eq!(r["agreement"].as_f64(), Some(1.0));
}
