//! Replays the checked-in fuzz corpus seeds through the parsers they target.
//! Every seed is a well-formed input and must parse.

use std::fs;
use std::path::PathBuf;

use missregress::bench::BenchConfig;
use missregress::ingest::{
    ingest_reader, parse_probs, read_complete_rows, IngestOptions, DEFAULT_NA_TOKENS,
};
use missregress::model::ModelFile;
use missregress::trace::TraceFile;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("seed_"))
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn ingest_seeds_parse() {
    for (path, bytes) in seeds("ingest_csv") {
        for scale in [false, true] {
            let got = ingest_reader(&bytes[..], &IngestOptions::new("y").scaled(scale));
            assert!(got.is_ok(), "{}: {:?}", path.display(), got.err());
        }
    }
}

#[test]
fn predict_row_seeds_parse() {
    let names = vec!["x1".to_string(), "x2".to_string()];
    let na: Vec<String> = DEFAULT_NA_TOKENS.iter().map(|s| s.to_string()).collect();
    for (path, bytes) in seeds("predict_rows") {
        let target = if text(&bytes).starts_with("x1,x2,y") { Some("y") } else { None };
        let rows = read_complete_rows(&bytes[..], &names, target, &na);
        assert!(rows.is_ok(), "{}: {:?}", path.display(), rows.err());
    }
}

#[test]
fn model_seeds_round_trip() {
    for (path, bytes) in seeds("model_file") {
        let m = ModelFile::from_json(text(&bytes)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(m.to_json().unwrap(), text(&bytes), "{}", path.display());
        m.predict_row(&vec![0.5; m.d_raw]).unwrap();
    }
}

#[test]
fn trace_seeds_round_trip() {
    for (path, bytes) in seeds("trace_file") {
        let t = TraceFile::parse(text(&bytes)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(t.to_text().unwrap(), text(&bytes));
    }
}

#[test]
fn bench_config_seeds_resolve() {
    for (path, bytes) in seeds("bench_config") {
        let cfg = BenchConfig::from_toml(text(&bytes)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.resolve().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn probs_seeds_parse() {
    for (path, bytes) in seeds("probs_list") {
        let p = parse_probs(text(&bytes)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!p.is_empty());
    }
}
