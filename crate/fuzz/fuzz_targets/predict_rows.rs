#![no_main]
use libfuzzer_sys::fuzz_target;
use missregress::ingest::{read_complete_rows, DEFAULT_NA_TOKENS};

fuzz_target!(|data: &[u8]| {
    let names = vec!["x1".to_string(), "x2".to_string()];
    let na: Vec<String> = DEFAULT_NA_TOKENS.iter().map(|s| s.to_string()).collect();
    if let Ok(rows) = read_complete_rows(data, &names, Some("y"), &na) {
        assert!(rows.rows.iter().all(|r| r.len() == 2));
    }
});
