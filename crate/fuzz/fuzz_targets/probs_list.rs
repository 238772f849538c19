#![no_main]
use libfuzzer_sys::fuzz_target;
use missregress::ingest::parse_probs;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(p) = parse_probs(s) {
            assert!(!p.is_empty());
            assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }
});
