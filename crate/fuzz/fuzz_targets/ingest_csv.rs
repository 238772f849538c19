#![no_main]
use libfuzzer_sys::fuzz_target;
use missregress::ingest::{ingest_reader, IngestOptions};

fuzz_target!(|data: &[u8]| {
    for scale in [false, true] {
        let opts = IngestOptions::new("y").scaled(scale);
        if let Ok(got) = ingest_reader(data, &opts) {
            assert!(got.miss.p().iter().all(|&p| p > 0.0 && p <= 1.0));
            for o in &got.observations {
                assert!(o.y.is_finite());
                assert!(o.x.values().iter().all(|v| v.is_finite()));
            }
        }
    }
});
