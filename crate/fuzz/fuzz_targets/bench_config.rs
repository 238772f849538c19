#![no_main]
use libfuzzer_sys::fuzz_target;
use missregress::bench::BenchConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = BenchConfig::from_toml(s) {
            // Resolution must not panic; runs are too slow to fuzz.
            let _ = cfg.resolve();
        }
    }
});
