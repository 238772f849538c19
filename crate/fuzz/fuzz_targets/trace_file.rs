#![no_main]
use libfuzzer_sys::fuzz_target;
use missregress::trace::TraceFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(t) = TraceFile::parse(s) {
            let text = t.to_text().unwrap();
            assert_eq!(TraceFile::parse(&text).unwrap(), t);
        }
    }
});
