#![no_main]
use libfuzzer_sys::fuzz_target;
use missregress::model::ModelFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(m) = ModelFile::from_json(s) {
            let text = m.to_json().unwrap();
            let again = ModelFile::from_json(&text).unwrap();
            assert_eq!(again.to_json().unwrap(), text);
            let _ = m.predict_row(&vec![0.5; m.d_raw]);
        }
    }
});
