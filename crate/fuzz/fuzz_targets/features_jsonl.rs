#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(records) = hornet::visual::parse_features("fuzz", s) {
            // Accepted files have one shared, finite, non-zero dimension.
            let dim = records.first().map(|r| r.features.len());
            assert!(records.iter().all(|r| Some(r.features.len()) == dim));
            assert!(records.iter().flat_map(|r| &r.features).all(|x| x.is_finite()));
        }
    }
});
