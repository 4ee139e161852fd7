#![no_main]
use hornet::harness::Checkpoint;
use libfuzzer_sys::fuzz_target;

// Parsing plus model reconstruction: payload decoding, shape checks and the
// size guard that runs before the skeleton is allocated.
fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(ck) = Checkpoint::from_json(s) {
            let _ = ck.model();
        }
    }
});
