#![no_main]

use libfuzzer_sys::fuzz_target;
use unimotion::synth::RigSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<RigSpec>(data) {
        let _ = spec.validate();
    }
});
