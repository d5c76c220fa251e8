#![no_main]

use libfuzzer_sys::fuzz_target;
use unimotion::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = PipelineConfig::from_json(text) {
            let _ = cfg.overlap_region((640, 480));
            PipelineConfig::from_json(&cfg.to_json()).expect("serialized config parses");
        }
    }
});
