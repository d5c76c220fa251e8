#![no_main]

use libfuzzer_sys::fuzz_target;
use unimotion::matching::{parse_matches, MatchKind};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_matches(text, MatchKind::Intra);
        let _ = parse_matches(text, MatchKind::Inter);
    }
});
