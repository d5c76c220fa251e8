#![no_main]

use libfuzzer_sys::fuzz_target;
use unimotion::image::decode_png;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_png(data) {
        assert_eq!(img.data.len(), 3 * img.width as usize * img.height as usize);
    }
});
