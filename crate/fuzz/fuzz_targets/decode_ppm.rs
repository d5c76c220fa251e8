#![no_main]

use libfuzzer_sys::fuzz_target;
use unimotion::image::{decode_ppm, encode_ppm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_ppm(data) {
        assert_eq!(img.data.len(), 3 * img.width as usize * img.height as usize);
        assert!(decode_ppm(&encode_ppm(&img)).unwrap() == img);
    }
});
