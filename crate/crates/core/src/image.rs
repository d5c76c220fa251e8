//! Raster types, grayscale conversion, bilinear sampling and the PNG / binary
//! PPM codecs used for image-sequence input and output.

use std::path::Path;

use image::ImageEncoder;

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::SizeMismatch(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at a continuous position (pixel centers on integers).
    /// Returns `None` outside `[0, w-1] x [0, h-1]`; positions within 1e-6 of
    /// the border are clamped onto it.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let (x, y) = clamp_to_domain(x, y, self.width, self.height)?;
        let x0 = x.floor() as u32;
        let y0 = y.floor() as u32;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
            let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
            out[c] = top * (1.0 - fy) + bottom * fy;
        }
        Some(out)
    }

    /// ITU-R BT.601 luma.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Copy out the `w x h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::SizeMismatch(format!(
                "crop {w}x{h}+{x}+{y} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let start = (row as usize * self.width as usize + x as usize) * 3;
            data.extend_from_slice(&self.data[start..start + w as usize * 3]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }
}

#[inline]
fn clamp_to_domain(x: f64, y: f64, width: u32, height: u32) -> Option<(f64, f64)> {
    const EPS: f64 = 1e-6;
    let xmax = (width - 1) as f64;
    let ymax = (height - 1) as f64;
    if !(x >= -EPS && x <= xmax + EPS && y >= -EPS && y <= ymax + EPS) {
        return None;
    }
    Some((x.clamp(0.0, xmax), y.clamp(0.0, ymax)))
}

/// Single-channel float image, intensities on the 0..255 scale.
#[derive(Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (x, y) = clamp_to_domain(x, y, self.width, self.height)?;
        let x0 = x.floor() as u32;
        let y0 = y.floor() as u32;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bottom = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    pub fn is_constant(&self) -> bool {
        match self.data.first() {
            Some(&v) => self.data.iter().all(|&p| p == v),
            None => true,
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for &v in &self.data {
            let b = v.round().clamp(0.0, 255.0) as u8;
            data.extend_from_slice(&[b, b, b]);
        }
        RgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Axis-aligned pixel rectangle `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x as f64
            && py >= self.y as f64
            && px < (self.x + self.width) as f64
            && py < (self.y + self.height) as f64
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.width as u64 <= width as u64
            && self.y as u64 + self.height as u64 <= height as u64
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }
}

// ── Codecs ───────────────────────────────────────────────────────────────

/// Decode a binary (P6) PPM with maxval <= 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut cursor = 0usize;
    let mut line = 1usize;

    let magic = next_token(bytes, &mut cursor, &mut line)?;
    if magic != b"P6" {
        return Err(Error::Parse {
            line,
            msg: "expected binary PPM magic 'P6'".into(),
        });
    }
    let mut header = [0u32; 3];
    for value in header.iter_mut() {
        let tok = next_token(bytes, &mut cursor, &mut line)?;
        *value = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("invalid header field {:?}", String::from_utf8_lossy(tok)),
            })?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(Error::Schema(format!("PPM dimensions {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Schema(format!("unsupported PPM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if cursor >= bytes.len() || !bytes[cursor].is_ascii_whitespace() {
        return Err(Error::Parse {
            line,
            msg: "missing whitespace before raster".into(),
        });
    }
    cursor += 1;
    let expected = (width as u64) * (height as u64) * 3;
    let available = (bytes.len() - cursor) as u64;
    if available < expected {
        return Err(Error::Schema(format!(
            "PPM raster truncated: {available} of {expected} bytes"
        )));
    }
    let mut data = bytes[cursor..cursor + expected as usize].to_vec();
    if maxval != 255 {
        for v in data.iter_mut() {
            *v = ((*v as u32).min(maxval) * 255 / maxval) as u8;
        }
    }
    Ok(RgbImage {
        width,
        height,
        data,
    })
}

fn next_token<'a>(bytes: &'a [u8], cursor: &mut usize, line: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            if bytes[*cursor] == b'\n' {
                *line += 1;
            }
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() && bytes[*cursor] != b'#'
    {
        *cursor += 1;
    }
    if start == *cursor {
        return Err(Error::Parse {
            line: *line,
            msg: "unexpected end of PPM header".into(),
        });
    }
    Ok(&bytes[start..*cursor])
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            msg: e.to_string(),
        })?
        .into_rgb8();
    let (width, height) = decoded.dimensions();
    Ok(RgbImage {
        width,
        height,
        data: decoded.into_raw(),
    })
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&img.data, img.width, img.height, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            msg: e.to_string(),
        })?;
    Ok(out)
}


/// Read a PNG or binary PPM, chosen by file extension.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = match extension(path).as_deref() {
        Some("ppm") => decode_ppm(&bytes),
        Some("png") => decode_png(&bytes),
        other => {
            return Err(Error::Image {
                path: path.into(),
                msg: format!("unsupported image extension {other:?}"),
            })
        }
    };
    decoded.map_err(|e| Error::Image {
        path: path.into(),
        msg: e.to_string(),
    })
}

pub fn write_image(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = match extension(path).as_deref() {
        Some("ppm") => encode_ppm(img),
        _ => encode_png(img)?,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bt601_luma_weights() {
        let img = RgbImage::from_raw(3, 1, vec![255, 0, 0, 0, 255, 0, 0, 0, 255]).unwrap();
        let g = img.to_gray();
        assert!((g.data[0] - 76.245).abs() < 1e-3);
        assert!((g.data[1] - 149.685).abs() < 1e-3);
        assert!((g.data[2] - 29.07).abs() < 1e-3);
    }

    #[test]
    fn bilinear_hits_pixels_exactly_and_rejects_outside() {
        let img = GrayImage::from_fn(4, 3, |x, y| (x * 10 + y) as f32);
        assert_eq!(img.sample_bilinear(2.0, 1.0), Some(21.0));
        assert_eq!(img.sample_bilinear(2.5, 1.0), Some(26.0));
        assert_eq!(img.sample_bilinear(3.0 + 1e-9, 2.0), Some(32.0));
        assert_eq!(img.sample_bilinear(3.1, 0.0), None);
        assert_eq!(img.sample_bilinear(-0.5, 0.0), None);
    }

    #[test]
    fn ppm_roundtrip_and_comments() {
        let img = RgbImage::from_raw(2, 1, vec![1, 2, 3, 250, 251, 252]).unwrap();
        let bytes = encode_ppm(&img);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);

        let mut commented = b"P6 # made by hand\n2 1\n# max\n255\n".to_vec();
        commented.extend_from_slice(&img.data);
        assert_eq!(decode_ppm(&commented).unwrap(), img);
    }

    #[test]
    fn ppm_errors() {
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\0"), Err(Error::Parse { .. })));
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\0\0\0"), Err(Error::Schema(_))));
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0"), Err(Error::Schema(_))));
        assert!(matches!(decode_ppm(b"P6\n1"), Err(Error::Parse { .. })));
        assert!(matches!(decode_ppm(b""), Err(Error::Parse { .. })));
    }

    #[test]
    fn png_roundtrip() {
        let img = RgbImage::from_raw(2, 2, (0..12).collect()).unwrap();
        let bytes = encode_png(&img).unwrap();
        assert_eq!(decode_png(&bytes).unwrap(), img);
    }
}
