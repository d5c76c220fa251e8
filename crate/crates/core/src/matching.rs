//! Sparse intra/inter frame correspondences.
//!
//! The built-in matcher detects Shi–Tomasi corners per detection cell, so that
//! features stay spread over the frame, and matches each corner by
//! zero-mean normalized cross-correlation over a square search window.
//! Matches computed elsewhere enter through the JSON match-file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{robust_homography, Homography, Point2, PointPair, RobustConfig, Vec2};
use crate::image::{GrayImage, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Intra,
    Inter,
}

impl MatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchKind::Intra => "intra",
            MatchKind::Inter => "inter",
        }
    }
}

/// Matched pairs for one frame pair. For intra sets `src` lies in frame
/// `frame` and `dst` in frame `frame + 1` of the same camera; for inter sets
/// `src` lies in `camera` and `dst` in `partner` at the same instant.
/// `motions[j] = src[j] - dst[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub kind: MatchKind,
    pub frame: usize,
    pub camera: usize,
    pub partner: Option<usize>,
    /// Detection region for inter sets; every `src` lies inside it.
    pub roi: Option<Rect>,
    pub pairs: Vec<PointPair>,
    pub motions: Vec<Vec2>,
}

impl MatchSet {
    pub fn new(kind: MatchKind, frame: usize, camera: usize, pairs: Vec<PointPair>) -> Self {
        let motions = pairs.iter().map(|p| p.src - p.dst).collect();
        Self {
            kind,
            frame,
            camera,
            partner: match kind {
                MatchKind::Intra => None,
                MatchKind::Inter => Some(camera + 1),
            },
            roi: None,
            pairs,
            motions,
        }
    }

    pub fn with_frame(mut self, frame: usize) -> Self {
        self.frame = frame;
        self
    }

    pub fn with_camera(mut self, camera: usize, partner: Option<usize>) -> Self {
        self.camera = camera;
        self.partner = partner;
        self
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Keep the pairs whose mask entry is true.
    pub fn retain_mask(&self, mask: &[bool]) -> Self {
        let mut out = self.clone();
        out.pairs.clear();
        out.motions.clear();
        for ((p, m), &keep) in self.pairs.iter().zip(&self.motions).zip(mask) {
            if keep {
                out.pairs.push(*p);
                out.motions.push(*m);
            }
        }
        out
    }

    /// Swap the roles of source and destination (motions change sign).
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.pairs = self.pairs.iter().map(|p| p.reversed()).collect();
        out.motions = self.motions.iter().map(|&m| -m).collect();
        out.roi = None;
        out
    }

    /// Translate all source and destination points.
    pub fn shifted(&self, src_offset: Vec2, dst_offset: Vec2) -> Self {
        let pairs = self
            .pairs
            .iter()
            .map(|p| PointPair::new(p.src + src_offset, p.dst + dst_offset))
            .collect();
        let mut out = MatchSet::new(self.kind, self.frame, self.camera, pairs);
        out.partner = self.partner;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    /// Detection grid `(rows, cols)` over the frame or region of interest.
    pub grid_cells_for_detection: (usize, usize),
    pub corners_per_cell: usize,
    pub block_radius: u32,
    pub search_radius: u32,
    pub min_zncc: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            grid_cells_for_detection: (8, 8),
            corners_per_cell: 4,
            block_radius: 8,
            search_radius: 32,
            min_zncc: 0.7,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.grid_cells_for_detection;
        if r == 0 || c == 0 {
            return Err(Error::Config("matcher grid must have at least one cell".into()));
        }
        if self.corners_per_cell == 0 {
            return Err(Error::Config("matcher.corners_per_cell must be >= 1".into()));
        }
        if self.search_radius == 0 {
            return Err(Error::Config("matcher.search_radius must be >= 1".into()));
        }
        if self.block_radius == 0 {
            return Err(Error::Config("matcher.block_radius must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.min_zncc) {
            return Err(Error::Config("matcher.min_zncc must be in [-1, 1]".into()));
        }
        Ok(())
    }
}

// ── Corner detection ─────────────────────────────────────────────────────

const TENSOR_RADIUS: i64 = 2;

/// Minimum-eigenvalue (Shi–Tomasi) response over `rect`, which must leave a
/// one-pixel border inside the image. Returned row-major over `rect`.
fn shi_tomasi(img: &GrayImage, rect: Rect) -> Vec<f32> {
    let w = img.width as i64;
    let h = img.height as i64;
    // Tensor window extends TENSOR_RADIUS beyond rect, gradients one more.
    let x0 = (rect.x as i64 - TENSOR_RADIUS).max(1);
    let y0 = (rect.y as i64 - TENSOR_RADIUS).max(1);
    let x1 = (rect.x as i64 + rect.width as i64 + TENSOR_RADIUS).min(w - 1);
    let y1 = (rect.y as i64 + rect.height as i64 + TENSOR_RADIUS).min(h - 1);
    let gw = (x1 - x0).max(0) as usize;
    let gh = (y1 - y0).max(0) as usize;

    // Integral images of Ixx, Iyy, Ixy with a zero first row/column.
    let stride = gw + 1;
    let mut sxx = vec![0f64; stride * (gh + 1)];
    let mut syy = vec![0f64; stride * (gh + 1)];
    let mut sxy = vec![0f64; stride * (gh + 1)];
    for gy in 0..gh {
        let y = y0 + gy as i64;
        let (mut rxx, mut ryy, mut rxy) = (0f64, 0f64, 0f64);
        for gx in 0..gw {
            let x = x0 + gx as i64;
            let at = |xx: i64, yy: i64| img.data[(yy * w + xx) as usize] as f64;
            // Sobel
            let ix = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1))
                / 8.0;
            let iy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1))
                / 8.0;
            rxx += ix * ix;
            ryy += iy * iy;
            rxy += ix * iy;
            let k = (gy + 1) * stride + gx + 1;
            sxx[k] = sxx[k - stride] + rxx;
            syy[k] = syy[k - stride] + ryy;
            sxy[k] = sxy[k - stride] + rxy;
        }
    }
    let boxsum = |s: &[f64], ax: usize, ay: usize, bx: usize, by: usize| {
        s[by * stride + bx] - s[ay * stride + bx] - s[by * stride + ax] + s[ay * stride + ax]
    };

    let mut out = vec![0f32; rect.width as usize * rect.height as usize];
    for ry in 0..rect.height as i64 {
        let y = rect.y as i64 + ry;
        let ay = (y - TENSOR_RADIUS - y0).clamp(0, gh as i64) as usize;
        let by = (y + TENSOR_RADIUS + 1 - y0).clamp(0, gh as i64) as usize;
        for rx in 0..rect.width as i64 {
            let x = rect.x as i64 + rx;
            let ax = (x - TENSOR_RADIUS - x0).clamp(0, gw as i64) as usize;
            let bx = (x + TENSOR_RADIUS + 1 - x0).clamp(0, gw as i64) as usize;
            if ax >= bx || ay >= by {
                continue;
            }
            let a = boxsum(&sxx, ax, ay, bx, by);
            let c = boxsum(&syy, ax, ay, bx, by);
            let b = boxsum(&sxy, ax, ay, bx, by);
            let half_diff = 0.5 * (a - c);
            let lmin = 0.5 * (a + c) - (half_diff * half_diff + b * b).sqrt();
            out[(ry * rect.width as i64 + rx) as usize] = lmin.max(0.0) as f32;
        }
    }
    out
}

/// Up to `corners_per_cell` strongest corners per detection cell of `roi`,
/// kept at least `block_radius + 1` px away from the frame border.
pub fn detect_corners(img: &GrayImage, roi: Rect, cfg: &MatcherConfig) -> Vec<(u32, u32)> {
    let margin = cfg.block_radius + 1;
    let (w, h) = img.size();
    if w <= 2 * margin || h <= 2 * margin {
        return Vec::new();
    }
    let x_lo = roi.x.max(margin);
    let y_lo = roi.y.max(margin);
    let x_hi = (roi.x + roi.width).min(w - margin);
    let y_hi = (roi.y + roi.height).min(h - margin);
    if x_lo >= x_hi || y_lo >= y_hi {
        return Vec::new();
    }
    let active = Rect::new(x_lo, y_lo, x_hi - x_lo, y_hi - y_lo);
    let response = shi_tomasi(img, active);
    let resp = |x: u32, y: u32| -> f32 {
        response[((y - active.y) * active.width + (x - active.x)) as usize]
    };
    let peak = response.iter().copied().fold(0f32, f32::max);
    let floor = (peak * 1e-4).max(1e-6);
    let min_spacing = (cfg.block_radius / 2).max(2) as i64;

    let (rows, cols) = cfg.grid_cells_for_detection;
    let mut corners = Vec::new();
    for r in 0..rows {
        let cy0 = roi.y + (roi.height as u64 * r as u64 / rows as u64) as u32;
        let cy1 = roi.y + (roi.height as u64 * (r as u64 + 1) / rows as u64) as u32;
        for c in 0..cols {
            let cx0 = roi.x + (roi.width as u64 * c as u64 / cols as u64) as u32;
            let cx1 = roi.x + (roi.width as u64 * (c as u64 + 1) / cols as u64) as u32;
            let (sx0, sx1) = (cx0.max(x_lo), cx1.min(x_hi));
            let (sy0, sy1) = (cy0.max(y_lo), cy1.min(y_hi));
            if sx0 >= sx1 || sy0 >= sy1 {
                continue;
            }
            let mut candidates = Vec::new();
            for y in sy0..sy1 {
                for x in sx0..sx1 {
                    let v = resp(x, y);
                    if v <= floor {
                        continue;
                    }
                    // 3x3 local maximum, ties broken toward the top-left.
                    let mut is_max = true;
                    'nb: for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            let nx = x as i64 + dx;
                            let ny = y as i64 + dy;
                            if nx < active.x as i64
                                || ny < active.y as i64
                                || nx >= x_hi as i64
                                || ny >= y_hi as i64
                            {
                                continue;
                            }
                            let nv = resp(nx as u32, ny as u32);
                            let before = (dy, dx) < (0, 0);
                            if nv > v || (before && nv == v) {
                                is_max = false;
                                break 'nb;
                            }
                        }
                    }
                    if is_max {
                        candidates.push((v, x, y));
                    }
                }
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
            let mut picked: Vec<(u32, u32)> = Vec::new();
            for &(_, x, y) in &candidates {
                if picked.len() >= cfg.corners_per_cell {
                    break;
                }
                let far = picked.iter().all(|&(px, py)| {
                    (px as i64 - x as i64).abs().max((py as i64 - y as i64).abs()) >= min_spacing
                });
                if far {
                    picked.push((x, y));
                }
            }
            corners.extend(picked);
        }
    }
    corners
}

// ── ZNCC block matching ──────────────────────────────────────────────────

struct WindowStats {
    stride: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl WindowStats {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width as usize, img.height as usize);
        let stride = w + 1;
        let mut sum = vec![0f64; stride * (h + 1)];
        let mut sumsq = vec![0f64; stride * (h + 1)];
        for y in 0..h {
            let (mut rs, mut rq) = (0f64, 0f64);
            for x in 0..w {
                let v = img.data[y * w + x] as f64;
                rs += v;
                rq += v * v;
                let k = (y + 1) * stride + x + 1;
                sum[k] = sum[k - stride] + rs;
                sumsq[k] = sumsq[k - stride] + rq;
            }
        }
        Self { stride, sum, sumsq }
    }

    /// (sum, sum of squares) of the block centred at (cx, cy) with radius r.
    fn block(&self, cx: usize, cy: usize, r: usize) -> (f64, f64) {
        let (ax, ay, bx, by) = (cx - r, cy - r, cx + r + 1, cy + r + 1);
        let s = self.stride;
        let f = |t: &[f64]| t[by * s + bx] - t[ay * s + bx] - t[by * s + ax] + t[ay * s + ax];
        (f(&self.sum), f(&self.sumsq))
    }
}

struct Template {
    values: Vec<f32>,
    raw: Vec<f32>,
    energy: f64,
}

fn extract_template(img: &GrayImage, cx: u32, cy: u32, r: u32) -> Option<Template> {
    let side = (2 * r + 1) as usize;
    let mut raw = Vec::with_capacity(side * side);
    for y in cy - r..=cy + r {
        let start = (y * img.width + cx - r) as usize;
        raw.extend_from_slice(&img.data[start..start + side]);
    }
    let mean = raw.iter().map(|&v| v as f64).sum::<f64>() / raw.len() as f64;
    let values: Vec<f32> = raw.iter().map(|&v| (v as f64 - mean) as f32).collect();
    let energy: f64 = values.iter().map(|&v| (v as f64) * (v as f64)).sum();
    // Flat blocks (std below one grey level) cannot be localized.
    if energy < raw.len() as f64 {
        return None;
    }
    Some(Template {
        values,
        raw,
        energy,
    })
}

/// Match corners of `a` (restricted to `roi`) into `b`. When `prior` is
/// given, the search window is centred on `prior(corner)` instead of the
/// corner itself.
pub fn match_frames(
    a: &GrayImage,
    b: &GrayImage,
    roi: Option<Rect>,
    prior: Option<&Homography>,
    cfg: &MatcherConfig,
) -> Result<Vec<PointPair>> {
    cfg.validate()?;
    if a.size() != b.size() {
        return Err(Error::SizeMismatch(format!(
            "frames {:?} and {:?}",
            a.size(),
            b.size()
        )));
    }
    if a.is_constant() || b.is_constant() {
        return Err(Error::EmptyFrame);
    }
    let roi = match roi {
        Some(r) if !r.fits_in(a.width, a.height) => {
            return Err(Error::SizeMismatch(format!(
                "roi {r:?} outside {}x{} frame",
                a.width, a.height
            )))
        }
        Some(r) => r,
        None => Rect::full(a.width, a.height),
    };

    let corners = detect_corners(a, roi, cfg);
    let stats = WindowStats::new(b);
    let r = cfg.block_radius as i64;
    let sr = cfg.search_radius as i64;
    let side = (2 * r + 1) as usize;
    let n = (side * side) as f64;
    let (bw, bh) = (b.width as i64, b.height as i64);

    let mut pairs = Vec::with_capacity(corners.len());
    let mut acc: Vec<f32> = Vec::new();
    for (cx, cy) in corners {
        let Some(tpl) = extract_template(a, cx, cy, cfg.block_radius) else {
            continue;
        };
        let centre = match prior {
            Some(h) => match h.apply(Point2::new(cx as f64, cy as f64)) {
                Ok(p) if p.is_finite() => p,
                _ => continue,
            },
            None => Point2::new(cx as f64, cy as f64),
        };
        let (pcx, pcy) = (centre.x.round(), centre.y.round());
        if pcx.abs() > 1e9 || pcy.abs() > 1e9 {
            continue;
        }
        let (pcx, pcy) = (pcx as i64, pcy as i64);
        let x_lo = (pcx - sr).max(r);
        let x_hi = (pcx + sr).min(bw - 1 - r);
        let y_lo = (pcy - sr).max(r);
        let y_hi = (pcy + sr).min(bh - 1 - r);
        if x_lo > x_hi || y_lo > y_hi {
            continue;
        }
        let nx = (x_hi - x_lo + 1) as usize;
        let ny = (y_hi - y_lo + 1) as usize;
        acc.clear();
        acc.resize(nx * ny, 0.0);

        // Correlate row by row: for each template coefficient, accumulate its
        // product with a contiguous run of `b` across all horizontal offsets.
        for oy in 0..ny {
            let acc_row = &mut acc[oy * nx..(oy + 1) * nx];
            let top = (y_lo + oy as i64 - r) as usize;
            for j in 0..side {
                let brow = &b.data[(top + j) * bw as usize..(top + j + 1) * bw as usize];
                let trow = &tpl.values[j * side..(j + 1) * side];
                let left = (x_lo - r) as usize;
                for (i, &tv) in trow.iter().enumerate() {
                    let run = &brow[left + i..left + i + nx];
                    for (a, &bv) in acc_row.iter_mut().zip(run) {
                        *a += tv * bv;
                    }
                }
            }
        }

        let zncc_at = |ix: usize, iy: usize| -> f64 {
            let (s, q) = stats.block(x_lo as usize + ix, y_lo as usize + iy, r as usize);
            let var = q - s * s / n;
            if var <= 1e-9 * n {
                return -1.0;
            }
            acc[iy * nx + ix] as f64 / (tpl.energy * var).sqrt()
        };

        let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
        for iy in 0..ny {
            for ix in 0..nx {
                let z = zncc_at(ix, iy);
                if z > best.0 {
                    best = (z, ix, iy);
                }
            }
        }
        let (score, bx, by) = best;
        if !(score >= cfg.min_zncc) {
            continue;
        }
        // A peak on the window border may be the flank of one outside it.
        if (bx == 0 && nx > 1) || (by == 0 && ny > 1) || (bx + 1 == nx && nx > 1) || (by + 1 == ny && ny > 1) {
            continue;
        }
        let mx = x_lo + bx as i64;
        let my = y_lo + by as i64;

        // An exact block copy is an integer match; otherwise refine with a
        // parabola through the neighbouring scores.
        let exact = {
            let mut same = true;
            'rows: for j in 0..side {
                let yy = (my - r) as usize + j;
                let start = yy * bw as usize + (mx - r) as usize;
                if b.data[start..start + side] != tpl.raw[j * side..(j + 1) * side] {
                    same = false;
                    break 'rows;
                }
            }
            same
        };
        let (mut sx, mut sy) = (0.0, 0.0);
        if !exact {
            let parabola = |zm: f64, z0: f64, zp: f64| {
                let denom = zm - 2.0 * z0 + zp;
                if denom < -1e-12 {
                    (0.5 * (zm - zp) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            };
            if bx > 0 && bx + 1 < nx {
                sx = parabola(zncc_at(bx - 1, by), score, zncc_at(bx + 1, by));
            }
            if by > 0 && by + 1 < ny {
                sy = parabola(zncc_at(bx, by - 1), score, zncc_at(bx, by + 1));
            }
        }
        pairs.push(PointPair::new(
            Point2::new(cx as f64, cy as f64),
            Point2::new(mx as f64 + sx, my as f64 + sy),
        ));
    }
    Ok(pairs)
}

/// Detect corners in `frame_a` (inside `roi` when given) and match them into
/// `frame_b`. The result is tagged `Inter` when a region is given and
/// `Intra` otherwise, with frame and camera indices zero; callers retag it.
pub fn detect_and_match(
    frame_a: &GrayImage,
    frame_b: &GrayImage,
    roi: Option<Rect>,
    cfg: &MatcherConfig,
) -> Result<MatchSet> {
    detect_and_match_guided(frame_a, frame_b, roi, None, cfg)
}

pub fn detect_and_match_guided(
    frame_a: &GrayImage,
    frame_b: &GrayImage,
    roi: Option<Rect>,
    prior: Option<&Homography>,
    cfg: &MatcherConfig,
) -> Result<MatchSet> {
    let pairs = match_frames(frame_a, frame_b, roi, prior, cfg)?;
    let kind = if roi.is_some() {
        MatchKind::Inter
    } else {
        MatchKind::Intra
    };
    let mut set = MatchSet::new(kind, 0, 0, pairs);
    set.roi = roi;
    Ok(set)
}

// ── Outlier rejection ────────────────────────────────────────────────────

/// Robustly fit the motion homography of a match set and drop the pairs it
/// does not explain. The returned homography maps destination points onto
/// source points, so `H(v) - v` predicts the motion `src - dst` anchored at
/// the destination.
pub fn reject_outliers(ms: &MatchSet, cfg: &RobustConfig) -> Result<(MatchSet, Homography)> {
    if ms.len() < 4 {
        return Err(Error::TooFewPairs { got: ms.len() });
    }
    let reversed: Vec<PointPair> = ms.pairs.iter().map(|p| p.reversed()).collect();
    let (h, mask) = robust_homography(&reversed, cfg)?;
    Ok((ms.retain_mask(&mask), h))
}

// ── Match files ──────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchFile {
    frame_size: [i64; 2],
    kind: MatchKind,
    records: Vec<MatchRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchRecord {
    frame: i64,
    camera: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partner: Option<i64>,
    pairs: Vec<[f64; 4]>,
}

fn json_error(e: serde_json::Error) -> Error {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => Error::Schema(e.to_string()),
        _ => Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        },
    }
}

fn non_negative(v: i64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Schema(format!("{what} must be non-negative, got {v}")))
}

/// Parse a match file held in memory. Sets come back ordered by frame, then
/// camera.
pub fn parse_matches(text: &str, kind: MatchKind) -> Result<Vec<MatchSet>> {
    let file: MatchFile = serde_json::from_str(text).map_err(json_error)?;
    if file.kind != kind {
        return Err(Error::Schema(format!(
            "expected kind {:?}, file declares {:?}",
            kind.as_str(),
            file.kind.as_str()
        )));
    }
    let [w, h] = file.frame_size;
    if w <= 0 || h <= 0 {
        return Err(Error::Schema(format!("frame_size must be positive, got {w}x{h}")));
    }
    let (w, h) = (w as f64, h as f64);
    let mut sets = Vec::with_capacity(file.records.len());
    for (ri, rec) in file.records.into_iter().enumerate() {
        let frame = non_negative(rec.frame, "frame")?;
        let camera = non_negative(rec.camera, "camera")?;
        let partner = match (kind, rec.partner) {
            (_, Some(p)) => Some(non_negative(p, "partner")?),
            (MatchKind::Inter, None) => Some(camera + 1),
            (MatchKind::Intra, None) => None,
        };
        let mut pairs = Vec::with_capacity(rec.pairs.len());
        for (pi, q) in rec.pairs.iter().enumerate() {
            let inside = |x: f64, y: f64| x.is_finite() && y.is_finite() && (0.0..=w).contains(&x) && (0.0..=h).contains(&y);
            if !inside(q[0], q[1]) || !inside(q[2], q[3]) {
                return Err(Error::Schema(format!(
                    "record {ri} pair {pi}: coordinates {q:?} outside the {w}x{h} frame"
                )));
            }
            pairs.push(PointPair::new(Point2::new(q[0], q[1]), Point2::new(q[2], q[3])));
        }
        sets.push(MatchSet::new(kind, frame, camera, pairs).with_camera(camera, partner));
    }
    sets.sort_by_key(|s| (s.frame, s.camera));
    Ok(sets)
}

pub fn load_matches(path: &Path, kind: MatchKind) -> Result<Vec<MatchSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matches(&text, kind)
}

/// Serialize match sets of one kind in the match-file format.
pub fn matches_to_json(sets: &[MatchSet], kind: MatchKind, frame_size: (u32, u32)) -> String {
    let file = MatchFile {
        frame_size: [frame_size.0 as i64, frame_size.1 as i64],
        kind,
        records: sets
            .iter()
            .map(|s| MatchRecord {
                frame: s.frame as i64,
                camera: s.camera as i64,
                partner: s.partner.map(|p| p as i64),
                pairs: s
                    .pairs
                    .iter()
                    .map(|p| [p.src.x, p.src.y, p.dst.x, p.dst.y])
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("match file serializes")
}

pub fn save_matches(
    path: &Path,
    sets: &[MatchSet],
    kind: MatchKind,
    frame_size: (u32, u32),
) -> Result<()> {
    std::fs::write(path, matches_to_json(sets, kind, frame_size)).map_err(|e| Error::io(path, e))
}
