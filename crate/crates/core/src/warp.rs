//! Mesh warping, canvas composition and blending.
//!
//! A warp map assigns each output vertex `v` the source position `v + d`.
//! Output pixels interpolate the displaced vertices of their cell bilinearly
//! and sample the source frame there.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Homography, Point2, Vec2};
use crate::image::RgbImage;
use crate::motionfield::MeshGrid;
use crate::optimizer::JointSolution;
use crate::profiles::VertexProfileSet;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpMap {
    pub grid: MeshGrid,
    pub frame: usize,
    /// One displacement per vertex, row-major.
    pub displacements: Vec<Vec2>,
}

impl WarpMap {
    pub fn identity(grid: MeshGrid, frame: usize) -> Self {
        Self {
            grid,
            frame,
            displacements: vec![Vec2::ZERO; grid.n_vertices()],
        }
    }

    fn corner(&self, row: usize, col: usize) -> Point2 {
        self.grid.vertex(row, col) + self.displacements[self.grid.vertex_index(row, col)]
    }

    /// Displaced corners of a cell: top-left, top-right, bottom-right, bottom-left.
    fn quad(&self, row: usize, col: usize) -> [Point2; 4] {
        [
            self.corner(row, col),
            self.corner(row, col + 1),
            self.corner(row + 1, col + 1),
            self.corner(row + 1, col),
        ]
    }

    /// Fails with `DegenerateQuad` on the first displaced cell that is not a
    /// convex quad with the original orientation.
    pub fn check_folds(&self) -> Result<()> {
        for r in 0..self.grid.cells.0 {
            for c in 0..self.grid.cells.1 {
                let q = self.quad(r, c);
                for k in 0..4 {
                    let e1 = q[(k + 1) % 4] - q[k];
                    let e2 = q[(k + 2) % 4] - q[(k + 1) % 4];
                    let turn = e1.cross(e2);
                    if !(turn > 0.0) {
                        return Err(Error::DegenerateQuad { row: r, col: c });
                    }
                }
            }
        }
        Ok(())
    }

    /// Source position sampled by output position `q`.
    pub fn source_of(&self, q: Point2) -> Point2 {
        let (r, c) = self.grid.cell_of(q);
        let (cw, ch) = self.grid.cell_size();
        let o = self.grid.vertex(r, c);
        let s = (q.x - o.x) / cw;
        let t = (q.y - o.y) / ch;
        let [p00, p10, p11, p01] = self.quad(r, c);
        bilerp(p00, p10, p01, p11, s, t)
    }

    /// Output position whose source is `p`, if `p` lies inside the warped mesh.
    pub fn output_of(&self, p: Point2) -> Option<Point2> {
        let (cw, ch) = self.grid.cell_size();
        for r in 0..self.grid.cells.0 {
            for c in 0..self.grid.cells.1 {
                let q = self.quad(r, c);
                let (lo, hi) = bounds(&q);
                if p.x < lo.x - 1e-9 || p.y < lo.y - 1e-9 || p.x > hi.x + 1e-9 || p.y > hi.y + 1e-9 {
                    continue;
                }
                if let Some((s, t)) = inverse_bilinear(&q, p) {
                    let o = self.grid.vertex(r, c);
                    return Some(Point2::new(o.x + s * cw, o.y + t * ch));
                }
            }
        }
        None
    }
}

#[inline]
fn bilerp(p00: Point2, p10: Point2, p01: Point2, p11: Point2, s: f64, t: f64) -> Point2 {
    let top = p00 * (1.0 - s) + p10 * s;
    let bottom = p01 * (1.0 - s) + p11 * s;
    top * (1.0 - t) + bottom * t
}

fn bounds(q: &[Point2; 4]) -> (Point2, Point2) {
    let mut lo = q[0];
    let mut hi = q[0];
    for p in &q[1..] {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    (lo, hi)
}

/// `(s, t)` in the unit square with `bilerp(quad, s, t) = p`, by Newton steps.
fn inverse_bilinear(q: &[Point2; 4], p: Point2) -> Option<(f64, f64)> {
    let [p00, p10, p11, p01] = *q;
    let (mut s, mut t) = (0.5, 0.5);
    for _ in 0..30 {
        let f = bilerp(p00, p10, p01, p11, s, t) - p;
        let ds = (p10 - p00) * (1.0 - t) + (p11 - p01) * t;
        let dt = (p01 - p00) * (1.0 - s) + (p11 - p10) * s;
        let det = ds.cross(dt);
        if det.abs() < 1e-15 {
            return None;
        }
        let step_s = (f.x * dt.y - f.y * dt.x) / det;
        let step_t = (ds.x * f.y - ds.y * f.x) / det;
        s -= step_s;
        t -= step_t;
        if step_s.abs() < 1e-13 && step_t.abs() < 1e-13 {
            break;
        }
    }
    const EPS: f64 = 1e-9;
    let inside = (-EPS..=1.0 + EPS).contains(&s) && (-EPS..=1.0 + EPS).contains(&t);
    let exact = (bilerp(p00, p10, p01, p11, s, t) - p).norm() < 1e-7;
    (inside && exact).then_some((s.clamp(0.0, 1.0), t.clamp(0.0, 1.0)))
}

/// `V^ + T^ - T` for every camera and frame.
pub fn build_warp_maps(solution: &JointSolution, ts: &[VertexProfileSet]) -> Result<Vec<Vec<WarpMap>>> {
    if solution.smoothed.len() != ts.len() || solution.stitching.len() != ts.len() {
        return Err(Error::ShapeMismatch(format!(
            "solution covers {} cameras, {} trajectories given",
            solution.smoothed.len(),
            ts.len()
        )));
    }
    ts.iter()
        .enumerate()
        .map(|(c, t)| {
            let disp = solution.smoothed[c].zip_map(t, |a, b| a - b)?;
            let total = solution.stitching[c].zip_map(&disp, |a, b| a + b)?;
            Ok(maps_from_profiles(&total))
        })
        .collect()
}

/// `T^ - T` for every frame of one camera.
pub fn build_stabilization_maps(smoothed: &VertexProfileSet, t: &VertexProfileSet) -> Result<Vec<WarpMap>> {
    Ok(maps_from_profiles(&smoothed.zip_map(t, |a, b| a - b)?))
}

fn maps_from_profiles(p: &VertexProfileSet) -> Vec<WarpMap> {
    (0..p.n_frames())
        .map(|i| WarpMap {
            grid: p.grid,
            frame: i,
            displacements: p.frame(i),
        })
        .collect()
}

/// RGB raster plus validity mask. Invalid pixels are black.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub image: RgbImage,
    pub mask: Vec<bool>,
}

impl Canvas {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            image: RgbImage::new(width, height),
            mask: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_image(image: RgbImage) -> Self {
        let n = image.width as usize * image.height as usize;
        Self {
            image,
            mask: vec![true; n],
        }
    }

    pub fn size(&self) -> (u32, u32) {
        self.image.size()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len().max(1) as f64
    }

    /// Copy of the `w x h` window at `(x, y)`; pixels outside the canvas are invalid.
    pub fn window(&self, x: i64, y: i64, w: u32, h: u32) -> Canvas {
        let mut out = Canvas::empty(w, h);
        let (cw, ch) = self.size();
        for oy in 0..h {
            let sy = y + oy as i64;
            if sy < 0 || sy >= ch as i64 {
                continue;
            }
            for ox in 0..w {
                let sx = x + ox as i64;
                if sx < 0 || sx >= cw as i64 {
                    continue;
                }
                let si = sy as usize * cw as usize + sx as usize;
                if self.mask[si] {
                    let oi = oy as usize * w as usize + ox as usize;
                    out.mask[oi] = true;
                    out.image.data[oi * 3..oi * 3 + 3].copy_from_slice(&self.image.data[si * 3..si * 3 + 3]);
                }
            }
        }
        out
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Render `frame` through `wm` into a canvas of `canvas_size`, placing output
/// pixel `q` at `offset + q`.
pub fn warp_frame(frame: &RgbImage, wm: &WarpMap, canvas_size: (u32, u32), offset: (i64, i64)) -> Result<Canvas> {
    if wm.grid.frame_size != frame.size() || wm.displacements.len() != wm.grid.n_vertices() {
        return Err(Error::GridMismatch(format!(
            "warp grid {:?} for a {}x{} frame",
            wm.grid, frame.width, frame.height
        )));
    }
    if wm.displacements.iter().any(|d| !d.is_finite()) {
        return Err(Error::DegenerateInput("non-finite warp displacement".into()));
    }
    wm.check_folds()?;

    let (cw, ch) = canvas_size;
    let (fw, fh) = frame.size();
    let (cell_w, cell_h) = wm.grid.cell_size();
    let mut canvas = Canvas::empty(cw, ch);
    let rows: Vec<(u32, Vec<(u32, [u8; 3])>)> = (0..fh)
        .into_par_iter()
        .filter_map(|qy| {
            let cy = offset.1 + qy as i64;
            if cy < 0 || cy >= ch as i64 {
                return None;
            }
            let qyf = qy as f64;
            let (r, _) = wm.grid.cell_of(Point2::new(0.0, qyf));
            let t = (qyf - wm.grid.vertex(r, 0).y) / cell_h;
            let mut out = Vec::with_capacity(fw as usize);
            for qx in 0..fw {
                let cx = offset.0 + qx as i64;
                if cx < 0 || cx >= cw as i64 {
                    continue;
                }
                let qxf = qx as f64;
                let (_, c) = wm.grid.cell_of(Point2::new(qxf, qyf));
                let s = (qxf - wm.grid.vertex(0, c).x) / cell_w;
                let [p00, p10, p11, p01] = wm.quad(r, c);
                let src = bilerp(p00, p10, p01, p11, s, t);
                if let Some(rgb) = frame.sample_bilinear(src.x, src.y) {
                    out.push((cx as u32, [to_u8(rgb[0]), to_u8(rgb[1]), to_u8(rgb[2])]));
                }
            }
            Some((cy as u32, out))
        })
        .collect();
    for (y, row) in rows {
        for (x, rgb) in row {
            canvas.image.put_pixel(x, y, rgb);
            canvas.mask[(y * cw + x) as usize] = true;
        }
    }
    Ok(canvas)
}

/// Warp each frame by its static homography (frame -> canvas) and feather
/// the results together.
pub fn compose_precalibrated(frames: &[RgbImage], statics: &[Homography], canvas_size: (u32, u32)) -> Result<Canvas> {
    if frames.len() != statics.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} frames for {} homographies",
            frames.len(),
            statics.len()
        )));
    }
    let canvases = frames
        .iter()
        .zip(statics)
        .map(|(f, h)| warp_homography(f, h, canvas_size))
        .collect::<Result<Vec<_>>>()?;
    blend(&canvases, BlendMode::Feather)
}

/// Backward homography warp of one frame onto a canvas.
pub fn warp_homography(frame: &RgbImage, h: &Homography, canvas_size: (u32, u32)) -> Result<Canvas> {
    let inv = h.inverse()?;
    let (cw, ch) = canvas_size;
    let mut canvas = Canvas::empty(cw, ch);
    for y in 0..ch {
        for x in 0..cw {
            let p = inv.apply(Point2::new(x as f64, y as f64))?;
            if let Some(rgb) = frame.sample_bilinear(p.x, p.y) {
                canvas.image.put_pixel(x, y, [to_u8(rgb[0]), to_u8(rgb[1]), to_u8(rgb[2])]);
                canvas.mask[(y * cw + x) as usize] = true;
            }
        }
    }
    Ok(canvas)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum BlendMode {
    Feather,
    Multiband {
        #[serde(default = "default_levels")]
        levels: usize,
    },
}

fn default_levels() -> usize {
    4
}

impl Default for BlendMode {
    fn default() -> Self {
        BlendMode::Feather
    }
}

impl BlendMode {
    pub fn multiband() -> Self {
        BlendMode::Multiband { levels: default_levels() }
    }
}

/// Chamfer distance from every valid pixel to the nearest invalid one.
/// Canvas borders do not count as invalid.
fn feather_weights(mask: &[bool], w: usize, h: usize) -> Vec<f32> {
    const FAR: f32 = 1e9;
    let diag = std::f32::consts::SQRT_2;
    let mut d: Vec<f32> = mask.iter().map(|&m| if m { FAR } else { 0.0 }).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut v = d[i];
            if x > 0 {
                v = v.min(d[i - 1] + 1.0);
            }
            if y > 0 {
                v = v.min(d[i - w] + 1.0);
                if x > 0 {
                    v = v.min(d[i - w - 1] + diag);
                }
                if x + 1 < w {
                    v = v.min(d[i - w + 1] + diag);
                }
            }
            d[i] = v;
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            let mut v = d[i];
            if x + 1 < w {
                v = v.min(d[i + 1] + 1.0);
            }
            if y + 1 < h {
                v = v.min(d[i + w] + 1.0);
                if x + 1 < w {
                    v = v.min(d[i + w + 1] + diag);
                }
                if x > 0 {
                    v = v.min(d[i + w - 1] + diag);
                }
            }
            d[i] = v;
        }
    }
    let cap = (w + h) as f32;
    d.iter().map(|&v| v.min(cap)).collect()
}

pub fn blend(canvases: &[Canvas], mode: BlendMode) -> Result<Canvas> {
    let first = canvases.first().ok_or(Error::EmptyInput)?;
    let size = first.size();
    if let Some(bad) = canvases.iter().find(|c| c.size() != size) {
        return Err(Error::SizeMismatch(format!(
            "canvas {:?} vs {:?}",
            bad.size(),
            size
        )));
    }
    if canvases.len() == 1 {
        return Ok(first.clone());
    }
    let (w, h) = (size.0 as usize, size.1 as usize);
    let weights: Vec<Vec<f32>> = canvases
        .par_iter()
        .map(|c| feather_weights(&c.mask, w, h))
        .collect();
    let feathered = feather_planes(canvases, &weights, w, h);
    let union: Vec<bool> = (0..w * h).map(|i| canvases.iter().any(|c| c.mask[i])).collect();
    let planes = match mode {
        BlendMode::Feather => feathered,
        BlendMode::Multiband { levels } => multiband(canvases, &weights, &feathered, &union, w, h, levels.max(1)),
    };
    let mut out = Canvas::empty(size.0, size.1);
    for i in 0..w * h {
        if union[i] {
            out.mask[i] = true;
            for c in 0..3 {
                out.image.data[i * 3 + c] = (planes[c][i] as f64).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}

fn feather_planes(canvases: &[Canvas], weights: &[Vec<f32>], w: usize, h: usize) -> [Vec<f32>; 3] {
    let mut planes = [vec![0f32; w * h], vec![0f32; w * h], vec![0f32; w * h]];
    for i in 0..w * h {
        let mut acc = [0f64; 3];
        let mut total = 0f64;
        for (c, wt) in canvases.iter().zip(weights) {
            if c.mask[i] {
                let wv = wt[i] as f64;
                total += wv;
                for k in 0..3 {
                    acc[k] += wv * c.image.data[i * 3 + k] as f64;
                }
            }
        }
        if total > 0.0 {
            for k in 0..3 {
                planes[k][i] = (acc[k] / total) as f32;
            }
        }
    }
    planes
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// Binomial 5-tap blur followed by 2x decimation.
    fn down(&self) -> Plane {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (nw, nh) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut tmp = vec![0f32; nw * self.h];
        for y in 0..self.h {
            for x in 0..nw {
                let cx = 2 * x as isize;
                tmp[y * nw + x] = (0..5).map(|k| K[k] * self.at(cx + k as isize - 2, y as isize)).sum();
            }
        }
        let t = Plane { w: nw, h: self.h, data: tmp };
        let mut data = vec![0f32; nw * nh];
        for y in 0..nh {
            for x in 0..nw {
                let cy = 2 * y as isize;
                data[y * nw + x] = (0..5).map(|k| K[k] * t.at(x as isize, cy + k as isize - 2)).sum();
            }
        }
        Plane { w: nw, h: nh, data }
    }

    /// Bilinear expansion to `w x h`.
    fn up(&self, w: usize, h: usize) -> Plane {
        let mut data = vec![0f32; w * h];
        for y in 0..h {
            let fy = y as f32 * 0.5;
            let y0 = fy.floor() as isize;
            let ty = fy - y0 as f32;
            for x in 0..w {
                let fx = x as f32 * 0.5;
                let x0 = fx.floor() as isize;
                let tx = fx - x0 as f32;
                let top = self.at(x0, y0) * (1.0 - tx) + self.at(x0 + 1, y0) * tx;
                let bottom = self.at(x0, y0 + 1) * (1.0 - tx) + self.at(x0 + 1, y0 + 1) * tx;
                data[y * w + x] = top * (1.0 - ty) + bottom * ty;
            }
        }
        Plane { w, h, data }
    }
}

/// Fill pixels with zero weight from coarser averages (pull-push).
fn pull_push(values: &Plane, weight: &Plane) -> Plane {
    if weight.data.iter().all(|&w| w > 0.0) || values.w * values.h <= 1 {
        return values.clone();
    }
    let premult = Plane {
        data: values.data.iter().zip(&weight.data).map(|(v, w)| v * w).collect(),
        ..values.clone()
    };
    let coarse_w = weight.down();
    let coarse_v = premult.down();
    let normalized = Plane {
        data: coarse_v
            .data
            .iter()
            .zip(&coarse_w.data)
            .map(|(v, w)| if *w > 0.0 { v / w } else { 0.0 })
            .collect(),
        ..coarse_v.clone()
    };
    let coarse_mask = Plane {
        data: coarse_w.data.iter().map(|&w| if w > 0.0 { 1.0 } else { 0.0 }).collect(),
        ..coarse_w
    };
    let filled = pull_push(&normalized, &coarse_mask).up(values.w, values.h);
    Plane {
        data: values
            .data
            .iter()
            .zip(&weight.data)
            .zip(&filled.data)
            .map(|((v, w), f)| if *w > 0.0 { *v } else { *f })
            .collect(),
        ..values.clone()
    }
}

fn multiband(
    canvases: &[Canvas],
    weights: &[Vec<f32>],
    feathered: &[Vec<f32>; 3],
    union: &[bool],
    w: usize,
    h: usize,
    levels: usize,
) -> [Vec<f32>; 3] {
    let union_plane = Plane {
        w,
        h,
        data: union.iter().map(|&u| if u { 1.0 } else { 0.0 }).collect(),
    };
    // Gaussian pyramids of the feather weights, shared by all channels.
    let weight_pyramids: Vec<Vec<Plane>> = weights
        .iter()
        .zip(canvases)
        .map(|(wt, c)| {
            let base = Plane {
                w,
                h,
                data: wt.iter().zip(&c.mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect(),
            };
            gaussian_pyramid(base, levels)
        })
        .collect();

    let mut out: [Vec<f32>; 3] = Default::default();
    for (k, plane_out) in out.iter_mut().enumerate() {
        let reference = pull_push(
            &Plane {
                w,
                h,
                data: feathered[k].clone(),
            },
            &union_plane,
        );
        let bands: Vec<Vec<Plane>> = canvases
            .iter()
            .map(|c| {
                let filled = Plane {
                    w,
                    h,
                    data: (0..w * h)
                        .map(|i| {
                            if c.mask[i] {
                                c.image.data[i * 3 + k] as f32
                            } else {
                                reference.data[i]
                            }
                        })
                        .collect(),
                };
                laplacian_pyramid(filled, levels)
            })
            .collect();
        let mut blended: Vec<Plane> = Vec::with_capacity(levels);
        for l in 0..levels {
            let size = (bands[0][l].w, bands[0][l].h);
            let mut data = vec![0f32; size.0 * size.1];
            for (i, d) in data.iter_mut().enumerate() {
                let mut acc = 0f32;
                let mut total = 0f32;
                for (b, wp) in bands.iter().zip(&weight_pyramids) {
                    acc += wp[l].data[i] * b[l].data[i];
                    total += wp[l].data[i];
                }
                *d = if total > 0.0 {
                    acc / total
                } else {
                    bands.iter().map(|b| b[l].data[i]).sum::<f32>() / bands.len() as f32
                };
            }
            blended.push(Plane {
                w: size.0,
                h: size.1,
                data,
            });
        }
        *plane_out = collapse(blended).data;
    }
    out
}

fn gaussian_pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![base];
    while out.len() < levels {
        let next = out.last().expect("non-empty").down();
        out.push(next);
    }
    out
}

fn laplacian_pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let g = gaussian_pyramid(base, levels);
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels - 1 {
        let up = g[l + 1].up(g[l].w, g[l].h);
        out.push(Plane {
            data: g[l].data.iter().zip(&up.data).map(|(a, b)| a - b).collect(),
            ..g[l].clone()
        });
    }
    out.push(g[levels - 1].clone());
    out
}

fn collapse(mut bands: Vec<Plane>) -> Plane {
    let mut acc = bands.pop().expect("at least one band");
    while let Some(band) = bands.pop() {
        let up = acc.up(band.w, band.h);
        acc = Plane {
            data: band.data.iter().zip(&up.data).map(|(a, b)| a + b).collect(),
            ..band
        };
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_scene;
    use proptest::prelude::*;

    fn texture(w: u32, h: u32) -> RgbImage {
        generate_scene(3, (w.max(256), h.max(256))).unwrap().crop(0, 0, w, h).unwrap()
    }

    fn uniform(grid: MeshGrid, d: Vec2) -> WarpMap {
        WarpMap {
            grid,
            frame: 0,
            displacements: vec![d; grid.n_vertices()],
        }
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = texture(300, 200);
        let grid = MeshGrid::new((300, 200), (7, 9)).unwrap();
        let c = warp_frame(&img, &WarpMap::identity(grid, 0), (300, 200), (0, 0)).unwrap();
        assert_eq!(c.image, img);
        assert!(c.mask.iter().all(|&m| m));

        let placed = warp_frame(&img, &WarpMap::identity(grid, 0), (340, 220), (20, 10)).unwrap();
        for y in 0..220u32 {
            for x in 0..340u32 {
                let inside = (20..320).contains(&x) && (10..210).contains(&y);
                assert_eq!(placed.mask[(y * 340 + x) as usize], inside);
                if inside {
                    assert_eq!(placed.image.pixel(x, y), img.pixel(x - 20, y - 10));
                } else {
                    assert_eq!(placed.image.pixel(x, y), [0, 0, 0]);
                }
            }
        }
    }

    #[test]
    fn uniform_displacement_translates() {
        let img = texture(256, 256);
        let grid = MeshGrid::new((256, 256), (8, 8)).unwrap();
        let c = warp_frame(&img, &uniform(grid, Vec2::new(10.0, 0.0)), (256, 256), (0, 0)).unwrap();
        let mut agree = 0;
        let mut total = 0;
        for y in 0..256 {
            for x in 0..246 {
                total += 1;
                if c.image.pixel(x, y) == img.pixel(x + 10, y) {
                    agree += 1;
                }
            }
            for x in 246..256 {
                assert!(!c.mask[(y * 256 + x) as usize]);
            }
        }
        assert!(agree as f64 >= 0.99 * total as f64);
    }

    #[test]
    fn mesh_approximates_homography_warp() {
        let img = texture(320, 240);
        let grid = MeshGrid::new((320, 240), (16, 16)).unwrap();
        let h = Homography::from_row_slice(&[1.02, 0.01, 3.0, -0.015, 0.99, 2.0, 2e-5, -1e-5, 1.0]).unwrap();
        let wm = WarpMap {
            grid,
            frame: 0,
            displacements: grid.vertices().iter().map(|&v| h.apply(v).unwrap() - v).collect(),
        };
        let mesh = warp_frame(&img, &wm, (320, 240), (0, 0)).unwrap();
        let (mut err, mut n) = (0.0, 0usize);
        for y in 0..240u32 {
            for x in 0..320u32 {
                let p = h.apply(Point2::new(x as f64, y as f64)).unwrap();
                let Some(direct) = img.sample_bilinear(p.x, p.y) else { continue };
                if !mesh.mask[(y * 320 + x) as usize] {
                    continue;
                }
                let got = mesh.image.pixel(x, y);
                for k in 0..3 {
                    err += (got[k] as f64 - to_u8(direct[k]) as f64).abs();
                    n += 1;
                }
            }
        }
        assert!(err / (n as f64) <= 1.0, "{}", err / n as f64);
    }

    #[test]
    fn folds_and_grid_mismatch_are_reported() {
        let img = texture(256, 256);
        let grid = MeshGrid::new((256, 256), (4, 4)).unwrap();
        let mut wm = WarpMap::identity(grid, 0);
        wm.displacements[grid.vertex_index(1, 1)] = Vec2::new(-74.0, -74.0);
        assert!(matches!(
            warp_frame(&img, &wm, (256, 256), (0, 0)),
            Err(Error::DegenerateQuad { row: 0, col: 0 })
        ));
        let other = MeshGrid::new((128, 256), (4, 4)).unwrap();
        assert!(matches!(
            warp_frame(&img, &WarpMap::identity(other, 0), (256, 256), (0, 0)),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn inverse_mapping_round_trips() {
        let grid = MeshGrid::new((200, 100), (4, 5)).unwrap();
        let mut wm = uniform(grid, Vec2::new(3.0, -2.0));
        wm.displacements[grid.vertex_index(2, 2)] = Vec2::new(5.0, 1.0);
        for &(x, y) in &[(10.0, 10.0), (99.5, 50.2), (150.0, 80.0), (80.0, 50.0)] {
            let q = Point2::new(x, y);
            let p = wm.source_of(q);
            let back = wm.output_of(p).unwrap();
            assert!((back - q).norm() < 1e-7, "{q:?} -> {p:?} -> {back:?}");
        }
        assert!(wm.output_of(Point2::new(-50.0, 0.0)).is_none());
    }

    #[test]
    fn warp_map_formulas() {
        use crate::optimizer::JointSolution;
        use crate::profiles::ProfileRole;
        let grid = MeshGrid::new((64, 64), (1, 1)).unwrap();
        let t = VertexProfileSet::zeros(grid, 0, ProfileRole::Trajectory, 3);
        let that = t.zip_map(&t, |_, _| Vec2::new(1.0, 2.0)).unwrap();
        let vhat = t.zip_map(&t, |_, _| Vec2::new(3.0, 4.0)).unwrap();
        let sol = JointSolution {
            smoothed: vec![that.clone()],
            stitching: vec![vhat],
            energy_trace: vec![],
        };
        let maps = build_warp_maps(&sol, &[t.clone()]).unwrap();
        assert!(maps[0].iter().all(|m| m.displacements.iter().all(|d| *d == Vec2::new(4.0, 6.0))));
        let stab = build_stabilization_maps(&that, &t).unwrap();
        assert!(stab.iter().all(|m| m.displacements.iter().all(|d| *d == Vec2::new(1.0, 2.0))));
        let zero = JointSolution {
            smoothed: vec![t.clone()],
            stitching: vec![t.clone()],
            energy_trace: vec![],
        };
        let maps = build_warp_maps(&zero, &[t.clone()]).unwrap();
        assert!(maps[0].iter().all(|m| m.displacements.iter().all(|d| *d == Vec2::ZERO)));
    }

    #[test]
    fn precalibrated_composition() {
        let img = texture(120, 80);
        let single = compose_precalibrated(&[img.clone()], &[Homography::identity()], (120, 80)).unwrap();
        assert_eq!(single.image, img);

        let pair = compose_precalibrated(
            &[img.clone(), img.clone()],
            &[Homography::identity(), Homography::translation(120.0, 0.0)],
            (240, 80),
        )
        .unwrap();
        assert!(pair.mask.iter().all(|&m| m));
        for y in 0..80 {
            for x in 0..120 {
                assert_eq!(pair.image.pixel(x, y), img.pixel(x, y));
                assert_eq!(pair.image.pixel(x + 120, y), img.pixel(x, y));
            }
        }

        let flat = RgbImage::from_raw(120, 80, vec![90; 120 * 80 * 3]).unwrap();
        let overlap = compose_precalibrated(
            &[flat.clone(), flat.clone()],
            &[Homography::identity(), Homography::translation(60.0, 0.0)],
            (180, 80),
        )
        .unwrap();
        assert!(overlap.image.data.iter().all(|&v| v == 90));
    }

    fn strip(width: u32, from: u32, to: u32, value: u8) -> Canvas {
        let mut c = Canvas::empty(width, 20);
        for y in 0..20 {
            for x in from..to {
                c.image.put_pixel(x, y, [value; 3]);
                c.mask[(y * width + x) as usize] = true;
            }
        }
        c
    }

    #[test]
    fn blend_examples() {
        let a = strip(100, 0, 60, 200);
        assert_eq!(blend(&[a.clone()], BlendMode::Feather).unwrap(), a);
        assert!(matches!(blend(&[], BlendMode::Feather), Err(Error::EmptyInput)));
        assert!(matches!(
            blend(&[a.clone(), Canvas::empty(10, 10)], BlendMode::Feather),
            Err(Error::SizeMismatch(_))
        ));

        // Equal values where both are valid.
        let img = texture(100, 256);
        let mut left = Canvas::from_image(img.clone());
        let mut right = Canvas::from_image(img.clone());
        for y in 0..256usize {
            for x in 0..100usize {
                let i = y * 100 + x;
                if x >= 70 {
                    left.mask[i] = false;
                    left.image.data[i * 3..i * 3 + 3].fill(0);
                }
                if x < 30 {
                    right.mask[i] = false;
                    right.image.data[i * 3..i * 3 + 3].fill(0);
                }
            }
        }
        for mode in [BlendMode::Feather, BlendMode::multiband()] {
            let out = blend(&[left.clone(), right.clone()], mode).unwrap();
            assert!(out.mask.iter().all(|&m| m));
            assert_eq!(out.image, img, "{mode:?}");
        }

        // Black/white ramp across the overlap.
        let black = strip(100, 0, 60, 0);
        let white = strip(100, 40, 100, 255);
        let out = blend(&[black, white], BlendMode::Feather).unwrap();
        for y in 0..20 {
            let row: Vec<u8> = (0..100).map(|x| out.image.pixel(x, y)[0]).collect();
            assert!(row.windows(2).all(|w| w[0] <= w[1]), "{row:?}");
            assert!(row[45] > 0 && row[55] < 255);
        }
    }

    #[test]
    fn multiband_keeps_mask_and_range() {
        let a = strip(64, 0, 40, 30);
        let b = strip(64, 24, 64, 220);
        let out = blend(&[a.clone(), b], BlendMode::Multiband { levels: 3 }).unwrap();
        assert!(out.mask.iter().all(|&m| m));
        assert_eq!(out.image.pixel(2, 5), [30; 3]);
        assert_eq!(out.image.pixel(62, 5), [220; 3]);
        let lone = strip(64, 10, 20, 77);
        let out = blend(&[lone.clone(), Canvas::empty(64, 20)], BlendMode::multiband()).unwrap();
        assert_eq!(out.mask, lone.mask);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn translation_commutes_with_cropping(dx in -6.0..6.0f64, dy in -6.0..6.0f64) {
            let img = texture(256, 256);
            let d = Vec2::new(dx, dy);
            let full = warp_frame(&img, &uniform(MeshGrid::new((256, 256), (8, 8)).unwrap(), d), (256, 256), (0, 0)).unwrap();
            let crop = img.crop(64, 64, 128, 128).unwrap();
            let small = warp_frame(&crop, &uniform(MeshGrid::new((128, 128), (4, 4)).unwrap(), d), (128, 128), (0, 0)).unwrap();
            for y in 16..112u32 {
                for x in 16..112u32 {
                    let a = full.image.pixel(x + 64, y + 64);
                    let b = small.image.pixel(x, y);
                    for k in 0..3 {
                        prop_assert!((a[k] as i32 - b[k] as i32).abs() <= 1);
                    }
                }
            }
        }

        #[test]
        fn warped_mask_never_exceeds_source(dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
            let img = texture(64, 48);
            let grid = MeshGrid::new((64, 48), (4, 4)).unwrap();
            let c = warp_frame(&img, &uniform(grid, Vec2::new(dx, dy)), (64, 48), (0, 0)).unwrap();
            for y in 0..48u32 {
                for x in 0..64u32 {
                    let sx = x as f64 + dx;
                    let sy = y as f64 + dy;
                    let inside = sx >= -1e-6 && sy >= -1e-6 && sx <= 63.0 + 1e-6 && sy <= 47.0 + 1e-6;
                    prop_assert_eq!(c.mask[(y * 64 + x) as usize], inside);
                    if !inside {
                        prop_assert_eq!(c.image.pixel(x, y), [0, 0, 0]);
                    }
                }
            }
        }
    }
}
