//! Synthetic two-camera rig with exact ground truth.
//!
//! Both cameras are integer cropping windows over one procedural scene. Each
//! window follows its own random-walk jitter; camera B additionally drifts
//! along a slow sinusoid (articulation). Because every motion is an integer
//! translation, ground-truth matches hold exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Homography, Point2, PointPair, Vec2};
use crate::image::{write_image, RgbImage};
use crate::matching::{save_matches, MatchKind, MatchSet};

pub const MIN_SCENE_SIDE: u32 = 256;

/// Deterministic procedural texture: multi-octave value noise with
/// per-channel tint plus hard-edged random blobs.
pub fn generate_scene(seed: u64, size: (u32, u32)) -> Result<RgbImage> {
    let (w, h) = size;
    if w < MIN_SCENE_SIDE || h < MIN_SCENE_SIDE {
        return Err(Error::TooSmall {
            width: w,
            height: h,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = w as usize * h as usize;

    let mut luma = vec![0f32; n];
    for (cell, amp) in [(96, 1.0), (48, 0.8), (24, 0.7), (12, 0.6), (6, 0.5), (3, 0.35)] {
        add_value_noise(&mut luma, w, h, cell, amp, &mut rng);
    }
    normalize(&mut luma, 20.0, 235.0);

    let mut tints = [vec![0f32; n], vec![0f32; n], vec![0f32; n]];
    for t in tints.iter_mut() {
        add_value_noise(t, w, h, 64, 1.0, &mut rng);
        normalize(t, -30.0, 30.0);
    }

    let mut data = vec![0u8; n * 3];
    for i in 0..n {
        for c in 0..3 {
            data[i * 3 + c] = (luma[i] + tints[c][i]).round().clamp(0.0, 255.0) as u8;
        }
    }
    let mut img = RgbImage::from_raw(w, h, data)?;

    let blobs = (n / 2500).max(16);
    for _ in 0..blobs {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let r = rng.random_range(3.0..16.0f64);
        let colour = if rng.random_bool(0.5) {
            [rng.random_range(0..60u8), rng.random_range(0..60u8), rng.random_range(0..60u8)]
        } else {
            [
                rng.random_range(196..=255u8),
                rng.random_range(196..=255u8),
                rng.random_range(196..=255u8),
            ]
        };
        let x0 = (cx - r).floor().max(0.0) as u32;
        let x1 = ((cx + r).ceil() as u32).min(w - 1);
        let y0 = (cy - r).floor().max(0.0) as u32;
        let y1 = ((cy + r).ceil() as u32).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r * r {
                    img.put_pixel(x, y, colour);
                }
            }
        }
    }
    Ok(img)
}

fn add_value_noise(out: &mut [f32], w: u32, h: u32, cell: u32, amp: f32, rng: &mut ChaCha8Rng) {
    let gw = (w / cell + 2) as usize;
    let gh = (h / cell + 2) as usize;
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random::<f32>()).collect();
    let inv = 1.0 / cell as f32;
    for y in 0..h {
        let fy = y as f32 * inv;
        let iy = fy as usize;
        let ty = smoothstep(fy - iy as f32);
        for x in 0..w {
            let fx = x as f32 * inv;
            let ix = fx as usize;
            let tx = smoothstep(fx - ix as f32);
            let v00 = lattice[iy * gw + ix];
            let v10 = lattice[iy * gw + ix + 1];
            let v01 = lattice[(iy + 1) * gw + ix];
            let v11 = lattice[(iy + 1) * gw + ix + 1];
            let top = v00 + (v10 - v00) * tx;
            let bottom = v01 + (v11 - v01) * tx;
            out[(y * w + x) as usize] += amp * (top + (bottom - top) * ty);
        }
    }
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

fn normalize(v: &mut [f32], lo: f32, hi: f32) {
    let (min, max) = v
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = (max - min).max(1e-6);
    for x in v.iter_mut() {
        *x = lo + (*x - min) / span * (hi - lo);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSpec {
    pub scene_seed: u64,
    pub scene_size: (u32, u32),
    pub frame_size: (u32, u32),
    pub n_frames: usize,
    /// Standard deviation of each random-walk step, per axis, in pixels.
    pub jitter_sigma: f64,
    pub articulation_amplitude: f64,
    /// Period of the articulation sinusoid in frames; `n_frames / 2` when unset.
    pub articulation_period: Option<f64>,
    pub overlap_fraction: f64,
    /// Spacing of the ground-truth match lattice in pixels.
    pub match_spacing: u32,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            scene_seed: 1,
            scene_size: (2000, 900),
            frame_size: (960, 540),
            n_frames: 100,
            jitter_sigma: 4.0,
            articulation_amplitude: 0.0,
            articulation_period: None,
            overlap_fraction: 0.3,
            match_spacing: 40,
        }
    }
}

impl RigSpec {
    pub fn validate(&self) -> Result<()> {
        let (sw, sh) = self.scene_size;
        if sw < MIN_SCENE_SIDE || sh < MIN_SCENE_SIDE {
            return Err(Error::TooSmall {
                width: sw,
                height: sh,
            });
        }
        let (fw, fh) = self.frame_size;
        if fw < 32 || fh < 32 {
            return Err(Error::Config(format!("frame_size {fw}x{fh} is below 32x32")));
        }
        if self.n_frames == 0 {
            return Err(Error::Config("n_frames must be >= 1".into()));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::Config("jitter_sigma must be finite and >= 0".into()));
        }
        if !(self.articulation_amplitude >= 0.0 && self.articulation_amplitude.is_finite()) {
            return Err(Error::Config("articulation_amplitude must be finite and >= 0".into()));
        }
        if let Some(p) = self.articulation_period {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config("articulation_period must be positive".into()));
            }
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction < 1.0) {
            return Err(Error::Config("overlap_fraction must lie in (0, 1)".into()));
        }
        if self.match_spacing == 0 {
            return Err(Error::Config("match_spacing must be >= 1".into()));
        }
        if self.baseline() + fw > sw || fh > sh {
            return Err(Error::Config(format!(
                "two {fw}x{fh} windows with overlap {} do not fit a {sw}x{sh} scene",
                self.overlap_fraction
            )));
        }
        Ok(())
    }

    /// Horizontal distance between the nominal window origins.
    pub fn baseline(&self) -> u32 {
        (self.frame_size.0 as f64 * (1.0 - self.overlap_fraction)).round() as u32
    }

    /// Nominal (jitter-free) window origins of camera A and B in the scene.
    pub fn nominal_origins(&self) -> [(i64, i64); 2] {
        let (sw, sh) = self.scene_size;
        let (fw, fh) = self.frame_size;
        let span = self.baseline() + fw;
        let ax = ((sw - span) / 2) as i64;
        let ay = ((sh - fh) / 2) as i64;
        [(ax, ay), (ax + self.baseline() as i64, ay)]
    }

    /// Panorama canvas that holds both nominal windows side by side.
    pub fn canvas_layout(&self) -> CanvasLayout {
        CanvasLayout {
            size: (self.baseline() + self.frame_size.0, self.frame_size.1),
            offsets: vec![(0, 0), (self.baseline() as i64, 0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanvasLayout {
    pub size: (u32, u32),
    pub offsets: Vec<(i64, i64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CameraTruth {
    /// Window top-left corner in scene coordinates, per frame.
    pub positions: Vec<(i64, i64)>,
    /// Displacement of the window from its nominal origin, per frame.
    pub trajectory: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub frame_size: (u32, u32),
    pub cameras: [CameraTruth; 2],
    /// Maps camera A frame coordinates to camera B frame coordinates.
    pub inter_homographies: Vec<Homography>,
    /// Per camera, `n_frames - 1` sets; set `i` pairs frame `i` with `i + 1`.
    pub intra_matches: [Vec<MatchSet>; 2],
    /// Per frame, camera A points (src) against camera B points (dst).
    pub inter_matches: Vec<MatchSet>,
    pub layout: CanvasLayout,
}

impl GroundTruth {
    /// Translation taking camera A frame coordinates to camera B at frame `i`.
    pub fn inter_offset(&self, i: usize) -> Vec2 {
        let a = self.cameras[0].positions[i];
        let b = self.cameras[1].positions[i];
        Vec2::new((a.0 - b.0) as f64, (a.1 - b.1) as f64)
    }
}

/// A rig whose frames are cropped from the scene on demand.
#[derive(Debug, Clone)]
pub struct RigSequence {
    pub spec: RigSpec,
    pub scene: RgbImage,
    pub truth: GroundTruth,
}

impl RigSequence {
    pub fn new(spec: &RigSpec) -> Result<Self> {
        spec.validate()?;
        let scene = generate_scene(spec.scene_seed, spec.scene_size)?;
        let truth = ground_truth(spec)?;
        Ok(Self {
            spec: spec.clone(),
            scene,
            truth,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.spec.n_frames
    }

    pub fn frame(&self, camera: usize, i: usize) -> Result<RgbImage> {
        let (x, y) = self.truth.cameras[camera].positions[i];
        let (w, h) = self.spec.frame_size;
        self.scene.crop(x as u32, y as u32, w, h)
    }

    /// Write `cam0/`, `cam1/`, both match files and `ground_truth.json`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        use rayon::prelude::*;
        for cam in 0..2 {
            let sub = dir.join(format!("cam{cam}"));
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            (0..self.n_frames()).into_par_iter().try_for_each(|i| {
                write_image(&sub.join(format!("{i:06}.png")), &self.frame(cam, i)?)
            })?;
        }
        let intra: Vec<MatchSet> = self.truth.intra_matches.iter().flatten().cloned().collect();
        save_matches(
            &dir.join("matches_intra.json"),
            &intra,
            MatchKind::Intra,
            self.spec.frame_size,
        )?;
        save_matches(
            &dir.join("matches_inter.json"),
            &self.truth.inter_matches,
            MatchKind::Inter,
            self.spec.frame_size,
        )?;
        let path = dir.join("ground_truth.json");
        std::fs::write(&path, self.ground_truth_json()).map_err(|e| Error::io(&path, e))
    }

    pub fn ground_truth_json(&self) -> String {
        let doc = serde_json::json!({
            "spec": self.spec,
            "frame_size": self.truth.frame_size,
            "cameras": self.truth.cameras,
            "inter_homographies": self.truth.inter_homographies,
            "layout": self.truth.layout,
            "streams": ["cam0", "cam1"],
            "intra_matches": "matches_intra.json",
            "inter_matches": "matches_inter.json",
        });
        serde_json::to_string_pretty(&doc).expect("ground truth serializes")
    }
}

/// Materialize both streams and the ground truth.
pub fn generate_rig_sequence(spec: &RigSpec) -> Result<(Vec<RgbImage>, Vec<RgbImage>, GroundTruth)> {
    let rig = RigSequence::new(spec)?;
    let a = (0..rig.n_frames()).map(|i| rig.frame(0, i)).collect::<Result<Vec<_>>>()?;
    let b = (0..rig.n_frames()).map(|i| rig.frame(1, i)).collect::<Result<Vec<_>>>()?;
    Ok((a, b, rig.truth))
}

/// Window trajectories and exact matches, without rendering any pixels.
pub fn ground_truth(spec: &RigSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let n = spec.n_frames;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.scene_seed ^ 0x9e37_79b9_7f4a_7c15);
    let step = Normal::new(0.0, spec.jitter_sigma.max(0.0)).expect("finite sigma");
    let period = spec.articulation_period.unwrap_or((n as f64 / 2.0).max(1.0));

    let origins = spec.nominal_origins();
    let (sw, sh) = spec.scene_size;
    let (fw, fh) = spec.frame_size;
    let mut cameras: [CameraTruth; 2] = Default::default();
    for (cam, truth) in cameras.iter_mut().enumerate() {
        let mut walk = Vec2::ZERO;
        for i in 0..n {
            if i > 0 && spec.jitter_sigma > 0.0 {
                walk += Vec2::new(step.sample(&mut rng), step.sample(&mut rng));
            }
            let mut offset = walk;
            if cam == 1 {
                let phase = (2.0 * std::f64::consts::PI * i as f64 / period).sin();
                offset += Vec2::new(spec.articulation_amplitude * phase, 0.5 * spec.articulation_amplitude * phase);
            }
            let dx = offset.x.round() as i64;
            let dy = offset.y.round() as i64;
            let pos = (origins[cam].0 + dx, origins[cam].1 + dy);
            if pos.0 < 0 || pos.1 < 0 || pos.0 + fw as i64 > sw as i64 || pos.1 + fh as i64 > sh as i64 {
                return Err(Error::WindowOutOfScene { camera: cam, frame: i });
            }
            truth.positions.push(pos);
            truth.trajectory.push(Vec2::new(dx as f64, dy as f64));
        }
    }

    let lattice = lattice_points(spec.frame_size, spec.match_spacing);
    let inside = |p: Point2| p.x >= 0.0 && p.y >= 0.0 && p.x <= (fw - 1) as f64 && p.y <= (fh - 1) as f64;
    let shift = |from: (i64, i64), to: (i64, i64)| Vec2::new((from.0 - to.0) as f64, (from.1 - to.1) as f64);

    let mut intra_matches: [Vec<MatchSet>; 2] = Default::default();
    for cam in 0..2 {
        let pos = &cameras[cam].positions;
        for i in 0..n.saturating_sub(1) {
            let d = shift(pos[i], pos[i + 1]);
            let pairs = lattice
                .iter()
                .filter_map(|&p| inside(p + d).then(|| PointPair::new(p, p + d)))
                .collect();
            intra_matches[cam].push(MatchSet::new(MatchKind::Intra, i, cam, pairs));
        }
    }

    let mut inter_matches = Vec::with_capacity(n);
    let mut inter_homographies = Vec::with_capacity(n);
    for i in 0..n {
        let d = shift(cameras[0].positions[i], cameras[1].positions[i]);
        inter_homographies.push(Homography::translation(d.x, d.y));
        let pairs = lattice
            .iter()
            .filter_map(|&p| inside(p + d).then(|| PointPair::new(p, p + d)))
            .collect();
        inter_matches.push(MatchSet::new(MatchKind::Inter, i, 0, pairs));
    }

    Ok(GroundTruth {
        frame_size: spec.frame_size,
        cameras,
        inter_homographies,
        intra_matches,
        inter_matches,
        layout: spec.canvas_layout(),
    })
}

fn lattice_points(frame_size: (u32, u32), spacing: u32) -> Vec<Point2> {
    let (w, h) = frame_size;
    let half = spacing / 2;
    let mut pts = Vec::new();
    let mut y = half;
    while y < h {
        let mut x = half;
        while x < w {
            pts.push(Point2::new(x as f64, y as f64));
            x += spacing;
        }
        y += spacing;
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> RigSpec {
        RigSpec {
            scene_size: (700, 400),
            frame_size: (320, 240),
            n_frames: 12,
            jitter_sigma: 2.0,
            ..RigSpec::default()
        }
    }

    #[test]
    fn scene_is_deterministic_and_seed_dependent() {
        let a = generate_scene(5, (300, 260)).unwrap();
        assert_eq!(a, generate_scene(5, (300, 260)).unwrap());
        let b = generate_scene(6, (300, 260)).unwrap();
        let differing = a
            .data
            .chunks(3)
            .zip(b.data.chunks(3))
            .filter(|(p, q)| p != q)
            .count();
        assert!(differing * 2 >= (300 * 260), "{differing}");
    }

    #[test]
    fn every_tile_is_textured() {
        let img = generate_scene(9, (512, 320)).unwrap().to_gray();
        for ty in 0..320 / 64 {
            for tx in 0..512 / 64 {
                let vals: Vec<f64> = (0..64)
                    .flat_map(|y| (0..64).map(move |x| (x, y)))
                    .map(|(x, y)| img.get(tx * 64 + x, ty * 64 + y) as f64)
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                assert!(var.sqrt() >= 10.0, "tile {tx},{ty} std {}", var.sqrt());
            }
        }
    }

    #[test]
    fn scene_too_small() {
        assert!(matches!(
            generate_scene(0, (255, 400)),
            Err(Error::TooSmall { width: 255, .. })
        ));
    }

    #[test]
    fn static_rig_has_constant_frames() {
        let spec = RigSpec {
            jitter_sigma: 0.0,
            ..small_spec()
        };
        let rig = RigSequence::new(&spec).unwrap();
        for cam in 0..2 {
            let first = rig.frame(cam, 0).unwrap();
            for i in 1..spec.n_frames {
                assert_eq!(rig.frame(cam, i).unwrap(), first);
            }
            assert!(rig.truth.cameras[cam].trajectory.iter().all(|t| *t == Vec2::ZERO));
        }
    }

    #[test]
    fn intra_truth_equals_jitter_step() {
        let rig = RigSequence::new(&small_spec()).unwrap();
        for cam in 0..2 {
            let traj = &rig.truth.cameras[cam].trajectory;
            for (i, ms) in rig.truth.intra_matches[cam].iter().enumerate() {
                assert!(!ms.is_empty());
                for m in &ms.motions {
                    assert_eq!(*m, traj[i + 1] - traj[i]);
                }
            }
        }
    }

    #[test]
    fn truth_matches_reproject_exactly() {
        let spec = RigSpec {
            articulation_amplitude: 10.0,
            ..small_spec()
        };
        let rig = RigSequence::new(&spec).unwrap();
        for (i, ms) in rig.truth.inter_matches.iter().enumerate() {
            let h = rig.truth.inter_homographies[i];
            let a = rig.frame(0, i).unwrap();
            let b = rig.frame(1, i).unwrap();
            for p in &ms.pairs {
                assert_eq!(h.apply(p.src).unwrap(), p.dst);
                assert_eq!(
                    a.pixel(p.src.x as u32, p.src.y as u32),
                    b.pixel(p.dst.x as u32, p.dst.y as u32)
                );
            }
        }
        for cam in 0..2 {
            for ms in &rig.truth.intra_matches[cam] {
                let a = rig.frame(cam, ms.frame).unwrap();
                let b = rig.frame(cam, ms.frame + 1).unwrap();
                for p in &ms.pairs {
                    assert_eq!(
                        a.pixel(p.src.x as u32, p.src.y as u32),
                        b.pixel(p.dst.x as u32, p.dst.y as u32)
                    );
                }
            }
        }
    }

    #[test]
    fn inter_sources_lie_in_the_overlap() {
        let spec = small_spec();
        let truth = ground_truth(&spec).unwrap();
        let (fw, _) = spec.frame_size;
        for (i, ms) in truth.inter_matches.iter().enumerate() {
            let d = truth.inter_offset(i);
            let overlap_start = -d.x;
            assert!(ms.pairs.iter().all(|p| p.src.x >= overlap_start && p.src.x < fw as f64));
        }
    }

    #[test]
    fn window_leaving_scene_is_reported() {
        let spec = RigSpec {
            scene_size: (660, 260),
            jitter_sigma: 30.0,
            ..small_spec()
        };
        assert!(matches!(
            ground_truth(&spec),
            Err(Error::WindowOutOfScene { .. })
        ));
    }

    #[test]
    fn rig_is_reproducible() {
        let spec = RigSpec {
            articulation_amplitude: 5.0,
            ..small_spec()
        };
        let (a1, b1, t1) = generate_rig_sequence(&spec).unwrap();
        let (a2, b2, t2) = generate_rig_sequence(&spec).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn ground_truth_json_roundtrips_homographies() {
        let rig = RigSequence::new(&small_spec()).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&rig.ground_truth_json()).unwrap();
        let hs: Vec<Homography> = serde_json::from_value(doc["inter_homographies"].clone()).unwrap();
        assert_eq!(hs, rig.truth.inter_homographies);
    }
}
