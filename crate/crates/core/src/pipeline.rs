//! End-to-end orchestration: matching, motion fields, joint optimization,
//! warping, blending and evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{InputSpec, PipelineConfig};
use crate::error::{Error, Result};
use crate::geometry::{Homography, PointPair, Vec2};
use crate::image::{read_image, write_image, Rect, RgbImage};
use crate::matching::{detect_and_match, detect_and_match_guided, load_matches, reject_outliers, MatchKind, MatchSet};
use crate::metrics::{
    frame_fit, mean_stability, stitching_score, summarize_fits, FrameFit, FrameStitchError, MetricsConfig,
    MIN_STABILITY_FRAMES,
};
use crate::motionfield::{estimate_field, unified_field, write_fields_csv, FieldKind, MeshGrid, MotionField};
use crate::optimizer::{
    smooth_trajectories, stabilization_energy, unified_optimize, write_energy_csv, JointSolution,
};
use crate::profiles::{accumulate_trajectories, collect_stitch_profiles, write_profiles_csv, VertexProfileSet};
use crate::synth::{CanvasLayout, RigSequence, RigSpec};
use crate::warp::{blend, build_stabilization_maps, build_warp_maps, compose_precalibrated, warp_frame, BlendMode, Canvas, WarpMap};

/// Share of failed estimates beyond which a run is a numerical failure.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

// ── Frame sources and sinks ──────────────────────────────────────────────

pub trait FrameSource: Send + Sync {
    fn len(&self) -> usize;
    fn frame_size(&self) -> (u32, u32);
    fn load(&self, index: usize) -> Result<RgbImage>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Numbered `.png` / `.ppm` files of one directory, in name order.
pub struct DirSource {
    paths: Vec<PathBuf>,
    size: (u32, u32),
}

impl DirSource {
    pub fn open(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if matches!(ext.as_deref(), Some("png" | "ppm")) {
                paths.push(path);
            }
        }
        paths.sort();
        let size = match paths.first() {
            Some(p) => read_image(p)?.size(),
            None => (0, 0),
        };
        Ok(Self { paths, size })
    }
}

impl FrameSource for DirSource {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn frame_size(&self) -> (u32, u32) {
        self.size
    }

    fn load(&self, index: usize) -> Result<RgbImage> {
        let path = &self.paths[index];
        let img = read_image(path)?;
        if img.size() != self.size {
            return Err(Error::Image {
                path: path.clone(),
                msg: format!("frame is {:?}, stream is {:?}", img.size(), self.size),
            });
        }
        Ok(img)
    }
}

pub struct MemorySource {
    frames: Vec<RgbImage>,
}

impl MemorySource {
    pub fn new(frames: Vec<RgbImage>) -> Self {
        Self { frames }
    }
}

impl FrameSource for MemorySource {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame_size(&self) -> (u32, u32) {
        self.frames.first().map_or((0, 0), RgbImage::size)
    }

    fn load(&self, index: usize) -> Result<RgbImage> {
        Ok(self.frames[index].clone())
    }
}

/// Several streams composed through static homographies.
pub struct CompositeSource {
    sources: Vec<DirSource>,
    statics: Vec<Homography>,
    size: (u32, u32),
}

impl FrameSource for CompositeSource {
    fn len(&self) -> usize {
        self.sources.iter().map(DirSource::len).min().unwrap_or(0)
    }

    fn frame_size(&self) -> (u32, u32) {
        self.size
    }

    fn load(&self, index: usize) -> Result<RgbImage> {
        let frames = self
            .sources
            .iter()
            .map(|s| s.load(index))
            .collect::<Result<Vec<_>>>()?;
        Ok(compose_precalibrated(&frames, &self.statics, self.size)?.image)
    }
}

/// One camera of a synthetic rig, cropped on demand.
pub struct RigSource {
    rig: Arc<RigSequence>,
    camera: usize,
}

impl RigSource {
    pub fn new(rig: Arc<RigSequence>, camera: usize) -> Self {
        Self { rig, camera }
    }

    pub fn pair(rig: RigSequence) -> Vec<Box<dyn FrameSource>> {
        let rig = Arc::new(rig);
        (0..2)
            .map(|c| Box::new(RigSource::new(rig.clone(), c)) as Box<dyn FrameSource>)
            .collect()
    }
}

impl FrameSource for RigSource {
    fn len(&self) -> usize {
        self.rig.n_frames()
    }

    fn frame_size(&self) -> (u32, u32) {
        self.rig.spec.frame_size
    }

    fn load(&self, index: usize) -> Result<RgbImage> {
        self.rig.frame(self.camera, index)
    }
}

pub fn open_sources(cfg: &PipelineConfig) -> Result<Vec<Box<dyn FrameSource>>> {
    cfg.inputs
        .iter()
        .map(|input| -> Result<Box<dyn FrameSource>> {
            Ok(match input {
                InputSpec::Dir(dir) => Box::new(DirSource::open(dir)?),
                InputSpec::Composite(c) => Box::new(CompositeSource {
                    sources: c.sources.iter().map(|d| DirSource::open(d)).collect::<Result<_>>()?,
                    statics: c.statics.clone(),
                    size: c.size,
                }),
            })
        })
        .collect()
}

pub trait FrameSink: Send + Sync {
    fn put(&self, stream: &str, index: usize, image: &RgbImage) -> Result<()>;
}

/// Writes `{root}/frames/{stream}/{index:06}.png`.
pub struct DirSink {
    root: PathBuf,
}

impl DirSink {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl FrameSink for DirSink {
    fn put(&self, stream: &str, index: usize, image: &RgbImage) -> Result<()> {
        let dir = self.root.join("frames").join(stream);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_image(&dir.join(format!("{index:06}.png")), image)
    }
}

#[derive(Default)]
pub struct MemorySink {
    frames: Mutex<BTreeMap<(String, usize), RgbImage>>,
}

impl MemorySink {
    pub fn get(&self, stream: &str, index: usize) -> Option<RgbImage> {
        self.frames.lock().expect("sink lock").get(&(stream.to_string(), index)).cloned()
    }

    pub fn len(&self) -> usize {
        self.frames.lock().expect("sink lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSink for MemorySink {
    fn put(&self, stream: &str, index: usize, image: &RgbImage) -> Result<()> {
        self.frames
            .lock()
            .expect("sink lock")
            .insert((stream.to_string(), index), image.clone());
        Ok(())
    }
}

pub struct NullSink;

impl FrameSink for NullSink {
    fn put(&self, _: &str, _: usize, _: &RgbImage) -> Result<()> {
        Ok(())
    }
}

// ── Reports ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub intra: usize,
    pub intra_total: usize,
    pub inter: usize,
    pub inter_total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerFrameReport {
    /// Per camera, per frame.
    pub cropping: Vec<Vec<f64>>,
    pub distortion: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stitching: Vec<FrameStitchError>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cropping: f64,
    pub distortion: f64,
    /// Stability of the rendered camera path.
    pub stability: Option<f64>,
    /// Stability of the estimated input path.
    pub input_stability: Option<f64>,
    pub stitching_score: Option<f64>,
    pub per_frame: PerFrameReport,
    #[serde(default)]
    pub failures: FailureCounts,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything a run computed, besides the rendered frames.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: MetricsReport,
    pub grid: MeshGrid,
    pub layout: CanvasLayout,
    pub intra_fields: Vec<Vec<MotionField>>,
    pub inter_fields: Vec<Vec<MotionField>>,
    pub trajectories: Vec<VertexProfileSet>,
    pub stitching: Vec<VertexProfileSet>,
    pub smoothed: Vec<VertexProfileSet>,
    pub optimized_stitching: Vec<VertexProfileSet>,
    pub energy_trace: Vec<f64>,
    pub warp_maps: Vec<Vec<WarpMap>>,
}

impl PipelineRun {
    /// Write `metrics.json`, `trajectories.csv`, `energy.csv` and, when
    /// asked, per-camera `fields_cam{c}.csv`.
    pub fn write_reports(&self, out: &Path, write_fields: bool) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("metrics.json");
        std::fs::write(&path, self.report.to_json()).map_err(|e| Error::io(&path, e))?;

        let path = out.join("trajectories.csv");
        let sets: Vec<&VertexProfileSet> = self
            .trajectories
            .iter()
            .chain(&self.smoothed)
            .chain(&self.stitching)
            .chain(&self.optimized_stitching)
            .collect();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_profiles_csv(BufWriter::new(file), &sets).map_err(|e| Error::io(&path, e))?;

        let path = out.join("energy.csv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_energy_csv(BufWriter::new(file), &self.energy_trace).map_err(|e| Error::io(&path, e))?;

        if write_fields {
            for (c, intra) in self.intra_fields.iter().enumerate() {
                let mut fields = intra.clone();
                if let Some(inter) = self.inter_fields.get(c) {
                    fields.extend(inter.iter().cloned());
                    for (a, b) in intra.iter().zip(inter) {
                        fields.push(unified_field(a, b)?);
                    }
                }
                let path = out.join(format!("fields_cam{c}.csv"));
                let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
                write_fields_csv(BufWriter::new(file), &fields).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }
}

// ── Estimation ───────────────────────────────────────────────────────────

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-estimate seed derived from the run seed.
pub fn derive_seed(seed: u64, frame: usize, camera: usize, kind: MatchKind) -> u64 {
    let tag = match kind {
        MatchKind::Intra => 1,
        MatchKind::Inter => 2,
    };
    [frame as u64, camera as u64, tag]
        .into_iter()
        .fold(splitmix(seed), |z, v| splitmix(z ^ v))
}

/// Estimation problems that are absorbed by an identity fallback.
fn is_recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::NoConsensus { .. }
            | Error::TooFewPairs { .. }
            | Error::DegenerateInput(_)
            | Error::EmptyFrame
            | Error::AtInfinity { .. }
    )
}

fn check_failures(failed: &[Error], total: usize, what: &str) -> Result<()> {
    if total == 0 || failed.is_empty() {
        return Ok(());
    }
    let share = failed.len() as f64 / total as f64;
    if share > MAX_FAILURE_FRACTION {
        warn!("{what}: {} of {total} estimates failed", failed.len());
        return Err(match &failed[0] {
            Error::NoConsensus { inliers } => Error::NoConsensus { inliers: *inliers },
            _ => Error::NoConsensus { inliers: 0 },
        });
    }
    Ok(())
}

fn index_sets(sets: Vec<MatchSet>) -> HashMap<(usize, usize), MatchSet> {
    sets.into_iter().map(|s| ((s.frame, s.camera), s)).collect()
}

fn fit_field(ms: &MatchSet, grid: &MeshGrid, frame: usize, cfg: &PipelineConfig, seed: u64) -> Result<(MatchSet, MotionField)> {
    let (inliers, h) = reject_outliers(ms, &cfg.robust.with_seed(seed))?;
    let field = estimate_field(&inliers, &h, grid, frame, &cfg.propagation)?;
    Ok((inliers, field))
}

struct Inputs {
    n_frames: usize,
    frame_size: (u32, u32),
}

fn check_sources(sources: &[Box<dyn FrameSource>]) -> Result<Inputs> {
    let first = sources.first().ok_or(Error::EmptyInput)?;
    for (c, s) in sources.iter().enumerate() {
        if s.len() != first.len() {
            return Err(Error::ShapeMismatch(format!(
                "stream {c} has {} frames, stream 0 has {}",
                s.len(),
                first.len()
            )));
        }
        if s.frame_size() != first.frame_size() {
            return Err(Error::SizeMismatch(format!(
                "stream {c} frames are {:?}, stream 0 frames are {:?}",
                s.frame_size(),
                first.frame_size()
            )));
        }
    }
    if first.len() < 2 {
        return Err(Error::TooShort { got: first.len(), need: 2 });
    }
    Ok(Inputs {
        n_frames: first.len(),
        frame_size: first.frame_size(),
    })
}

/// Intra fields per camera (`fields[c][k]` for frame `k`, frame 0 zero) and
/// the failed estimates.
pub fn estimate_intra_fields(
    sources: &[Box<dyn FrameSource>],
    grid: &MeshGrid,
    cfg: &PipelineConfig,
    file_sets: Option<Vec<MatchSet>>,
) -> Result<(Vec<Vec<MotionField>>, Vec<Error>)> {
    let n = sources.first().map_or(0, |s| s.len());
    let file_sets = file_sets.map(index_sets);
    let per_pair: Vec<Vec<(MotionField, Option<Error>)>> = (0..n.saturating_sub(1))
        .into_par_iter()
        .map(|i| {
            sources
                .iter()
                .enumerate()
                .map(|(c, src)| {
                    let ms = match &file_sets {
                        Some(sets) => sets
                            .get(&(i, c))
                            .cloned()
                            .ok_or(Error::TooFewPairs { got: 0 }),
                        None => {
                            let a = src.load(i)?.to_gray();
                            let b = src.load(i + 1)?.to_gray();
                            detect_and_match(&a, &b, None, &cfg.matcher).map(|s| s.with_frame(i).with_camera(c, None))
                        }
                    };
                    let seed = derive_seed(cfg.seed, i, c, MatchKind::Intra);
                    match ms.and_then(|ms| fit_field(&ms, grid, i + 1, cfg, seed)) {
                        Ok((_, f)) => Ok((f, None)),
                        Err(e) if is_recoverable(&e) => {
                            warn!("camera {c}, frames {i}->{}: {e}; using zero motion", i + 1);
                            Ok((MotionField::zeros(*grid, FieldKind::Intra, i + 1), Some(e)))
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut fields: Vec<Vec<MotionField>> = (0..sources.len())
        .map(|_| vec![MotionField::zeros(*grid, FieldKind::Intra, 0)])
        .collect();
    let mut failed = Vec::new();
    for row in per_pair {
        for (c, (f, err)) in row.into_iter().enumerate() {
            fields[c].push(f);
            failed.extend(err);
        }
    }
    Ok((fields, failed))
}

fn mean_at(t: &VertexProfileSet, i: usize) -> Vec2 {
    let sum = t.series.iter().fold(Vec2::ZERO, |acc, s| acc + s[i]);
    sum * (1.0 / t.n_vertices().max(1) as f64)
}

/// Split each inter pair at its canvas midpoint: camera 0 aligns `p_a` with
/// the midpoint expressed in its own frame, camera 1 likewise.
fn midpoint_sets(raw: &MatchSet, layout: &CanvasLayout) -> [MatchSet; 2] {
    let d = Vec2::new(
        (layout.offsets[1].0 - layout.offsets[0].0) as f64,
        (layout.offsets[1].1 - layout.offsets[0].1) as f64,
    );
    let mut a = Vec::with_capacity(raw.len());
    let mut b = Vec::with_capacity(raw.len());
    for p in &raw.pairs {
        let mid_a = (p.src + p.dst + d) * 0.5;
        a.push(PointPair::new(p.src, mid_a));
        b.push(PointPair::new(p.dst, mid_a - d));
    }
    [
        MatchSet::new(MatchKind::Inter, raw.frame, 0, a).with_camera(0, Some(1)),
        MatchSet::new(MatchKind::Inter, raw.frame, 1, b).with_camera(1, Some(0)),
    ]
}

/// Inter fields for both cameras of a pair, the raw inlier matches, and the
/// failed estimates.
#[allow(clippy::type_complexity)]
pub fn estimate_inter_fields(
    sources: &[Box<dyn FrameSource>],
    grid: &MeshGrid,
    cfg: &PipelineConfig,
    layout: &CanvasLayout,
    roi: Rect,
    ts: &[VertexProfileSet],
    file_sets: Option<Vec<MatchSet>>,
) -> Result<([Vec<MotionField>; 2], Vec<MatchSet>, Vec<Error>)> {
    let n = sources[0].len();
    let file_sets = file_sets.map(index_sets);
    let base = Vec2::new(
        (layout.offsets[0].0 - layout.offsets[1].0) as f64,
        (layout.offsets[0].1 - layout.offsets[1].1) as f64,
    );
    type FrameResult = ([MotionField; 2], Option<MatchSet>, Option<Error>);
    let per_frame: Vec<FrameResult> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<FrameResult> {
            let raw = match &file_sets {
                Some(sets) => sets.get(&(i, 0)).cloned().ok_or(Error::TooFewPairs { got: 0 }),
                None => {
                    let shift = base + mean_at(&ts[0], i) - mean_at(&ts[1], i);
                    let prior = Homography::translation(shift.x, shift.y);
                    let a = sources[0].load(i)?.to_gray();
                    let b = sources[1].load(i)?.to_gray();
                    detect_and_match_guided(&a, &b, Some(roi), Some(&prior), &cfg.matcher)
                        .map(|s| s.with_frame(i).with_camera(0, Some(1)))
                }
            };
            let estimate = raw.and_then(|raw| {
                let (inliers, _) = reject_outliers(&raw, &cfg.robust.with_seed(derive_seed(cfg.seed, i, 2, MatchKind::Inter)))?;
                let [sa, sb] = midpoint_sets(&inliers, layout);
                let (_, fa) = fit_field(&sa, grid, i, cfg, derive_seed(cfg.seed, i, 0, MatchKind::Inter))?;
                let (_, fb) = fit_field(&sb, grid, i, cfg, derive_seed(cfg.seed, i, 1, MatchKind::Inter))?;
                Ok(([fa, fb], inliers))
            });
            match estimate {
                Ok((fields, inliers)) => Ok((fields, Some(inliers), None)),
                Err(e) if is_recoverable(&e) => {
                    warn!("inter frame {i}: {e}; using the trajectory prior");
                    let half = |c: usize| MotionField {
                        grid: *grid,
                        kind: FieldKind::Inter,
                        frame: i,
                        vectors: ts[c]
                            .series
                            .iter()
                            .zip(&ts[1 - c].series)
                            .map(|(s, o)| (o[i] - s[i]) * 0.5)
                            .collect(),
                    };
                    Ok(([half(0), half(1)], None, Some(e)))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut fields: [Vec<MotionField>; 2] = Default::default();
    let mut inliers = Vec::new();
    let mut failed = Vec::new();
    for ([fa, fb], ms, err) in per_frame {
        fields[0].push(fa);
        fields[1].push(fb);
        inliers.extend(ms);
        failed.extend(err);
    }
    Ok((fields, inliers, failed))
}

// ── Rendering ────────────────────────────────────────────────────────────

/// Place a frame-sized canvas on a larger canvas at `offset`.
pub fn place(canvas: &Canvas, size: (u32, u32), offset: (i64, i64)) -> Canvas {
    canvas.window(-offset.0, -offset.1, size.0, size.1)
}

fn derive_metric_seed(seed: u64, frame: usize, camera: usize) -> u64 {
    splitmix(derive_seed(seed, frame, camera, MatchKind::Intra) ^ 0x6d65_7472_6963)
}

/// Warp every frame of every camera, emit per-camera and (optionally)
/// panorama frames, and return per-camera, per-frame fits.
fn render(
    sources: &[Box<dyn FrameSource>],
    maps: &[Vec<WarpMap>],
    panorama: Option<(&CanvasLayout, BlendMode)>,
    sink: &dyn FrameSink,
    cfg: &PipelineConfig,
) -> Result<Vec<Vec<FrameFit>>> {
    let n = sources[0].len();
    let size = sources[0].frame_size();
    let per_frame: Vec<Vec<FrameFit>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<FrameFit>> {
            let mut fits = Vec::with_capacity(sources.len());
            let mut placed = Vec::new();
            for (c, src) in sources.iter().enumerate() {
                let frame = src.load(i)?;
                let warped = warp_frame(&frame, &maps[c][i], size, (0, 0))?;
                sink.put(&format!("cam{c}"), i, &warped.image)?;
                fits.push(frame_fit(&frame, &warped, &cfg.metrics, derive_metric_seed(cfg.seed, i, c))?);
                if let Some((layout, _)) = panorama {
                    placed.push(place(&warped, layout.size, layout.offsets[c]));
                }
            }
            if let Some((_, mode)) = panorama {
                sink.put("panorama", i, &blend(&placed, mode)?.image)?;
            }
            Ok(fits)
        })
        .collect::<Result<_>>()?;
    Ok((0..sources.len())
        .map(|c| per_frame.iter().map(|f| f[c]).collect())
        .collect())
}

fn fit_summary(fits: &[Vec<FrameFit>]) -> (f64, f64, PerFrameReport) {
    let flat: Vec<FrameFit> = fits.iter().flatten().copied().collect();
    let (cropping, distortion) = summarize_fits(&flat);
    (
        cropping,
        distortion,
        PerFrameReport {
            cropping: fits.iter().map(|f| f.iter().map(|x| x.cropping).collect()).collect(),
            distortion: fits.iter().map(|f| f.iter().map(|x| x.distortion).collect()).collect(),
            stitching: Vec::new(),
        },
    )
}

fn optional_stability(sets: &[VertexProfileSet], cfg: &MetricsConfig) -> Result<Option<f64>> {
    if sets.first().map_or(0, VertexProfileSet::n_frames) < MIN_STABILITY_FRAMES {
        return Ok(None);
    }
    mean_stability(sets, cfg.stability_bins).map(Some)
}

// ── Runs ─────────────────────────────────────────────────────────────────

/// Joint stabilization and stitching of two camera streams.
pub fn run_pipeline_with(
    sources: &[Box<dyn FrameSource>],
    cfg: &PipelineConfig,
    sink: &dyn FrameSink,
) -> Result<PipelineRun> {
    cfg.validate()?;
    if sources.len() != 2 {
        return Err(Error::Config(format!(
            "the joint pipeline takes exactly two camera streams, got {}",
            sources.len()
        )));
    }
    let inputs = check_sources(sources)?;
    let grid = MeshGrid::new(inputs.frame_size, cfg.mesh)?;
    let layout = cfg.layout(inputs.frame_size)?;
    let roi = cfg.overlap_region(inputs.frame_size)?;
    info!("{} frames of {:?}, mesh {:?}", inputs.n_frames, inputs.frame_size, cfg.mesh);

    let intra_file = cfg
        .intra_matches
        .as_deref()
        .map(|p| load_matches(p, MatchKind::Intra))
        .transpose()?;
    let (intra_fields, intra_failed) = estimate_intra_fields(sources, &grid, cfg, intra_file)?;
    let intra_total = 2 * (inputs.n_frames - 1);
    check_failures(&intra_failed, intra_total, "intra")?;
    let ts = intra_fields
        .iter()
        .enumerate()
        .map(|(c, f)| accumulate_trajectories(f, c))
        .collect::<Result<Vec<_>>>()?;
    info!("intra fields done ({} fallbacks)", intra_failed.len());

    let inter_file = cfg
        .inter_matches
        .as_deref()
        .map(|p| load_matches(p, MatchKind::Inter))
        .transpose()?;
    let (inter_fields, inter_inliers, inter_failed) =
        estimate_inter_fields(sources, &grid, cfg, &layout, roi, &ts, inter_file)?;
    check_failures(&inter_failed, inputs.n_frames, "inter")?;
    let vs = inter_fields
        .iter()
        .enumerate()
        .map(|(c, f)| collect_stitch_profiles(f, c))
        .collect::<Result<Vec<_>>>()?;
    info!("inter fields done ({} fallbacks)", inter_failed.len());

    let solution: JointSolution = unified_optimize(&ts, &vs, &cfg.optimizer)?;
    info!("optimizer: {} outer iterations", solution.energy_trace.len().saturating_sub(1));
    let maps = build_warp_maps(&solution, &ts)?;

    let fits = render(sources, &maps, Some((&layout, cfg.blend)), sink, cfg)?;
    let (cropping, distortion, mut per_frame) = fit_summary(&fits);

    let eval = match &cfg.eval_inter_matches {
        Some(p) => load_matches(p, MatchKind::Inter)?,
        None => inter_inliers,
    };
    let stitch = stitching_score(&maps[0], &maps[1], &eval, [layout.offsets[0], layout.offsets[1]])?;
    per_frame.stitching = stitch.per_frame.clone();

    let rendered = solution
        .stitching
        .iter()
        .zip(&solution.smoothed)
        .map(|(v, t)| v.zip_map(t, |a, b| a + b))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport {
        cropping,
        distortion,
        stability: optional_stability(&rendered, &cfg.metrics)?,
        input_stability: optional_stability(&ts, &cfg.metrics)?,
        stitching_score: Some(stitch.score),
        per_frame,
        failures: FailureCounts {
            intra: intra_failed.len(),
            intra_total,
            inter: inter_failed.len(),
            inter_total: inputs.n_frames,
        },
    };
    Ok(PipelineRun {
        report,
        grid,
        layout,
        intra_fields,
        inter_fields: inter_fields.into_iter().collect(),
        trajectories: ts,
        stitching: vs,
        smoothed: solution.smoothed,
        optimized_stitching: solution.stitching,
        energy_trace: solution.energy_trace,
        warp_maps: maps,
    })
}

/// Independent stabilization of every stream; the stitching weight is unused.
pub fn run_stabilize_with(
    sources: &[Box<dyn FrameSource>],
    cfg: &PipelineConfig,
    sink: &dyn FrameSink,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let inputs = check_sources(sources)?;
    let grid = MeshGrid::new(inputs.frame_size, cfg.mesh)?;
    let intra_file = cfg
        .intra_matches
        .as_deref()
        .map(|p| load_matches(p, MatchKind::Intra))
        .transpose()?;
    let (intra_fields, intra_failed) = estimate_intra_fields(sources, &grid, cfg, intra_file)?;
    let intra_total = sources.len() * (inputs.n_frames - 1);
    check_failures(&intra_failed, intra_total, "intra")?;
    let ts = intra_fields
        .iter()
        .enumerate()
        .map(|(c, f)| accumulate_trajectories(f, c))
        .collect::<Result<Vec<_>>>()?;
    let smoothed: Vec<VertexProfileSet> = ts.iter().map(|t| smooth_trajectories(t, &cfg.optimizer)).collect();
    let mut energy = 0.0;
    for (s, t) in smoothed.iter().zip(&ts) {
        energy += stabilization_energy(s, t, &cfg.optimizer)?;
    }
    if !energy.is_finite() {
        return Err(Error::NonFiniteEnergy { iteration: 0 });
    }
    let maps = smoothed
        .iter()
        .zip(&ts)
        .map(|(s, t)| build_stabilization_maps(s, t))
        .collect::<Result<Vec<_>>>()?;
    let fits = render(sources, &maps, None, sink, cfg)?;
    let (cropping, distortion, per_frame) = fit_summary(&fits);
    let report = MetricsReport {
        cropping,
        distortion,
        stability: optional_stability(&smoothed, &cfg.metrics)?,
        input_stability: optional_stability(&ts, &cfg.metrics)?,
        stitching_score: None,
        per_frame,
        failures: FailureCounts {
            intra: intra_failed.len(),
            intra_total,
            inter: 0,
            inter_total: 0,
        },
    };
    Ok(PipelineRun {
        report,
        grid,
        layout: cfg.layout(inputs.frame_size).unwrap_or(CanvasLayout {
            size: inputs.frame_size,
            offsets: vec![(0, 0); sources.len()],
        }),
        intra_fields,
        inter_fields: Vec::new(),
        trajectories: ts,
        stitching: Vec::new(),
        smoothed,
        optimized_stitching: Vec::new(),
        energy_trace: vec![energy],
        warp_maps: maps,
    })
}

/// Run the joint pipeline from a loaded config, writing into `cfg.output`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let sources = open_sources(cfg)?;
    let run = run_pipeline_with(&sources, cfg, &DirSink::new(&cfg.output))?;
    run.write_reports(&cfg.output, cfg.write_fields)?;
    Ok(run)
}

pub fn run_stabilize(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let sources = open_sources(cfg)?;
    let run = run_stabilize_with(&sources, cfg, &DirSink::new(&cfg.output))?;
    run.write_reports(&cfg.output, cfg.write_fields)?;
    Ok(run)
}

/// Compare an input sequence with a processed one. Output pixels that are
/// exactly black count as outside the valid region.
pub fn run_metrics(input_dir: &Path, output_dir: &Path, cfg: &MetricsConfig, seed: u64) -> Result<MetricsReport> {
    cfg.validate()?;
    let input = DirSource::open(input_dir)?;
    let output = DirSource::open(output_dir)?;
    if input.len() != output.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} has {} frames, {} has {}",
            input_dir.display(),
            input.len(),
            output_dir.display(),
            output.len()
        )));
    }
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    if input.frame_size() != output.frame_size() {
        return Err(Error::SizeMismatch(format!(
            "input frames {:?}, output frames {:?}",
            input.frame_size(),
            output.frame_size()
        )));
    }
    let fits: Vec<FrameFit> = (0..input.len())
        .into_par_iter()
        .map(|i| {
            let a = input.load(i)?;
            let image = output.load(i)?;
            let mask = image.data.chunks_exact(3).map(|p| p != [0, 0, 0]).collect();
            frame_fit(&a, &Canvas { image, mask }, cfg, derive_metric_seed(seed, i, 0))
        })
        .collect::<Result<_>>()?;
    let (cropping, distortion, per_frame) = fit_summary(&[fits]);

    let (stability, input_stability) = if input.len() >= MIN_STABILITY_FRAMES {
        let mut est = PipelineConfig::new(Vec::new());
        est.seed = seed;
        let path_of = |src: DirSource| -> Result<VertexProfileSet> {
            let sources: Vec<Box<dyn FrameSource>> = vec![Box::new(src)];
            let grid = MeshGrid::new(sources[0].frame_size(), est.mesh)?;
            let (fields, _) = estimate_intra_fields(&sources, &grid, &est, None)?;
            accumulate_trajectories(&fields[0], 0)
        };
        let t_out = path_of(output)?;
        let t_in = path_of(input)?;
        (
            Some(crate::metrics::stability(&t_out, cfg.stability_bins)?),
            Some(crate::metrics::stability(&t_in, cfg.stability_bins)?),
        )
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        cropping,
        distortion,
        stability,
        input_stability,
        stitching_score: None,
        per_frame,
        failures: FailureCounts::default(),
    })
}

/// Write a synthetic rig dataset plus a `pipeline.json` that runs on it.
pub fn run_synth(spec: &RigSpec, out: &Path) -> Result<RigSequence> {
    let rig = RigSequence::new(spec)?;
    rig.write_to(out)?;
    let mut cfg = PipelineConfig::new(vec![InputSpec::Dir("cam0".into()), InputSpec::Dir("cam1".into())]);
    cfg.canvas = Some(rig.truth.layout.clone());
    cfg.eval_inter_matches = Some("matches_inter.json".into());
    cfg.seed = spec.scene_seed;
    let path = out.join("pipeline.json");
    std::fs::write(&path, cfg.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(rig)
}
