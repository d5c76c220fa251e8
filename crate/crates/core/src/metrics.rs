//! Evaluation: cropping ratio, global distortion, stability and the
//! stitching score.

use std::sync::Arc;

use log::{debug, warn};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{robust_homography, Homography, Point2, RobustConfig};
use crate::image::RgbImage;
use crate::matching::{detect_and_match, MatchSet, MatcherConfig};
use crate::profiles::VertexProfileSet;
use crate::warp::{Canvas, WarpMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub matcher: MatcherConfig,
    pub robust: RobustConfig,
    /// Inclusive low-frequency band `(first, last)`; the reference band runs
    /// from `first` to the Nyquist bin.
    pub stability_bins: (usize, usize),
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            matcher: MatcherConfig {
                grid_cells_for_detection: (4, 4),
                corners_per_cell: 2,
                block_radius: 8,
                search_radius: 48,
                min_zncc: 0.7,
            },
            robust: RobustConfig::default(),
            stability_bins: (2, 6),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        self.matcher.validate()?;
        self.robust.validate()?;
        let (lo, hi) = self.stability_bins;
        if lo < 1 || hi < lo {
            return Err(Error::Config("metrics.stability_bins must satisfy 1 <= first <= last".into()));
        }
        Ok(())
    }
}

/// Per-frame cropping and distortion terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameFit {
    pub cropping: f64,
    pub distortion: f64,
    /// False when the fit failed and the mask area was used instead.
    pub fitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerFrame {
    pub cropping: Vec<f64>,
    pub distortion: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizationReport {
    pub cropping: f64,
    pub distortion: f64,
    pub stability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_frame: Option<PerFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStitchError {
    pub frame: usize,
    pub mean: f64,
    pub max: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchReport {
    /// Frames with at least one transported pair.
    pub per_frame: Vec<FrameStitchError>,
    pub score: f64,
}

impl StitchReport {
    pub fn per_frame_error(&self) -> Vec<f64> {
        self.per_frame.iter().map(|f| f.mean).collect()
    }
}

/// Geometric mean of the singular values of the affine block, clamped to 1.
pub fn scale_of(h: &Homography) -> f64 {
    let [[a, b], [c, d]] = h.affine_block();
    (a * d - b * c).abs().sqrt().min(1.0)
}

/// Smaller over larger eigenvalue magnitude of the affine block.
pub fn anisotropy_of(h: &Homography) -> f64 {
    let [[a, b], [c, d]] = h.affine_block();
    let tr = a + d;
    let det = a * d - b * c;
    let disc = tr * tr / 4.0 - det;
    if disc < 0.0 {
        // Complex conjugate pair: equal magnitudes.
        return 1.0;
    }
    let s = disc.sqrt();
    let (l1, l2) = ((tr / 2.0 + s).abs(), (tr / 2.0 - s).abs());
    let (lo, hi) = (l1.min(l2), l1.max(l2));
    if hi == 0.0 {
        return 0.0;
    }
    lo / hi
}

/// Fit a homography from `output` back to `input`.
pub fn fit_output_to_input(input: &RgbImage, output: &RgbImage, cfg: &MetricsConfig, seed: u64) -> Result<Homography> {
    let ms: MatchSet = detect_and_match(&output.to_gray(), &input.to_gray(), None, &cfg.matcher)?;
    if ms.len() < 4 {
        return Err(Error::TooFewPairs { got: ms.len() });
    }
    let (h, _) = robust_homography(&ms.pairs, &cfg.robust.with_seed(seed))?;
    Ok(h)
}

/// Cropping and distortion terms for one frame. A failed fit falls back to
/// the valid-area fraction of `output` with distortion 1.
pub fn frame_fit(input: &RgbImage, output: &Canvas, cfg: &MetricsConfig, seed: u64) -> Result<FrameFit> {
    if input.size() != output.size() {
        return Err(Error::SizeMismatch(format!(
            "input {:?} vs output {:?}",
            input.size(),
            output.size()
        )));
    }
    match fit_output_to_input(input, &output.image, cfg, seed) {
        Ok(h) => Ok(FrameFit {
            cropping: scale_of(&h),
            distortion: anisotropy_of(&h),
            fitted: true,
        }),
        Err(e) if e.class() != crate::error::ErrorClass::Config => {
            debug!("frame fit failed ({e}); using mask area");
            Ok(FrameFit {
                cropping: output.valid_fraction(),
                distortion: 1.0,
                fitted: false,
            })
        }
        Err(e) => Err(e),
    }
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Per-frame fits of a whole sequence.
pub fn sequence_fits(inputs: &[RgbImage], outputs: &[Canvas], cfg: &MetricsConfig, seed: u64) -> Result<Vec<FrameFit>> {
    cfg.validate()?;
    if inputs.len() != outputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} input frames vs {} output frames",
            inputs.len(),
            outputs.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyInput);
    }
    inputs
        .par_iter()
        .zip(outputs)
        .enumerate()
        .map(|(i, (a, b))| frame_fit(a, b, cfg, frame_seed(seed, i)))
        .collect()
}

/// Mean per-frame cropping ratio and the per-frame series.
pub fn cropping_ratio(inputs: &[RgbImage], outputs: &[Canvas], cfg: &MetricsConfig) -> Result<(f64, Vec<f64>)> {
    let fits = sequence_fits(inputs, outputs, cfg, cfg.robust.seed)?;
    let series: Vec<f64> = fits.iter().map(|f| f.cropping).collect();
    Ok((series.iter().sum::<f64>() / series.len() as f64, series))
}

/// Minimum per-frame distortion and the per-frame series.
pub fn distortion(inputs: &[RgbImage], outputs: &[Canvas], cfg: &MetricsConfig) -> Result<(f64, Vec<f64>)> {
    let fits = sequence_fits(inputs, outputs, cfg, cfg.robust.seed)?;
    let series: Vec<f64> = fits.iter().map(|f| f.distortion).collect();
    Ok((series.iter().copied().fold(f64::INFINITY, f64::min), series))
}

/// Reduce per-frame fits: mean cropping, minimum distortion.
pub fn summarize_fits(fits: &[FrameFit]) -> (f64, f64) {
    if fits.is_empty() {
        return (1.0, 1.0);
    }
    let crop = fits.iter().map(|f| f.cropping).sum::<f64>() / fits.len() as f64;
    let dist = fits.iter().map(|f| f.distortion).fold(f64::INFINITY, f64::min);
    (crop, dist)
}

pub const MIN_STABILITY_FRAMES: usize = 8;

fn band_ratio(fft: &Arc<dyn Fft<f64>>, series: &[f64], bins: (usize, usize)) -> f64 {
    let m = series.len();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let energy: Vec<f64> = buf.iter().map(|c| c.norm_sqr()).collect();
    let nyquist = m / 2;
    let total_all: f64 = energy[..=nyquist].iter().sum();
    let total: f64 = energy.get(bins.0..=nyquist).map_or(0.0, |e| e.iter().sum());
    if total <= 1e-18 * total_all + 1e-24 {
        return 1.0;
    }
    let hi = bins.1.min(nyquist);
    let low: f64 = if bins.0 <= hi { energy[bins.0..=hi].iter().sum() } else { 0.0 };
    (low / total).clamp(0.0, 1.0)
}

/// Low-frequency energy fraction of a single scalar trajectory.
pub fn series_stability(trajectory: &[f64], bins: (usize, usize)) -> Result<f64> {
    if trajectory.len() < MIN_STABILITY_FRAMES {
        return Err(Error::TooShort {
            got: trajectory.len(),
            need: MIN_STABILITY_FRAMES,
        });
    }
    let diff: Vec<f64> = trajectory.windows(2).map(|w| w[1] - w[0]).collect();
    let fft = FftPlanner::new().plan_fft_forward(diff.len());
    Ok(band_ratio(&fft, &diff, bins))
}

/// Mean low-frequency energy fraction of the differenced trajectories over
/// all vertices and both components.
pub fn stability(t: &VertexProfileSet, bins: (usize, usize)) -> Result<f64> {
    let n = t.n_frames();
    if n < MIN_STABILITY_FRAMES {
        return Err(Error::TooShort {
            got: n,
            need: MIN_STABILITY_FRAMES,
        });
    }
    let fft = FftPlanner::new().plan_fft_forward(n - 1);
    let ratios: Vec<f64> = t
        .series
        .par_iter()
        .map(|s| {
            let dx: Vec<f64> = s.windows(2).map(|w| w[1].x - w[0].x).collect();
            let dy: Vec<f64> = s.windows(2).map(|w| w[1].y - w[0].y).collect();
            band_ratio(&fft, &dx, bins) + band_ratio(&fft, &dy, bins)
        })
        .collect();
    Ok(ratios.iter().sum::<f64>() / (2 * ratios.len()) as f64)
}

/// Mean stability over several cameras.
pub fn mean_stability(sets: &[VertexProfileSet], bins: (usize, usize)) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = 0.0;
    for s in sets {
        acc += stability(s, bins)?;
    }
    Ok(acc / sets.len() as f64)
}

/// Inter-camera misalignment after warping. Each pair `(p_a, p_b)` of
/// `matches[k]` is carried into its camera's output frame through the inverse
/// of that camera's warp and placed on the canvas at the camera's offset.
/// Pairs falling outside either warped frame are ignored; frames with no
/// remaining pair are skipped.
pub fn stitching_score(
    warps_a: &[WarpMap],
    warps_b: &[WarpMap],
    matches: &[MatchSet],
    offsets: [(i64, i64); 2],
) -> Result<StitchReport> {
    if warps_a.len() != warps_b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} warp maps",
            warps_a.len(),
            warps_b.len()
        )));
    }
    let oa = Point2::new(offsets[0].0 as f64, offsets[0].1 as f64);
    let ob = Point2::new(offsets[1].0 as f64, offsets[1].1 as f64);
    let results: Vec<Result<Option<FrameStitchError>>> = matches
        .par_iter()
        .map(|ms| {
            let (Some(wa), Some(wb)) = (warps_a.get(ms.frame), warps_b.get(ms.frame)) else {
                return Err(Error::FrameMismatch {
                    a: ms.frame,
                    b: warps_a.len(),
                });
            };
            let errs: Vec<f64> = ms
                .pairs
                .iter()
                .filter_map(|p| {
                    let qa = wa.output_of(p.src)? + oa;
                    let qb = wb.output_of(p.dst)? + ob;
                    Some((qa - qb).norm())
                })
                .collect();
            if errs.is_empty() {
                warn!("{}", Error::NoMatches { frame: ms.frame });
                return Ok(None);
            }
            Ok(Some(FrameStitchError {
                frame: ms.frame,
                mean: errs.iter().sum::<f64>() / errs.len() as f64,
                max: errs.iter().copied().fold(0.0, f64::max),
                pairs: errs.len(),
            }))
        })
        .collect();
    let mut per_frame = Vec::new();
    for r in results {
        if let Some(f) = r? {
            per_frame.push(f);
        }
    }
    per_frame.sort_by_key(|f| f.frame);
    Ok(StitchReport {
        score: score_of(&per_frame.iter().map(|f| f.mean).collect::<Vec<_>>()),
        per_frame,
    })
}

/// Highest per-frame error; 0 for no frames.
pub fn score_of(per_frame_error: &[f64]) -> f64 {
    per_frame_error.iter().copied().fold(0.0, f64::max)
}
