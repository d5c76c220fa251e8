//! Joint trajectory smoothing and stitching-profile optimization.
//!
//! Every vertex and every component is an independent quadratic problem in
//! the frame index, solved by Jacobi sweeps. The smoothness term sums over
//! ordered frame pairs, so each unordered pair contributes twice; the Jacobi
//! updates below are the exact stationarity conditions of that energy.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::profiles::{ProfileRole, VertexProfileSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Temporal window radius in frames.
    pub sigma: f64,
    pub lambda_t: f64,
    pub beta: f64,
    pub jacobi_iters: usize,
    pub outer_iters: usize,
    pub tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            sigma: 15.0,
            lambda_t: 100.0,
            beta: 10.0,
            jacobi_iters: 20,
            outer_iters: 20,
            tol: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 1.0 && self.sigma.is_finite()) {
            return Err(Error::Config("optimizer.sigma must be >= 1".into()));
        }
        if !(self.lambda_t >= 0.0 && self.lambda_t.is_finite()) {
            return Err(Error::Config("optimizer.lambda_t must be >= 0".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("optimizer.beta must be >= 0".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("optimizer.tol must be > 0".into()));
        }
        Ok(())
    }

    fn radius(&self) -> usize {
        self.sigma.floor() as usize
    }
}

pub fn gaussian_weight(i: usize, j: usize, sigma: f64) -> f64 {
    let d = i as f64 - j as f64;
    let s = sigma / 3.0;
    (-(d * d) / (s * s)).exp()
}

/// Weights by frame distance `0..=radius`.
struct Kernel {
    w: Vec<f64>,
}

impl Kernel {
    fn new(cfg: &OptimizerConfig) -> Self {
        Self {
            w: (0..=cfg.radius()).map(|d| gaussian_weight(0, d, cfg.sigma)).collect(),
        }
    }

    /// `(sum_j w_ij (x_j - origin), sum_j w_ij)` over the clipped window, `j != i`.
    #[inline]
    fn neighbours(&self, x: &[f64], i: usize, origin: f64) -> (f64, f64) {
        let r = self.w.len() - 1;
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(x.len() - 1);
        let (mut s, mut ws) = (0.0, 0.0);
        for (j, &xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
            if j != i {
                let w = self.w[i.abs_diff(j)];
                s += w * (xj - origin);
                ws += w;
            }
        }
        (s, ws)
    }
}

/// Jacobi solve of `min sum (x-t)^2 + beta sum (x-anchor)^2 + lambda sum_i sum_j w (x_i-x_j)^2`
/// starting from `init`.
fn jacobi(t: &[f64], anchor: Option<&[f64]>, init: &[f64], beta: f64, cfg: &OptimizerConfig, k: &Kernel) -> Vec<f64> {
    let n = t.len();
    let mut x = init.to_vec();
    let mut next = vec![0.0; n];
    let two_lambda = 2.0 * cfg.lambda_t;
    for _ in 0..cfg.jacobi_iters {
        let mut max_update = 0f64;
        for i in 0..n {
            // Written relative to t[i] so constant series are exact fixed points.
            let (s, ws) = k.neighbours(&x, i, t[i]);
            let (a_num, a_den) = match anchor {
                Some(a) => (beta * (a[i] - t[i]), beta),
                None => (0.0, 0.0),
            };
            let v = t[i] + (a_num + two_lambda * s) / (1.0 + a_den + two_lambda * ws);
            max_update = max_update.max((v - x[i]).abs());
            next[i] = v;
        }
        std::mem::swap(&mut x, &mut next);
        if max_update < cfg.tol {
            break;
        }
    }
    x
}

fn components(series: &[Vec2]) -> (Vec<f64>, Vec<f64>) {
    (series.iter().map(|v| v.x).collect(), series.iter().map(|v| v.y).collect())
}

fn join(x: Vec<f64>, y: Vec<f64>) -> Vec<Vec2> {
    x.into_iter().zip(y).map(|(x, y)| Vec2::new(x, y)).collect()
}

fn series_energy(that: &[Vec2], t: &[Vec2], cfg: &OptimizerConfig, k: &Kernel) -> f64 {
    let n = t.len();
    let r = k.w.len() - 1;
    let mut e = 0.0;
    for i in 0..n {
        let d = that[i] - t[i];
        e += d.x * d.x + d.y * d.y;
        let mut smooth = 0.0;
        for j in i.saturating_sub(r)..=(i + r).min(n - 1) {
            if j != i {
                let d = that[i] - that[j];
                smooth += k.w[i.abs_diff(j)] * (d.x * d.x + d.y * d.y);
            }
        }
        e += cfg.lambda_t * smooth;
    }
    e
}

/// Data term plus weighted smoothness term, summed over vertices and frames.
pub fn stabilization_energy(that: &VertexProfileSet, t: &VertexProfileSet, cfg: &OptimizerConfig) -> Result<f64> {
    that.check_same_shape(t)?;
    let k = Kernel::new(cfg);
    Ok(that
        .series
        .iter()
        .zip(&t.series)
        .map(|(a, b)| series_energy(a, b, cfg, &k))
        .sum())
}

/// `sum ||V^ - V + T^ - T||^2`.
pub fn stitch_energy(
    vhat: &VertexProfileSet,
    v: &VertexProfileSet,
    that: &VertexProfileSet,
    t: &VertexProfileSet,
) -> Result<f64> {
    vhat.check_same_shape(v)?;
    vhat.check_same_shape(that)?;
    vhat.check_same_shape(t)?;
    let mut e = 0.0;
    for g in 0..v.n_vertices() {
        for i in 0..v.n_frames() {
            let r = vhat.series[g][i] - v.series[g][i] + that.series[g][i] - t.series[g][i];
            e += r.x * r.x + r.y * r.y;
        }
    }
    Ok(e)
}

pub fn smooth_trajectories(t: &VertexProfileSet, cfg: &OptimizerConfig) -> VertexProfileSet {
    let k = Kernel::new(cfg);
    let series = t
        .series
        .par_iter()
        .map(|s| {
            if s.is_empty() {
                return Vec::new();
            }
            let (x, y) = components(s);
            join(jacobi(&x, None, &x, 0.0, cfg, &k), jacobi(&y, None, &y, 0.0, cfg, &k))
        })
        .collect();
    VertexProfileSet {
        series,
        ..t.clone()
    }
    .with_role(ProfileRole::Smoothed)
}

/// `V^ = V - (T^ - T)`.
pub fn solve_stitch_profiles(
    v: &VertexProfileSet,
    that: &VertexProfileSet,
    t: &VertexProfileSet,
) -> Result<VertexProfileSet> {
    let disp = that.zip_map(t, |a, b| a - b)?;
    Ok(v
        .zip_map(&disp, |a, b| a - b)?
        .with_role(ProfileRole::OptimizedStitching))
}

/// `T* = T + V - V^`.
pub fn temporary_target(
    vhat: &VertexProfileSet,
    v: &VertexProfileSet,
    t: &VertexProfileSet,
) -> Result<VertexProfileSet> {
    let diff = v.zip_map(vhat, |a, b| a - b)?;
    Ok(t.zip_map(&diff, |a, b| a + b)?.with_role(ProfileRole::Smoothed))
}

/// Minimize the stabilization energy plus `beta * sum ||T^ - T*||^2`,
/// starting the sweeps at `T*`.
pub fn update_smoothed(
    t: &VertexProfileSet,
    tstar: &VertexProfileSet,
    cfg: &OptimizerConfig,
) -> Result<VertexProfileSet> {
    t.check_same_shape(tstar)?;
    let k = Kernel::new(cfg);
    let series = t
        .series
        .par_iter()
        .zip(&tstar.series)
        .map(|(s, a)| {
            if s.is_empty() {
                return Vec::new();
            }
            let (tx, ty) = components(s);
            let (ax, ay) = components(a);
            join(
                jacobi(&tx, Some(&ax), &ax, cfg.beta, cfg, &k),
                jacobi(&ty, Some(&ay), &ay, cfg.beta, cfg, &k),
            )
        })
        .collect();
    Ok(VertexProfileSet {
        series,
        ..t.clone()
    }
    .with_role(ProfileRole::Smoothed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    /// Smoothed trajectories, one set per camera.
    pub smoothed: Vec<VertexProfileSet>,
    /// Optimized stitching profiles, one set per camera.
    pub stitching: Vec<VertexProfileSet>,
    /// Unified energy after initialization and after every outer round.
    pub energy_trace: Vec<f64>,
}

pub fn unified_energy(
    smoothed: &[VertexProfileSet],
    stitching: &[VertexProfileSet],
    ts: &[VertexProfileSet],
    vs: &[VertexProfileSet],
    cfg: &OptimizerConfig,
) -> Result<f64> {
    let mut e = 0.0;
    for c in 0..ts.len() {
        e += stabilization_energy(&smoothed[c], &ts[c], cfg)?;
        e += cfg.beta * stitch_energy(&stitching[c], &vs[c], &smoothed[c], &ts[c])?;
    }
    Ok(e)
}

/// Alternating minimization of the unified energy over all cameras.
pub fn unified_optimize(
    ts: &[VertexProfileSet],
    vs: &[VertexProfileSet],
    cfg: &OptimizerConfig,
) -> Result<JointSolution> {
    cfg.validate()?;
    if ts.len() != vs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} trajectory sets for {} stitching sets",
            ts.len(),
            vs.len()
        )));
    }
    if let Some(first) = ts.first() {
        for (t, v) in ts.iter().zip(vs) {
            t.check_same_shape(v)?;
            if t.n_frames() != first.n_frames() {
                return Err(Error::ShapeMismatch(format!(
                    "cameras disagree on frame count: {} vs {}",
                    t.n_frames(),
                    first.n_frames()
                )));
            }
        }
    }

    let mut smoothed: Vec<_> = ts.iter().map(|t| smooth_trajectories(t, cfg)).collect();
    let mut stitching = vs
        .iter()
        .zip(&smoothed)
        .zip(ts)
        .map(|((v, th), t)| solve_stitch_profiles(v, th, t))
        .collect::<Result<Vec<_>>>()?;

    let energy = |sm: &[VertexProfileSet], st: &[VertexProfileSet], iteration: usize| -> Result<f64> {
        let e = unified_energy(sm, st, ts, vs, cfg)?;
        if !e.is_finite() {
            return Err(Error::NonFiniteEnergy { iteration });
        }
        Ok(e)
    };
    let mut trace = vec![energy(&smoothed, &stitching, 0)?];

    for round in 1..=cfg.outer_iters {
        for c in 0..ts.len() {
            let tstar = temporary_target(&stitching[c], &vs[c], &ts[c])?;
            smoothed[c] = update_smoothed(&ts[c], &tstar, cfg)?;
            stitching[c] = solve_stitch_profiles(&vs[c], &smoothed[c], &ts[c])?;
        }
        let e = energy(&smoothed, &stitching, round)?;
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(e);
        if (prev - e).abs() < cfg.tol {
            break;
        }
    }

    Ok(JointSolution {
        smoothed,
        stitching,
        energy_trace: trace,
    })
}

pub fn write_energy_csv<W: Write>(mut out: W, trace: &[f64]) -> std::io::Result<()> {
    writeln!(out, "outer_iter,energy")?;
    for (i, e) in trace.iter().enumerate() {
        writeln!(out, "{i},{e}")?;
    }
    Ok(())
}
