//! Planar projective geometry: points, homographies, normalized DLT and a
//! robust MSAC + Huber-IRLS estimator.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2D point or displacement in pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

pub type Point2 = Vec2;

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl SubAssign for Vec2 {
    #[inline]
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A matched pair of feature positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub src: Point2,
    pub dst: Point2,
}

impl PointPair {
    pub fn new(src: Point2, dst: Point2) -> Self {
        Self { src, dst }
    }

    pub fn reversed(self) -> Self {
        Self {
            src: self.dst,
            dst: self.src,
        }
    }
}

const DEPTH_EPS: f64 = 1e-12;

/// 3x3 projective transform, stored with the bottom-right coefficient
/// normalized to 1 whenever it is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography {
    m: Matrix3<f64>,
}

impl TryFrom<[f64; 9]> for Homography {
    type Error = Error;

    fn try_from(h: [f64; 9]) -> Result<Self> {
        Self::from_row_slice(&h)
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        h.to_row_array()
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    /// Scaling by `s` about `center`.
    pub fn scaling_about(s: f64, center: Point2) -> Self {
        Self::affine(s, 0.0, 0.0, s, center.x * (1.0 - s), center.y * (1.0 - s))
    }

    /// `[a b tx; c d ty; 0 0 1]`.
    pub fn affine(a: f64, b: f64, c: f64, d: f64, tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(a, b, tx, c, d, ty, 0.0, 0.0, 1.0),
        }
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("non-finite homography".into()));
        }
        let m = if m[(2, 2)].abs() > 1e-15 {
            m / m[(2, 2)]
        } else {
            let n = m.norm();
            if n == 0.0 {
                return Err(Error::DegenerateInput("zero homography".into()));
            }
            m / n
        };
        let scale = m.norm();
        if m.determinant().abs() <= 1e-14 * scale * scale * scale {
            return Err(Error::DegenerateInput("singular homography".into()));
        }
        Ok(Self { m })
    }

    /// Row-major coefficients.
    pub fn from_row_slice(h: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(h))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_row_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::DegenerateInput("homography not invertible".into()))?;
        Self::from_matrix(inv)
    }

    /// The transform applying `self` first, then `next`.
    pub fn then(&self, next: &Homography) -> Self {
        let m = next.m * self.m;
        Self::from_matrix(m).unwrap_or(Self { m })
    }

    pub fn apply(&self, p: Point2) -> Result<Point2> {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < DEPTH_EPS {
            return Err(Error::AtInfinity { depth: v.z });
        }
        Ok(Point2::new(v.x / v.z, v.y / v.z))
    }

    /// Upper-left 2x2 block `[a b; c d]`.
    pub fn affine_block(&self) -> [[f64; 2]; 2] {
        [
            [self.m[(0, 0)], self.m[(0, 1)]],
            [self.m[(1, 0)], self.m[(1, 1)]],
        ]
    }

    /// `||self - other||_F / ||other||_F` on the normalized matrices.
    pub fn relative_error(&self, other: &Homography) -> f64 {
        (self.m - other.m).norm() / other.m.norm()
    }

    /// Euclidean distance between `apply(src)` and `dst`; infinite when the
    /// source maps to infinity.
    pub fn transfer_error(&self, pair: &PointPair) -> f64 {
        match self.apply(pair.src) {
            Ok(p) => (p - pair.dst).norm(),
            Err(_) => f64::INFINITY,
        }
    }
}

pub fn apply_homography(h: &Homography, p: Point2) -> Result<Point2> {
    h.apply(p)
}

// ── Normalized DLT ───────────────────────────────────────────────────────

/// Hartley conditioning: centroid to origin, RMS distance sqrt(2).
fn conditioning(points: impl Iterator<Item = Point2> + Clone) -> Result<Matrix3<f64>> {
    let mut n = 0.0;
    let mut c = Vec2::ZERO;
    for p in points.clone() {
        c += p;
        n += 1.0;
    }
    c = c * (1.0 / n);
    let ms: f64 = points
        .map(|p| {
            let d = p - c;
            d.x * d.x + d.y * d.y
        })
        .sum::<f64>()
        / n;
    let rms = ms.sqrt();
    if !(rms > 1e-12) || !rms.is_finite() {
        return Err(Error::DegenerateInput("coincident points".into()));
    }
    let s = std::f64::consts::SQRT_2 / rms;
    Ok(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

fn project_raw(m: &Matrix3<f64>, p: Point2) -> Point2 {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Least-squares projective fit `dst ~ H src` over at least four pairs.
pub fn estimate_homography_dlt(pairs: &[PointPair]) -> Result<Homography> {
    dlt(pairs, None)
}

pub(crate) fn dlt(pairs: &[PointPair], weights: Option<&[f64]>) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::DegenerateInput(format!(
            "{} pairs (need at least 4)",
            pairs.len()
        )));
    }
    if pairs.iter().any(|p| !p.src.is_finite() || !p.dst.is_finite()) {
        return Err(Error::DegenerateInput("non-finite coordinates".into()));
    }
    let t_src = conditioning(pairs.iter().map(|p| p.src))?;
    let t_dst = conditioning(pairs.iter().map(|p| p.dst))?;

    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, pair) in pairs.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i].max(0.0).sqrt());
        let s = project_raw(&t_src, pair.src);
        let d = project_raw(&t_dst, pair.dst);
        let r0 = [0.0, 0.0, 0.0, -s.x, -s.y, -1.0, d.y * s.x, d.y * s.y, d.y];
        let r1 = [s.x, s.y, 1.0, 0.0, 0.0, 0.0, -d.x * s.x, -d.x * s.y, -d.x];
        for k in 0..9 {
            a[(2 * i, k)] = w * r0[k];
            a[(2 * i + 1, k)] = w * r1[k];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateInput("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, second, largest) = (order[0], order[1], order[order.len() - 1]);
    if sv[largest] <= 0.0 || sv[second] <= 1e-10 * sv[largest] {
        return Err(Error::DegenerateInput("rank-deficient design matrix".into()));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::DegenerateInput("conditioning not invertible".into()))?;
    Homography::from_matrix(t_dst_inv * hn * t_src)
}

// ── Robust estimation ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    pub max_iterations: usize,
    /// Inlier threshold on transfer error, px.
    pub inlier_threshold: f64,
    pub confidence: f64,
    pub irls_rounds: usize,
    pub seed: u64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            inlier_threshold: 2.0,
            confidence: 0.999,
            irls_rounds: 5,
            seed: 0,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::Config("robust.inlier_threshold must be > 0".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("robust.confidence must be in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("robust.max_iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn collinear(a: Point2, b: Point2, c: Point2) -> bool {
    (b - a).cross(c - a).abs() < 1e-6
}

fn sample_is_degenerate(sample: &[PointPair; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| {
        collinear(sample[t[0]].src, sample[t[1]].src, sample[t[2]].src)
            || collinear(sample[t[0]].dst, sample[t[1]].dst, sample[t[2]].dst)
    })
}

fn adaptive_iterations(inliers: usize, total: usize, confidence: f64) -> usize {
    let w = inliers as f64 / total as f64;
    let p_good = w.powi(4);
    if p_good >= 1.0 - 1e-12 {
        return 1;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if k.is_finite() {
        k.ceil() as usize
    } else {
        usize::MAX
    }
}

/// MSAC search over random minimal samples followed by Huber-weighted IRLS
/// on the consensus set. Returns the model and a per-pair inlier mask in the
/// caller's order. The pair list is canonically ordered before sampling, so
/// the result does not depend on the input order.
pub fn robust_homography(
    pairs: &[PointPair],
    cfg: &RobustConfig,
) -> Result<(Homography, Vec<bool>)> {
    cfg.validate()?;
    let n = pairs.len();
    if n < 4 {
        return Err(Error::DegenerateInput(format!("{n} pairs (need at least 4)")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&pairs[i], &pairs[j]);
        a.src
            .x
            .total_cmp(&b.src.x)
            .then(a.src.y.total_cmp(&b.src.y))
            .then(a.dst.x.total_cmp(&b.dst.x))
            .then(a.dst.y.total_cmp(&b.dst.y))
    });
    let sorted: Vec<PointPair> = order.iter().map(|&i| pairs[i]).collect();

    let t = cfg.inlier_threshold;
    let t2 = t * t;
    let msac_cost = |h: &Homography| -> (f64, usize) {
        let mut cost = 0.0;
        let mut count = 0;
        for p in &sorted {
            let e = h.transfer_error(p);
            let e2 = e * e;
            if e2 <= t2 {
                count += 1;
                cost += e2;
            } else {
                cost += t2;
            }
        }
        (cost, count)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Homography, f64, usize)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iterations) {
        iter += 1;
        let mut idx = [0usize; 4];
        let mut k = 0;
        while k < 4 {
            let c = rng.random_range(0..n);
            if !idx[..k].contains(&c) {
                idx[k] = c;
                k += 1;
            }
        }
        if n == 4 {
            idx = [0, 1, 2, 3];
        }
        let sample = idx.map(|i| sorted[i]);
        if sample_is_degenerate(&sample) {
            if n == 4 {
                break;
            }
            continue;
        }
        let Ok(h) = dlt(&sample, None) else { continue };
        let (cost, count) = msac_cost(&h);
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((h, cost, count));
            needed = adaptive_iterations(count, n, cfg.confidence);
        }
        if n == 4 {
            break;
        }
    }

    let Some((mut model, _, count)) = best else {
        return Err(Error::NoConsensus { inliers: 0 });
    };
    if count < 4 {
        return Err(Error::NoConsensus { inliers: count });
    }

    // Huber IRLS on the consensus set.
    let huber_k = 0.5 * t;
    for _ in 0..cfg.irls_rounds {
        let mut set = Vec::new();
        let mut weights = Vec::new();
        for p in &sorted {
            let e = model.transfer_error(p);
            if e <= t {
                set.push(*p);
                weights.push(if e <= huber_k { 1.0 } else { huber_k / e });
            }
        }
        if set.len() < 4 {
            break;
        }
        match dlt(&set, Some(&weights)) {
            Ok(refined) => {
                let delta = refined.relative_error(&model);
                model = refined;
                if delta < 1e-13 {
                    break;
                }
            }
            Err(_) => break,
        }
    }

    let mut mask = vec![false; n];
    let mut inliers = 0;
    for (k, &orig) in order.iter().enumerate() {
        if model.transfer_error(&sorted[k]) <= t {
            mask[orig] = true;
            inliers += 1;
        }
    }
    if inliers < 4 {
        return Err(Error::NoConsensus { inliers });
    }
    Ok((model, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn projective() -> Homography {
        Homography::from_row_slice(&[1.05, 0.02, 12.0, -0.03, 0.97, -7.5, 1.5e-4, -8e-5, 1.0])
            .unwrap()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|_| Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            .collect()
    }

    fn pairs_under(h: &Homography, pts: &[Point2]) -> Vec<PointPair> {
        pts.iter()
            .map(|&p| PointPair::new(p, h.apply(p).unwrap()))
            .collect()
    }

    #[test]
    fn dlt_identity_and_translation() {
        let corners = [
            Point2::new(0.0, 0.0),
            Point2::new(100.0, 0.0),
            Point2::new(100.0, 80.0),
            Point2::new(0.0, 80.0),
        ];
        let id = estimate_homography_dlt(&pairs_under(&Homography::identity(), &corners)).unwrap();
        assert!(id.relative_error(&Homography::identity()) < 1e-12);

        let shift: Vec<_> = corners
            .iter()
            .map(|&p| PointPair::new(p, p + Vec2::new(5.0, -3.0)))
            .collect();
        let t = estimate_homography_dlt(&shift).unwrap();
        assert!(t.relative_error(&Homography::translation(5.0, -3.0)) < 1e-12);
    }

    #[test]
    fn dlt_recovers_random_projective_from_eight_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let h = Homography::from_row_slice(&[
                rng.random_range(0.8..1.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-50.0..50.0),
                rng.random_range(-0.2..0.2),
                rng.random_range(0.8..1.2),
                rng.random_range(-50.0..50.0),
                rng.random_range(-3e-4..3e-4),
                rng.random_range(-3e-4..3e-4),
                1.0,
            ])
            .unwrap();
            let pts = random_points(&mut rng, 8);
            let est = estimate_homography_dlt(&pairs_under(&h, &pts)).unwrap();
            assert!(est.relative_error(&h) < 1e-6, "{}", est.relative_error(&h));
        }
    }

    #[test]
    fn dlt_rejects_degenerate_input() {
        let three = pairs_under(
            &Homography::identity(),
            &[Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)],
        );
        assert!(matches!(estimate_homography_dlt(&three), Err(Error::DegenerateInput(_))));

        let line: Vec<Point2> = (0..6).map(|i| Point2::new(i as f64 * 10.0, 5.0)).collect();
        let pairs = pairs_under(&Homography::translation(1.0, 2.0), &line);
        assert!(matches!(estimate_homography_dlt(&pairs), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn dlt_is_equivariant_under_common_translation() {
        let h = projective();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_points(&mut rng, 12);
        let pairs = pairs_under(&h, &pts);
        let off = Vec2::new(37.0, -21.0);
        let shifted: Vec<_> = pairs
            .iter()
            .map(|p| PointPair::new(p.src + off, p.dst + off))
            .collect();
        let base = estimate_homography_dlt(&pairs).unwrap();
        let moved = estimate_homography_dlt(&shifted).unwrap();
        let t = Homography::translation(off.x, off.y);
        let t_inv = Homography::translation(-off.x, -off.y);
        let conjugated = t_inv.then(&base).then(&t);
        assert!(moved.relative_error(&conjugated) < 1e-8);
    }

    #[test]
    fn apply_examples_and_at_infinity() {
        let p = Point2::new(10.0, 20.0);
        assert_eq!(Homography::identity().apply(p).unwrap(), p);
        assert_eq!(
            Homography::translation(3.0, 4.0).apply(Point2::ZERO).unwrap(),
            Point2::new(3.0, 4.0)
        );
        let h = Homography::from_row_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.01, 0.0, 1.0]).unwrap();
        assert!(matches!(h.apply(Point2::new(-100.0, 3.0)), Err(Error::AtInfinity { .. })));
    }

    #[test]
    fn composition_matches_sequential_application() {
        let a = projective();
        let b = Homography::from_row_slice(&[0.9, -0.1, 4.0, 0.05, 1.1, 2.0, -1e-4, 2e-4, 1.0])
            .unwrap();
        let ab = a.then(&b);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in random_points(&mut rng, 50) {
            let seq = b.apply(a.apply(p).unwrap()).unwrap();
            let comp = ab.apply(p).unwrap();
            assert!((seq - comp).norm() < 1e-9);
        }
    }

    #[test]
    fn robust_exact_matches_plain_dlt() {
        let h = projective();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pairs = pairs_under(&h, &random_points(&mut rng, 20));
        let (est, mask) = robust_homography(&pairs, &RobustConfig::default()).unwrap();
        let plain = estimate_homography_dlt(&pairs).unwrap();
        assert!(est.relative_error(&plain) < 1e-6);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn robust_contaminated_recall_and_precision() {
        let h = projective();
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut recall_sum = 0.0;
        let mut precision_sum = 0.0;
        for trial in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let mut pairs = Vec::new();
            for p in random_points(&mut rng, 20) {
                let q = h.apply(p).unwrap();
                let q = q + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                pairs.push(PointPair::new(p, q));
            }
            for p in random_points(&mut rng, 10) {
                let q = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                pairs.push(PointPair::new(p, q));
            }
            let cfg = RobustConfig::default().with_seed(trial);
            let (_, mask) = robust_homography(&pairs, &cfg).unwrap();
            let true_in = mask[..20].iter().filter(|&&m| m).count();
            let false_in = mask[20..].iter().filter(|&&m| m).count();
            recall_sum += true_in as f64 / 20.0;
            precision_sum += true_in as f64 / (true_in + false_in) as f64;
        }
        assert!(recall_sum / 100.0 >= 0.95, "recall {}", recall_sum / 100.0);
        assert!(precision_sum / 100.0 >= 0.9, "precision {}", precision_sum / 100.0);
    }

    #[test]
    fn robust_needs_four_pairs() {
        let pairs = pairs_under(
            &Homography::identity(),
            &[Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)],
        );
        assert!(matches!(
            robust_homography(&pairs, &RobustConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn robust_rejects_bad_config() {
        let cfg = RobustConfig {
            confidence: 1.0,
            ..RobustConfig::default()
        };
        assert!(matches!(robust_homography(&[], &cfg), Err(Error::Config(_))));
    }
}
