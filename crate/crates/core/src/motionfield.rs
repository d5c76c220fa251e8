//! Per-vertex motion fields on a regular mesh.
//!
//! Fields are anchored at the destination side of a match set: the vector at
//! vertex `v` predicts the motion `src - dst` of a feature sitting at `v` in
//! the destination frame. Homographies used here therefore map destination
//! points onto source points, which is what [`crate::matching::reject_outliers`]
//! returns.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{estimate_homography_dlt, Homography, Point2, PointPair, Vec2};
use crate::matching::{MatchKind, MatchSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeshGrid {
    pub frame_size: (u32, u32),
    /// `(rows, cols)` of cells.
    pub cells: (usize, usize),
}

impl MeshGrid {
    pub fn new(frame_size: (u32, u32), cells: (usize, usize)) -> Result<Self> {
        if cells.0 == 0 || cells.1 == 0 {
            return Err(Error::Config("mesh needs at least one cell per axis".into()));
        }
        if frame_size.0 == 0 || frame_size.1 == 0 {
            return Err(Error::Config("mesh frame size must be positive".into()));
        }
        Ok(Self { frame_size, cells })
    }

    pub fn vertex_rows(&self) -> usize {
        self.cells.0 + 1
    }

    pub fn vertex_cols(&self) -> usize {
        self.cells.1 + 1
    }

    pub fn n_vertices(&self) -> usize {
        self.vertex_rows() * self.vertex_cols()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.0 * self.cells.1
    }

    pub fn vertex_index(&self, row: usize, col: usize) -> usize {
        row * self.vertex_cols() + col
    }

    pub fn vertex(&self, row: usize, col: usize) -> Point2 {
        let (w, h) = self.frame_size;
        Point2::new(
            col as f64 * w as f64 / self.cells.1 as f64,
            row as f64 * h as f64 / self.cells.0 as f64,
        )
    }

    /// All vertex positions, row-major.
    pub fn vertices(&self) -> Vec<Point2> {
        (0..self.vertex_rows())
            .flat_map(|r| (0..self.vertex_cols()).map(move |c| (r, c)))
            .map(|(r, c)| self.vertex(r, c))
            .collect()
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            self.frame_size.0 as f64 / self.cells.1 as f64,
            self.frame_size.1 as f64 / self.cells.0 as f64,
        )
    }

    /// Cell `(row, col)` containing `p` under half-open intervals; points on or
    /// beyond the far border are clamped into the last cell.
    pub fn cell_of(&self, p: Point2) -> (usize, usize) {
        let (cw, ch) = self.cell_size();
        let col = (p.x / cw).floor().clamp(0.0, (self.cells.1 - 1) as f64) as usize;
        let row = (p.y / ch).floor().clamp(0.0, (self.cells.0 - 1) as f64) as usize;
        (row, col)
    }

    pub fn cell_index(&self, row: usize, col: usize) -> usize {
        row * self.cells.1 + col
    }
}

impl Default for MeshGrid {
    fn default() -> Self {
        Self {
            frame_size: (960, 540),
            cells: (16, 16),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Intra,
    Inter,
    Unified,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Intra => "intra",
            FieldKind::Inter => "inter",
            FieldKind::Unified => "unified",
        }
    }
}

impl From<MatchKind> for FieldKind {
    fn from(k: MatchKind) -> Self {
        match k {
            MatchKind::Intra => FieldKind::Intra,
            MatchKind::Inter => FieldKind::Inter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub grid: MeshGrid,
    pub kind: FieldKind,
    pub frame: usize,
    /// One displacement per vertex, row-major.
    pub vectors: Vec<Vec2>,
}

impl MotionField {
    pub fn zeros(grid: MeshGrid, kind: FieldKind, frame: usize) -> Self {
        Self {
            grid,
            kind,
            frame,
            vectors: vec![Vec2::ZERO; grid.n_vertices()],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Vec2 {
        self.vectors[self.grid.vertex_index(row, col)]
    }

    fn check_grid(&self, other: &MotionField) -> Result<()> {
        if self.grid != other.grid || self.vectors.len() != other.vectors.len() {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    /// Ellipse semi-axes `(rx, ry)` in cell units.
    pub ellipse_semi_axes: (f64, f64),
    pub min_pairs_per_cell: usize,
    pub spatial_median_window: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            ellipse_semi_axes: (2.0, 2.0),
            min_pairs_per_cell: 8,
            spatial_median_window: 3,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        let (rx, ry) = self.ellipse_semi_axes;
        if !(rx > 0.0 && ry > 0.0 && rx.is_finite() && ry.is_finite()) {
            return Err(Error::Config("ellipse semi-axes must be positive".into()));
        }
        if !matches!(self.spatial_median_window, 1 | 3 | 5) {
            return Err(Error::Config("spatial_median_window must be 1, 3 or 5".into()));
        }
        if self.min_pairs_per_cell < 4 {
            return Err(Error::Config("min_pairs_per_cell must be >= 4".into()));
        }
        Ok(())
    }
}

/// Source of the homography prediction at a point.
#[derive(Debug, Clone, PartialEq)]
pub enum MotionModel {
    Global(Homography),
    /// One homography per cell, row-major.
    PerCell(Vec<Homography>),
}

impl MotionModel {
    pub fn homography_at(&self, grid: &MeshGrid, p: Point2) -> &Homography {
        match self {
            MotionModel::Global(h) => h,
            MotionModel::PerCell(hs) => {
                let (r, c) = grid.cell_of(p);
                &hs[grid.cell_index(r, c)]
            }
        }
    }
}

/// Local homography per cell, fitted to the pairs anchored in that cell and
/// falling back to `global_h` for sparse or degenerate cells.
pub fn per_cell_homographies(
    ms: &MatchSet,
    grid: &MeshGrid,
    global_h: &Homography,
    cfg: &PropagationConfig,
) -> Vec<Homography> {
    let mut buckets: Vec<Vec<PointPair>> = vec![Vec::new(); grid.n_cells()];
    for p in &ms.pairs {
        let (r, c) = grid.cell_of(p.dst);
        buckets[grid.cell_index(r, c)].push(p.reversed());
    }
    buckets
        .iter()
        .map(|pairs| {
            if pairs.len() >= cfg.min_pairs_per_cell.max(4) {
                estimate_homography_dlt(pairs).unwrap_or(*global_h)
            } else {
                *global_h
            }
        })
        .collect()
}

/// `H(v) - v` at every vertex. With per-cell models a vertex takes the mean
/// prediction of the cells around it.
pub fn global_vertex_motion(grid: &MeshGrid, model: &MotionModel, frame: usize) -> Result<MotionField> {
    let kind = match model {
        MotionModel::Global(_) => FieldKind::Inter,
        MotionModel::PerCell(_) => FieldKind::Intra,
    };
    if let MotionModel::PerCell(hs) = model {
        if hs.len() != grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "{} cell homographies for {} cells",
                hs.len(),
                grid.n_cells()
            )));
        }
    }
    let mut vectors = Vec::with_capacity(grid.n_vertices());
    for r in 0..grid.vertex_rows() {
        for c in 0..grid.vertex_cols() {
            let v = grid.vertex(r, c);
            let n = match model {
                MotionModel::Global(h) => h.apply(v)? - v,
                MotionModel::PerCell(hs) => {
                    let mut acc = Vec2::ZERO;
                    let mut count = 0.0;
                    for cr in r.saturating_sub(1)..=r.min(grid.cells.0 - 1) {
                        for cc in c.saturating_sub(1)..=c.min(grid.cells.1 - 1) {
                            acc += hs[grid.cell_index(cr, cc)].apply(v)? - v;
                            count += 1.0;
                        }
                    }
                    acc * (1.0 / count)
                }
            };
            vectors.push(n);
        }
    }
    Ok(MotionField {
        grid: *grid,
        kind,
        frame,
        vectors,
    })
}

/// Per-feature residual `m - (H(p) - p)` at the anchor `p = dst`. Features
/// whose prediction is not finite are skipped.
pub fn residual_motions(ms: &MatchSet, model: &MotionModel, grid: &MeshGrid) -> Vec<(Point2, Vec2)> {
    ms.pairs
        .iter()
        .zip(&ms.motions)
        .filter_map(|(p, &m)| {
            let h = model.homography_at(grid, p.dst);
            let pred = h.apply(p.dst).ok()? - p.dst;
            let r = m - pred;
            r.is_finite().then_some((p.dst, r))
        })
        .collect()
}

/// Indices of the vertices inside the ellipse centred at `p`.
pub fn vertices_in_ellipse(grid: &MeshGrid, p: Point2, semi_axes: (f64, f64)) -> Vec<usize> {
    let (cw, ch) = grid.cell_size();
    let ax = semi_axes.0 * cw;
    let ay = semi_axes.1 * ch;
    let c0 = ((p.x - ax) / cw).ceil().max(0.0) as usize;
    let c1 = (((p.x + ax) / cw).floor()).min(grid.cells.1 as f64);
    let r0 = ((p.y - ay) / ch).ceil().max(0.0) as usize;
    let r1 = (((p.y + ay) / ch).floor()).min(grid.cells.0 as f64);
    if c1 < 0.0 || r1 < 0.0 {
        return Vec::new();
    }
    let (c1, r1) = (c1 as usize, r1 as usize);
    let mut out = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            let v = grid.vertex(r, c);
            let dx = (v.x - p.x) / ax;
            let dy = (v.y - p.y) / ay;
            if dx * dx + dy * dy <= 1.0 {
                out.push(grid.vertex_index(r, c));
            }
        }
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn component_median(vs: &[Vec2]) -> Vec2 {
    let mut xs: Vec<f64> = vs.iter().map(|v| v.x).collect();
    let mut ys: Vec<f64> = vs.iter().map(|v| v.y).collect();
    Vec2::new(median(&mut xs), median(&mut ys))
}

/// Spread residuals to the vertices inside each feature's ellipse, take the
/// per-vertex component-wise median of the candidates, then apply a spatial
/// component-wise median over the vertex lattice.
pub fn propagate_and_refine(
    residuals: &[(Point2, Vec2)],
    grid: &MeshGrid,
    cfg: &PropagationConfig,
) -> Vec<Vec2> {
    let mut candidates: Vec<Vec<Vec2>> = vec![Vec::new(); grid.n_vertices()];
    for &(p, r) in residuals {
        for g in vertices_in_ellipse(grid, p, cfg.ellipse_semi_axes) {
            candidates[g].push(r);
        }
    }
    let first: Vec<Vec2> = candidates
        .iter()
        .map(|c| if c.is_empty() { Vec2::ZERO } else { component_median(c) })
        .collect();

    let half = (cfg.spatial_median_window / 2) as isize;
    if half == 0 {
        return first;
    }
    let (rows, cols) = (grid.vertex_rows() as isize, grid.vertex_cols() as isize);
    let mut out = Vec::with_capacity(first.len());
    let mut window = Vec::with_capacity((2 * half as usize + 1).pow(2));
    for r in 0..rows {
        for c in 0..cols {
            window.clear();
            for rr in (r - half).max(0)..=(r + half).min(rows - 1) {
                for cc in (c - half).max(0)..=(c + half).min(cols - 1) {
                    window.push(first[(rr * cols + cc) as usize]);
                }
            }
            out.push(component_median(&window));
        }
    }
    out
}

/// `refined + global`, vertex by vertex.
pub fn assemble_field(refined: &[Vec2], global: &MotionField) -> Result<MotionField> {
    if refined.len() != global.vectors.len() {
        return Err(Error::GridMismatch(format!(
            "{} refined residuals for {} vertices",
            refined.len(),
            global.vectors.len()
        )));
    }
    let mut out = global.clone();
    for (v, r) in out.vectors.iter_mut().zip(refined) {
        *v += *r;
    }
    Ok(out)
}

pub fn unified_field(intra: &MotionField, inter: &MotionField) -> Result<MotionField> {
    intra.check_grid(inter)?;
    if intra.frame != inter.frame {
        return Err(Error::FrameMismatch {
            a: intra.frame,
            b: inter.frame,
        });
    }
    Ok(MotionField {
        grid: intra.grid,
        kind: FieldKind::Unified,
        frame: intra.frame,
        vectors: intra
            .vectors
            .iter()
            .zip(&inter.vectors)
            .map(|(&a, &b)| a + b)
            .collect(),
    })
}

/// Full field estimate from an inlier match set and its robust homography:
/// per-cell models for intra sets, the single global model for inter sets.
pub fn estimate_field(
    ms: &MatchSet,
    global_h: &Homography,
    grid: &MeshGrid,
    frame: usize,
    cfg: &PropagationConfig,
) -> Result<MotionField> {
    let model = match ms.kind {
        MatchKind::Intra => MotionModel::PerCell(per_cell_homographies(ms, grid, global_h, cfg)),
        MatchKind::Inter => MotionModel::Global(*global_h),
    };
    let global = global_vertex_motion(grid, &model, frame)?;
    let residuals = residual_motions(ms, &model, grid);
    let refined = propagate_and_refine(&residuals, grid, cfg);
    let mut field = assemble_field(&refined, &global)?;
    field.kind = ms.kind.into();
    Ok(field)
}

pub fn write_fields_csv<W: Write>(mut out: W, fields: &[MotionField]) -> std::io::Result<()> {
    writeln!(out, "frame,vertex_row,vertex_col,kind,dx,dy")?;
    for f in fields {
        for r in 0..f.grid.vertex_rows() {
            for c in 0..f.grid.vertex_cols() {
                let v = f.get(r, c);
                writeln!(out, "{},{},{},{},{},{}", f.frame, r, c, f.kind.as_str(), v.x, v.y)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> MeshGrid {
        MeshGrid::new((640, 480), (8, 8)).unwrap()
    }

    /// Pairs anchored at `dst` whose source is `h(dst)`.
    fn pairs_from(h: &Homography, anchors: &[Point2]) -> Vec<PointPair> {
        anchors
            .iter()
            .map(|&d| PointPair::new(h.apply(d).unwrap(), d))
            .collect()
    }

    fn scattered(n: usize, seed: u64, x: std::ops::Range<f64>) -> Vec<Point2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point2::new(rng.random_range(x.clone()), rng.random_range(0.0..480.0)))
            .collect()
    }

    fn random_field(g: MeshGrid, seed: u64) -> MotionField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MotionField {
            grid: g,
            kind: FieldKind::Intra,
            frame: 0,
            vectors: (0..g.n_vertices())
                .map(|_| Vec2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
                .collect(),
        }
    }

    #[test]
    fn grid_layout() {
        let g = MeshGrid::new((960, 540), (16, 16)).unwrap();
        assert_eq!(g.vertex(0, 0), Point2::ZERO);
        assert_eq!(g.vertex(16, 16), Point2::new(960.0, 540.0));
        assert_eq!(g.cell_size(), (60.0, 33.75));
        assert_eq!(g.cell_of(Point2::new(60.0, 33.75)), (1, 1));
        assert_eq!(g.cell_of(Point2::new(59.999, 33.7)), (0, 0));
        assert_eq!(g.cell_of(Point2::new(960.0, 540.0)), (15, 15));
    }

    #[test]
    fn per_cell_single_translation() {
        let g = grid();
        let h = Homography::translation(3.0, -2.0);
        let ms = MatchSet::new(MatchKind::Intra, 0, 0, pairs_from(&h, &scattered(2000, 1, 0.0..640.0)));
        let cells = per_cell_homographies(&ms, &g, &Homography::identity(), &PropagationConfig::default());
        assert!(cells.iter().all(|c| c.relative_error(&h) < 1e-6));
    }

    #[test]
    fn per_cell_empty_falls_back() {
        let g = grid();
        let global = Homography::translation(1.0, 1.0);
        let ms = MatchSet::new(MatchKind::Intra, 0, 0, Vec::new());
        let cells = per_cell_homographies(&ms, &g, &global, &PropagationConfig::default());
        assert!(cells.iter().all(|c| *c == global));
    }

    #[test]
    fn per_cell_two_planes() {
        let g = grid();
        let a = Homography::translation(5.0, 0.0);
        let b = Homography::translation(-4.0, 2.0);
        let mut pairs = pairs_from(&a, &scattered(1500, 2, 0.0..320.0));
        pairs.extend(pairs_from(&b, &scattered(1500, 3, 320.0..640.0)));
        let ms = MatchSet::new(MatchKind::Intra, 0, 0, pairs);
        let cells = per_cell_homographies(&ms, &g, &Homography::identity(), &PropagationConfig::default());
        for r in 0..8 {
            for c in 0..8 {
                let centre = Point2::new((c as f64 + 0.5) * 80.0, (r as f64 + 0.5) * 60.0);
                let want = if c < 4 { &a } else { &b };
                let got = cells[g.cell_index(r, c)].apply(centre).unwrap();
                assert!((got - want.apply(centre).unwrap()).norm() < 1e-3);
            }
        }
    }

    #[test]
    fn global_motion_examples() {
        let g = grid();
        let zero = global_vertex_motion(&g, &MotionModel::Global(Homography::identity()), 0).unwrap();
        assert!(zero.vectors.iter().all(|v| *v == Vec2::ZERO));
        let t = global_vertex_motion(&g, &MotionModel::Global(Homography::translation(2.0, -1.0)), 0)
            .unwrap();
        assert!(t.vectors.iter().all(|v| *v == Vec2::new(2.0, -1.0)));

        let h = Homography::from_row_slice(&[1.01, 0.02, 3.0, -0.01, 0.98, 1.0, 1e-5, -2e-5, 1.0])
            .unwrap();
        let f = global_vertex_motion(&g, &MotionModel::Global(h), 4).unwrap();
        let m = h.matrix();
        for r in 0..g.vertex_rows() {
            for c in 0..g.vertex_cols() {
                let (x, y) = (c as f64 * 80.0, r as f64 * 60.0);
                let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
                let px = (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w;
                let py = (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w;
                let v = f.get(r, c);
                assert!((v.x - (px - x)).abs() < 1e-9 && (v.y - (py - y)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn per_cell_vertices_average_adjacent_cells() {
        let g = MeshGrid::new((200, 100), (1, 2)).unwrap();
        let cells = vec![Homography::translation(2.0, 0.0), Homography::translation(4.0, 0.0)];
        let f = global_vertex_motion(&g, &MotionModel::PerCell(cells), 0).unwrap();
        assert_eq!(f.get(0, 0), Vec2::new(2.0, 0.0));
        assert_eq!(f.get(0, 1), Vec2::new(3.0, 0.0));
        assert_eq!(f.get(1, 2), Vec2::new(4.0, 0.0));
    }

    #[test]
    fn residual_examples() {
        let g = grid();
        let h = Homography::from_row_slice(&[1.0, 0.01, 2.0, 0.0, 1.02, -1.0, 0.0, 1e-5, 1.0]).unwrap();
        let anchors = scattered(50, 4, 0.0..640.0);
        let exact = MatchSet::new(MatchKind::Inter, 0, 0, pairs_from(&h, &anchors));
        let model = MotionModel::Global(h);
        for (_, r) in residual_motions(&exact, &model, &g) {
            assert!(r.norm() < 1e-9);
        }
        let offset: Vec<PointPair> = exact
            .pairs
            .iter()
            .map(|p| PointPair::new(p.src + Vec2::new(1.0, 1.0), p.dst))
            .collect();
        let shifted = MatchSet::new(MatchKind::Inter, 0, 0, offset);
        for (_, r) in residual_motions(&shifted, &model, &g) {
            assert!((r - Vec2::new(1.0, 1.0)).norm() < 1e-9);
        }
        let empty = MatchSet::new(MatchKind::Inter, 0, 0, Vec::new());
        assert!(residual_motions(&empty, &model, &g).is_empty());
    }

    #[test]
    fn propagation_examples() {
        let g = grid();
        let cfg = PropagationConfig {
            spatial_median_window: 1,
            ellipse_semi_axes: (0.5, 0.5),
            ..PropagationConfig::default()
        };
        let v = g.vertex(3, 3);
        let out = propagate_and_refine(&[(v, Vec2::new(4.0, 0.0))], &g, &cfg);
        for (i, r) in out.iter().enumerate() {
            let want = if i == g.vertex_index(3, 3) { Vec2::new(4.0, 0.0) } else { Vec2::ZERO };
            assert_eq!(*r, want);
        }

        let cands = [
            (v, Vec2::new(1.0, 0.0)),
            (v, Vec2::new(3.0, 0.0)),
            (v, Vec2::new(100.0, 0.0)),
        ];
        let out = propagate_and_refine(&cands, &g, &cfg);
        assert_eq!(out[g.vertex_index(3, 3)], Vec2::new(3.0, 0.0));

        let zeros: Vec<_> = scattered(40, 5, 0.0..640.0).into_iter().map(|p| (p, Vec2::ZERO)).collect();
        assert!(propagate_and_refine(&zeros, &g, &PropagationConfig::default())
            .iter()
            .all(|r| *r == Vec2::ZERO));
    }

    #[test]
    fn assemble_and_unify_examples() {
        let g = grid();
        let f = random_field(g, 6);
        let zero = vec![Vec2::ZERO; g.n_vertices()];
        assert_eq!(assemble_field(&zero, &f).unwrap(), f);
        let z = MotionField::zeros(g, FieldKind::Inter, 0);
        assert_eq!(assemble_field(&f.vectors, &z).unwrap().vectors, f.vectors);
        let r = random_field(g, 7);
        let sum = assemble_field(&r.vectors, &f).unwrap();
        for i in 0..g.n_vertices() {
            assert_eq!(sum.vectors[i].x, r.vectors[i].x + f.vectors[i].x);
            assert_eq!(sum.vectors[i].y, r.vectors[i].y + f.vectors[i].y);
        }
        assert!(matches!(assemble_field(&zero[1..], &f), Err(Error::GridMismatch(_))));

        let neg = MotionField {
            vectors: f.vectors.iter().map(|&v| -v).collect(),
            ..f.clone()
        };
        assert!(unified_field(&f, &neg).unwrap().vectors.iter().all(|v| *v == Vec2::ZERO));
        assert_eq!(unified_field(&z, &f).unwrap().vectors, f.vectors);
        let other = MotionField {
            frame: 3,
            ..f.clone()
        };
        assert!(matches!(unified_field(&f, &other), Err(Error::FrameMismatch { a: 0, b: 3 })));
        let coarse = MotionField::zeros(MeshGrid::new((640, 480), (4, 4)).unwrap(), FieldKind::Inter, 0);
        assert!(matches!(unified_field(&f, &coarse), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn explained_matches_reproduce_global_motion() {
        let g = grid();
        let h = Homography::from_row_slice(&[1.0, 0.0, 4.0, 0.0, 1.0, -3.0, 1e-5, 0.0, 1.0]).unwrap();
        let ms = MatchSet::new(MatchKind::Inter, 2, 0, pairs_from(&h, &scattered(300, 8, 0.0..640.0)));
        let field = estimate_field(&ms, &h, &g, 2, &PropagationConfig::default()).unwrap();
        let global = global_vertex_motion(&g, &MotionModel::Global(h), 2).unwrap();
        for (a, b) in field.vectors.iter().zip(&global.vectors) {
            assert!((*a - *b).norm() < 1e-9);
        }
    }

    #[test]
    fn fields_csv_header_and_rows() {
        let g = MeshGrid::new((10, 10), (1, 1)).unwrap();
        let mut buf = Vec::new();
        write_fields_csv(&mut buf, &[MotionField::zeros(g, FieldKind::Unified, 7)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "frame,vertex_row,vertex_col,kind,dx,dy");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "7,1,1,unified,0,0");
    }

    proptest! {
        #[test]
        fn superposition_is_exact(seed_a in any::<u64>(), seed_b in any::<u64>()) {
            let g = MeshGrid::new((960, 540), (16, 16)).unwrap();
            let a = random_field(g, seed_a);
            let b = MotionField { kind: FieldKind::Inter, ..random_field(g, seed_b) };
            let u = unified_field(&a, &b).unwrap();
            prop_assert_eq!(u.kind, FieldKind::Unified);
            for i in 0..g.n_vertices() {
                prop_assert_eq!(u.vectors[i].x - (a.vectors[i].x + b.vectors[i].x), 0.0);
                prop_assert_eq!(u.vectors[i].y - (a.vectors[i].y + b.vectors[i].y), 0.0);
            }
        }

        #[test]
        fn propagation_ignores_residual_order(seed in any::<u64>(), rot in 0usize..50) {
            let g = grid();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut res: Vec<(Point2, Vec2)> = (0..50)
                .map(|_| (
                    Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)),
                    Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
                ))
                .collect();
            let cfg = PropagationConfig::default();
            let before = propagate_and_refine(&res, &g, &cfg);
            res.rotate_left(rot);
            res.reverse();
            prop_assert_eq!(before, propagate_and_refine(&res, &g, &cfg));
        }

        #[test]
        fn shrinking_the_ellipse_never_adds_candidates(
            x in 0.0..640.0f64, y in 0.0..480.0f64,
            rx in 0.1..4.0f64, ry in 0.1..4.0f64, shrink in 0.1..1.0f64,
        ) {
            let g = grid();
            let big = vertices_in_ellipse(&g, Point2::new(x, y), (rx, ry));
            let small = vertices_in_ellipse(&g, Point2::new(x, y), (rx * shrink, ry * shrink));
            prop_assert!(small.iter().all(|v| big.contains(v)));
        }
    }
}
