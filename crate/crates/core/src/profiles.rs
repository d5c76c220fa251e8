//! Per-vertex time series: accumulated trajectories and stitching profiles.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::motionfield::{MeshGrid, MotionField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileRole {
    Trajectory,
    Stitching,
    Smoothed,
    OptimizedStitching,
}

impl ProfileRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileRole::Trajectory => "trajectory",
            ProfileRole::Stitching => "stitching",
            ProfileRole::Smoothed => "smoothed",
            ProfileRole::OptimizedStitching => "optimized_stitching",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexProfileSet {
    pub grid: MeshGrid,
    pub camera: usize,
    pub role: ProfileRole,
    /// `series[g][i]`: value of vertex `g` at frame `i`.
    pub series: Vec<Vec<Vec2>>,
}

impl VertexProfileSet {
    pub fn zeros(grid: MeshGrid, camera: usize, role: ProfileRole, n_frames: usize) -> Self {
        Self {
            grid,
            camera,
            role,
            series: vec![vec![Vec2::ZERO; n_frames]; grid.n_vertices()],
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.series.len()
    }

    pub fn n_frames(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    /// All vertex values at frame `i`, row-major.
    pub fn frame(&self, i: usize) -> Vec<Vec2> {
        self.series.iter().map(|s| s[i]).collect()
    }

    pub fn with_role(mut self, role: ProfileRole) -> Self {
        self.role = role;
        self
    }

    pub fn check_same_shape(&self, other: &VertexProfileSet) -> Result<()> {
        if self.n_vertices() != other.n_vertices() || self.n_frames() != other.n_frames() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{} (vertices x frames)",
                self.n_vertices(),
                self.n_frames(),
                other.n_vertices(),
                other.n_frames()
            )));
        }
        Ok(())
    }

    /// Elementwise `f(self, other)`, keeping this set's metadata.
    pub fn zip_map(&self, other: &VertexProfileSet, f: impl Fn(Vec2, Vec2) -> Vec2) -> Result<Self> {
        self.check_same_shape(other)?;
        let series = self
            .series
            .iter()
            .zip(&other.series)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        Ok(Self {
            series,
            ..self.clone()
        })
    }
}

fn check_fields(fields: &[MotionField]) -> Result<MeshGrid> {
    let first = fields.first().ok_or(Error::EmptyInput)?;
    for (pos, f) in fields.iter().enumerate() {
        if f.grid != first.grid || f.vectors.len() != first.grid.n_vertices() {
            return Err(Error::GridMismatch(format!(
                "field {pos} uses {:?}, expected {:?}",
                f.grid, first.grid
            )));
        }
        if f.frame != first.frame + pos {
            return Err(Error::NonContiguousFrames { position: pos });
        }
    }
    Ok(first.grid)
}

/// Running per-vertex sum of intra fields: `T(i) = T(i-1) + field(i)`.
pub fn accumulate_trajectories(fields: &[MotionField], camera: usize) -> Result<VertexProfileSet> {
    let grid = check_fields(fields)?;
    let mut out = VertexProfileSet::zeros(grid, camera, ProfileRole::Trajectory, fields.len());
    for (g, series) in out.series.iter_mut().enumerate() {
        let mut acc = Vec2::ZERO;
        for (i, f) in fields.iter().enumerate() {
            acc += f.vectors[g];
            series[i] = acc;
        }
    }
    Ok(out)
}

/// Per-frame copy of inter fields: `V(i) = field(i)`.
pub fn collect_stitch_profiles(fields: &[MotionField], camera: usize) -> Result<VertexProfileSet> {
    let grid = check_fields(fields)?;
    let mut out = VertexProfileSet::zeros(grid, camera, ProfileRole::Stitching, fields.len());
    for (g, series) in out.series.iter_mut().enumerate() {
        for (i, f) in fields.iter().enumerate() {
            series[i] = f.vectors[g];
        }
    }
    Ok(out)
}

pub fn write_profiles_csv<W: Write>(mut out: W, sets: &[&VertexProfileSet]) -> std::io::Result<()> {
    writeln!(out, "camera,vertex_row,vertex_col,frame,role,x,y")?;
    for set in sets {
        let cols = set.grid.vertex_cols();
        for (g, series) in set.series.iter().enumerate() {
            for (i, v) in series.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    set.camera,
                    g / cols,
                    g % cols,
                    i,
                    set.role.as_str(),
                    v.x,
                    v.y
                )?;
            }
        }
    }
    Ok(())
}
