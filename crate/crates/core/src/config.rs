//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Homography, RobustConfig};
use crate::image::Rect;
use crate::matching::MatcherConfig;
use crate::metrics::MetricsConfig;
use crate::motionfield::PropagationConfig;
use crate::optimizer::OptimizerConfig;
use crate::synth::CanvasLayout;
use crate::warp::BlendMode;

/// One camera stream: a directory of numbered frames, or several such
/// directories composed through static homographies into one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Dir(PathBuf),
    Composite(CompositeSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeSpec {
    pub sources: Vec<PathBuf>,
    /// Per source, frame to composite-view coordinates.
    pub statics: Vec<Homography>,
    pub size: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Vec<InputSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intra_matches: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inter_matches: Option<PathBuf>,
    /// Held-out inter matches used only for the stitching score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_inter_matches: Option<PathBuf>,
    /// Inter-camera detection region in camera 0's frame; derived from the
    /// canvas layout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<Rect>,
    #[serde(default = "default_mesh")]
    pub mesh: (usize, usize),
    #[serde(default)]
    pub matcher: MatcherConfig,
    #[serde(default)]
    pub robust: RobustConfig,
    #[serde(default)]
    pub propagation: PropagationConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub blend: BlendMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas: Option<CanvasLayout>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Also write `fields_cam{c}.csv` with every estimated motion field.
    #[serde(default)]
    pub write_fields: bool,
}

fn default_mesh() -> (usize, usize) {
    (16, 16)
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn new(inputs: Vec<InputSpec>) -> Self {
        Self {
            inputs,
            intra_matches: None,
            inter_matches: None,
            eval_inter_matches: None,
            overlap: None,
            mesh: default_mesh(),
            matcher: MatcherConfig::default(),
            robust: RobustConfig::default(),
            propagation: PropagationConfig::default(),
            optimizer: OptimizerConfig::default(),
            metrics: MetricsConfig::default(),
            blend: BlendMode::default(),
            canvas: None,
            output: default_output(),
            seed: 0,
            write_fields: false,
        }
    }

    /// Parse a config document; relative paths stay relative.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file, resolve its paths against the file's directory and
    /// check that every referenced input exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for input in &mut self.inputs {
            match input {
                InputSpec::Dir(p) => join(p),
                InputSpec::Composite(c) => c.sources.iter_mut().for_each(join),
            }
        }
        for p in [
            &mut self.intra_matches,
            &mut self.inter_matches,
            &mut self.eval_inter_matches,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
        join(&mut self.output);
    }

    pub fn check_paths(&self) -> Result<()> {
        let mut paths: Vec<&PathBuf> = Vec::new();
        for input in &self.inputs {
            match input {
                InputSpec::Dir(p) => paths.push(p),
                InputSpec::Composite(c) => paths.extend(&c.sources),
            }
        }
        paths.extend(
            [&self.intra_matches, &self.inter_matches, &self.eval_inter_matches]
                .into_iter()
                .flatten(),
        );
        match paths.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::Config(format!("{} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Config("inputs must list at least one stream".into()));
        }
        for input in &self.inputs {
            if let InputSpec::Composite(c) = input {
                if c.sources.is_empty() || c.sources.len() != c.statics.len() {
                    return Err(Error::Config(format!(
                        "composite input has {} sources and {} statics",
                        c.sources.len(),
                        c.statics.len()
                    )));
                }
                if c.size.0 == 0 || c.size.1 == 0 {
                    return Err(Error::Config("composite size must be positive".into()));
                }
            }
        }
        if self.mesh.0 == 0 || self.mesh.1 == 0 {
            return Err(Error::Config("mesh must have at least one cell per axis".into()));
        }
        self.matcher.validate()?;
        self.robust.validate()?;
        self.propagation.validate()?;
        self.optimizer.validate()?;
        self.metrics.validate()?;
        if let BlendMode::Multiband { levels } = self.blend {
            if levels == 0 {
                return Err(Error::Config("blend.levels must be >= 1".into()));
            }
        }
        if let Some(layout) = &self.canvas {
            if layout.offsets.len() != self.inputs.len() {
                return Err(Error::Config(format!(
                    "canvas has {} offsets for {} inputs",
                    layout.offsets.len(),
                    self.inputs.len()
                )));
            }
            if layout.size.0 == 0 || layout.size.1 == 0 {
                return Err(Error::Config("canvas size must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The configured layout, or a single camera at the origin.
    pub fn layout(&self, frame_size: (u32, u32)) -> Result<CanvasLayout> {
        match &self.canvas {
            Some(l) => Ok(l.clone()),
            None if self.inputs.len() == 1 => Ok(CanvasLayout {
                size: frame_size,
                offsets: vec![(0, 0)],
            }),
            None => Err(Error::Config("canvas layout is required for more than one input".into())),
        }
    }

    /// Region of camera 0 that camera 1 also sees under the layout.
    pub fn overlap_region(&self, frame_size: (u32, u32)) -> Result<Rect> {
        if let Some(r) = self.overlap {
            if !r.fits_in(frame_size.0, frame_size.1) || r.is_empty() {
                return Err(Error::Config(format!("overlap {r:?} outside the frame")));
            }
            return Ok(r);
        }
        let layout = self.layout(frame_size)?;
        let (a, b) = match layout.offsets.as_slice() {
            [a, b, ..] => (*a, *b),
            _ => return Err(Error::Config("overlap needs two cameras".into())),
        };
        let (w, h) = (frame_size.0 as i64, frame_size.1 as i64);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let x0 = dx.max(0);
        let x1 = (dx + w).min(w);
        let y0 = dy.max(0);
        let y1 = (dy + h).min(h);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::Config("cameras do not overlap under the canvas layout".into()));
        }
        Ok(Rect::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let cfg = PipelineConfig::from_json(r#"{"inputs": ["a", "b"], "canvas": {"size": [20, 10], "offsets": [[0, 0], [8, 0]]}}"#).unwrap();
        assert_eq!(cfg.mesh, (16, 16));
        assert_eq!(cfg.blend, BlendMode::Feather);
        assert_eq!(cfg.overlap_region((12, 10)).unwrap(), Rect::new(8, 0, 4, 10));
        let back = PipelineConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_documents() {
        for text in [
            r#"{"inputs": ["a"], "bogus": 1}"#,
            r#"{"inputs": []}"#,
            r#"{"inputs": ["a"], "mesh": [0, 4]}"#,
            r#"{"inputs": ["a"], "optimizer": {"sigma": 0.5}}"#,
            r#"{"inputs": ["a"], "blend": {"mode": "multiband", "levels": 0}}"#,
            r#"{"inputs": ["a", "b"], "canvas": {"size": [20, 10], "offsets": [[0, 0]]}}"#,
            r#"{"inputs": [{"sources": ["a"], "statics": [], "size": [4, 4]}]}"#,
            "not json",
        ] {
            assert!(matches!(PipelineConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn composite_inputs_and_blend_modes() {
        let cfg = PipelineConfig::from_json(
            r#"{"inputs": [{"sources": ["l", "r"], "statics": [[1,0,0,0,1,0,0,0,1], [1,0,50,0,1,0,0,0,1]], "size": [100, 40]}],
                "blend": {"mode": "multiband", "levels": 3}}"#,
        )
        .unwrap();
        assert!(matches!(&cfg.inputs[0], InputSpec::Composite(c) if c.sources.len() == 2));
        assert_eq!(cfg.blend, BlendMode::Multiband { levels: 3 });
        assert_eq!(cfg.layout((100, 40)).unwrap().offsets, vec![(0, 0)]);
    }

    #[test]
    fn load_resolves_and_checks_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("cam0")).unwrap();
        let path = dir.path().join("pipeline.json");
        std::fs::write(&path, r#"{"inputs": ["cam0"], "output": "res"}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.inputs[0], InputSpec::Dir(dir.path().join("cam0")));
        assert_eq!(cfg.output, dir.path().join("res"));

        std::fs::write(&path, r#"{"inputs": ["missing"]}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(m)) if m.contains("missing")));
        let absent = dir.path().join("nope.json");
        assert!(matches!(PipelineConfig::load(&absent), Err(Error::Config(m)) if m.contains("nope.json")));
    }
}
