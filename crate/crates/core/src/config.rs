//! Run configuration: a single TOML file, strictly validated, plus the embedded presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BuildModel, PartGeometry, RasterMask, Rect};
use crate::materials::{MaterialProps, ProcessParams};
use crate::optimizer::{OptimizationConfig, PillarLayout};
use crate::process::CompositeMode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown preset `{0}` (available: overhang2d, mbb2d)")]
    UnknownPreset(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

/// `(name, toml)` of every embedded preset.
pub const PRESETS: &[(&str, &str)] = &[
    ("overhang2d", include_str!("../presets/overhang2d.toml")),
    ("mbb2d", include_str!("../presets/mbb2d.toml")),
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Simulate,
    Optimize,
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PartSpec {
    OverhangBeam {
        column_x0: f64,
        column_width: f64,
        column_height: f64,
        arm_y0: f64,
        arm_thickness: f64,
        arm_length: f64,
    },
    MbbLike {
        legs: [Rect; 2],
        flange: Rect,
        brace_width: f64,
    },
    /// Mask file; relative paths are taken from the config file's directory.
    Raster { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    pub layer_thickness: f64,
    pub part: PartSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub spacing: f64,
    pub width: f64,
    /// Accepted absolute gap between baseline and optimized volume fractions.
    pub volume_tolerance: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let p = PillarLayout::default();
        Self { spacing: p.spacing, width: p.width, volume_tolerance: 0.01 }
    }
}

impl BaselineConfig {
    pub fn layout(&self) -> PillarLayout {
        PillarLayout { spacing: self.spacing, width: self.width }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Simulate: every k-th stage gets a VTK series. Optimize: design snapshot every k
    /// iterations. Zero writes only the final state.
    pub vtk_every: usize,
    /// Cooling step of the layerwise composite field.
    pub composite_step: usize,
    pub composite_mode: CompositeMode,
    /// Adds point data "dFdPhi" to design snapshots.
    pub dump_sensitivity: bool,
    /// Writes the assembled C and K of the last stage in coordinate format.
    pub dump_matrices: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            vtk_every: 10,
            composite_step: 1,
            composite_mode: CompositeMode::Snapshot,
            dump_sensitivity: false,
            dump_matrices: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub materials: MaterialProps,
    #[serde(default)]
    pub process: ProcessParams,
    #[serde(default)]
    pub optimization: OptimizationConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let (PartSpec::Raster { path }, Some(dir)) = (&mut config.geometry.part, base_dir) {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn part_geometry(&self) -> Result<PartGeometry, ConfigError> {
        Ok(match &self.geometry.part {
            PartSpec::OverhangBeam { column_x0, column_width, column_height, arm_y0, arm_thickness, arm_length } => {
                PartGeometry::overhang_beam(
                    *column_x0,
                    *column_width,
                    *column_height,
                    *arm_y0,
                    *arm_thickness,
                    *arm_length,
                )
            }
            PartSpec::MbbLike { legs, flange, brace_width } => {
                PartGeometry::MbbLike { legs: *legs, flange: *flange, brace_width: *brace_width }
            }
            PartSpec::Raster { path } => PartGeometry::Raster(
                RasterMask::read(path).map_err(|e| invalid("geometry.part.path", e.to_string()))?,
            ),
        })
    }

    pub fn build_model(&self) -> Result<BuildModel, ConfigError> {
        let g = &self.geometry;
        let model = BuildModel::build_mesh(g.width, g.height, g.nx, g.ny, g.layer_thickness)
            .map_err(|e| invalid("geometry", e.to_string()))?;
        model
            .apply_part_mask(&self.part_geometry()?)
            .map_err(|e| invalid("geometry.part", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let param = |e: crate::materials::ParamError| invalid(e.field, e.reason);
        self.materials.validate().map_err(param)?;
        self.process.validate().map_err(param)?;
        self.optimization.validate().map_err(|e| invalid("optimization", e.to_string()))?;
        let b = &self.baseline;
        if !(b.width > 0.0 && b.spacing > b.width) {
            return Err(invalid("baseline", format!("need spacing > width > 0, got {} and {}", b.spacing, b.width)));
        }
        if !(b.volume_tolerance > 0.0) {
            return Err(invalid("baseline.volume_tolerance", "must be positive"));
        }
        let steps = self.process.n_cool();
        if self.output.composite_step == 0 || self.output.composite_step > steps {
            return Err(invalid(
                "output.composite_step",
                format!("must lie in 1..={steps}, got {}", self.output.composite_step),
            ));
        }
        self.build_model().map(|_| ())
    }
}

pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    RunConfig::from_toml(text, None)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    RunConfig::from_toml(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for (name, _) in PRESETS {
            let c = preset(name).unwrap();
            assert_eq!(c.process, ProcessParams::default());
            assert_eq!(c.build_model().unwrap().layer_count(), 50);
        }
        let c = preset("overhang2d").unwrap();
        assert_eq!(c.optimization.v_max_fraction, 0.21);
        assert_eq!(c.optimization.update.tau, 1e-4);
        assert_eq!(c.optimization.update.d_coef, 0.8);
        assert_eq!(c.process.w_heaviside, 0.9);
        assert_eq!(c.process.n_obj, 3);
        assert_eq!(preset("mbb2d").unwrap().optimization.v_max_fraction, 0.174);
        assert!(matches!(preset("l-bracket"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn round_trip() {
        let c = preset("mbb2d").unwrap();
        let again = RunConfig::from_toml(&c.to_toml(), None).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::from_toml("", None), Err(ConfigError::Parse(_))));
        let base = PRESETS[0].1;
        let text = format!("{base}\n[process]\nt_c = 10.0\ndt_cool = 3.0\n");
        match RunConfig::from_toml(&text, None) {
            Err(ConfigError::Invalid { field, .. }) => assert!(field.starts_with("process.")),
            other => panic!("expected validation error, got {other:?}"),
        }
        let text = format!("{base}\n[output]\nbogus = 1\n");
        assert!(matches!(RunConfig::from_toml(&text, None), Err(ConfigError::Parse(_))));
        let text = base.replace("arm_length = 18.0", "arm_length = 18.0\nradius = 2.0");
        assert!(matches!(RunConfig::from_toml(&text, None), Err(ConfigError::Parse(_))));
        let text = base.replace("arm_length = 18.0", "arm_length = 40.0");
        assert!(matches!(RunConfig::from_toml(&text, None), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn raster_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut mask = RasterMask::empty(5, 6, 1.0);
        for r in 2..5 {
            mask.set(r, 1, true);
        }
        std::fs::write(dir.path().join("part.txt"), mask.to_string()).unwrap();
        let text = "[geometry]\nwidth = 6.0\nheight = 5.0\nnx = 6\nny = 10\nlayer_thickness = 0.5\n\
                    [geometry.part]\nkind = \"raster\"\npath = \"part.txt\"\n";
        std::fs::write(dir.path().join("run.toml"), text).unwrap();
        let c = parse_config(&dir.path().join("run.toml")).unwrap();
        assert!(c.build_model().unwrap().has_part());
        assert!(matches!(parse_config(&dir.path().join("missing.toml")), Err(ConfigError::Io { .. })));
    }
}
