//! Pipeline configuration.
//!
//! Values resolve in three layers: built-in defaults, then a config file
//! (TOML, or JSON), then command-line flags.

use std::path::{Path, PathBuf};

use moda_core::motion_masks::{Connectivity, MaskMode, MaskParams};
use moda_core::object_discovery::DiscoveryParams;
use moda_core::semantic_mining::{MovingCategorySet, DEFAULT_LAMBDA};
use moda_core::tensor::IGNORE_LABEL;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Per-axis motion threshold.
    pub epsilon: f32,
    pub mask_mode: MaskMode,
    pub connectivity: Connectivity,
    /// Components smaller than this many pixels are dropped.
    pub min_area: usize,
    /// Threshold on normalized query-key similarity.
    pub tau: f32,
    pub query_grid: usize,
    pub nms_iou: f32,
    pub lambda: f32,
    pub moving_classes: MovingCategorySet,
    pub num_classes: usize,
    /// Label value marking unlabeled pixels in PNG label maps.
    pub ignore_label: u8,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mask = MaskParams::default();
        let discovery = DiscoveryParams::default();
        Self {
            epsilon: mask.epsilon,
            mask_mode: mask.mode,
            connectivity: mask.connectivity,
            min_area: mask.min_area,
            tau: discovery.tau,
            query_grid: discovery.query_grid,
            nms_iou: discovery.nms_iou,
            lambda: DEFAULT_LAMBDA,
            moving_classes: MovingCategorySet::default(),
            num_classes: 19,
            ignore_label: IGNORE_LABEL,
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// `.json` files are read as JSON; anything else as TOML, retried as
    /// JSON when TOML fails. Relative paths inside resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text).or_else(|toml_err| Self::from_json_str(&text).map_err(|_| toml_err))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.paths.manifest, &mut config.paths.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon {} must be finite and >= 0", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        if self.query_grid == 0 {
            return bad("query_grid must be at least 1".into());
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return bad(format!("nms_iou {} outside (0, 1]", self.nms_iou));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if self.num_classes == 0 || self.num_classes > 255 {
            return bad(format!("num_classes {} outside 1..=255", self.num_classes));
        }
        if (self.ignore_label as usize) < self.num_classes {
            return bad(format!(
                "ignore_label {} collides with a class index",
                self.ignore_label
            ));
        }
        self.moving_classes
            .validate(self.num_classes)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn mask_params(&self) -> MaskParams {
        MaskParams {
            epsilon: self.epsilon,
            mode: self.mask_mode,
            connectivity: self.connectivity,
            min_area: self.min_area,
        }
    }

    pub fn discovery_params(&self) -> DiscoveryParams {
        DiscoveryParams {
            tau: self.tau,
            query_grid: self.query_grid,
            nms_iou: self.nms_iou,
        }
    }
}

/// Flag values that override the config file when set.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigOverrides {
    /// Config file (TOML or JSON)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Per-axis motion threshold
    #[arg(long, global = true)]
    pub epsilon: Option<f32>,
    /// all | any
    #[arg(long, global = true, value_parser = parse_mask_mode)]
    pub mask_mode: Option<MaskMode>,
    /// 4 | 8
    #[arg(long, global = true, value_parser = parse_connectivity)]
    pub connectivity: Option<Connectivity>,
    /// Smallest instance kept, in pixels
    #[arg(long, global = true)]
    pub min_area: Option<usize>,
    /// Objectness threshold on normalized similarity
    #[arg(long, global = true)]
    pub tau: Option<f32>,
    /// Query lattice size per side
    #[arg(long, global = true)]
    pub query_grid: Option<usize>,
    /// Mask IoU at which NMS suppresses
    #[arg(long, global = true)]
    pub nms_iou: Option<f32>,
    /// Mining weight of discovered objects
    #[arg(long, global = true)]
    pub lambda: Option<f32>,
    /// Comma-separated class indices
    #[arg(long, global = true, value_parser = parse_class_list)]
    pub moving_classes: Option<MovingCategorySet>,
    /// Number of segmentation classes
    #[arg(long, visible_alias = "classes", global = true)]
    pub num_classes: Option<usize>,
    /// Label value of unlabeled pixels
    #[arg(long, visible_alias = "ignore", global = true)]
    pub ignore_label: Option<u8>,
}

impl ConfigOverrides {
    /// Loads the config file if given, applies the flags and validates.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { c.$field = v.clone(); })*
            };
        }
        apply!(
            epsilon, mask_mode, connectivity, min_area, tau, query_grid, nms_iou, lambda,
            moving_classes, num_classes, ignore_label
        );
        c.validate()?;
        Ok(c)
    }
}

fn parse_mask_mode(s: &str) -> std::result::Result<MaskMode, String> {
    match s {
        "all" => Ok(MaskMode::All),
        "any" => Ok(MaskMode::Any),
        other => Err(format!("expected `all` or `any`, got `{other}`")),
    }
}

fn parse_connectivity(s: &str) -> std::result::Result<Connectivity, String> {
    s.parse::<u8>()
        .map_err(|e| e.to_string())
        .and_then(Connectivity::try_from)
}

fn parse_class_list(s: &str) -> std::result::Result<MovingCategorySet, String> {
    let classes = s
        .split(',')
        .map(|t| t.trim().parse::<u8>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    MovingCategorySet::new(classes).map_err(|e| e.to_string())
}
