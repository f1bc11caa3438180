//! End-to-end reconstruction: normals, hierarchy, kernel model, solve,
//! extraction and optional color.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extract::{extract, sample_colors, ExtractionConfig, MaskMode};
use crate::geometry::{OrientedPointCloud, Point, TriangleMesh};
use crate::hierarchy::{HierarchyParams, InputBuildOptions, VoxelHierarchy};
use crate::model::KernelModel;
use crate::model_file::load_model;
use crate::normals::{estimate_normals, DEFAULT_NEIGHBORS};
use crate::solver::{solve, solve_color, ColorFit, FitResult, SolveConfig};

pub const DEFAULT_LEVELS: usize = 4;

/// Hyperparameter presets per data domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    ShapeNet,
    Abc,
    Room,
    Carla,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "shapenet" => Ok(Preset::ShapeNet),
            "abc" => Ok(Preset::Abc),
            "room" => Ok(Preset::Room),
            "carla" => Ok(Preset::Carla),
            _ => Err(Error::InvalidConfig(format!("unknown preset {name}"))),
        }
    }

    /// `(voxel size, adaptive depth, feature dimension)`.
    pub fn values(self) -> (f64, usize, usize) {
        match self {
            Preset::ShapeNet => (0.02, 1, 16),
            Preset::Abc => (0.02, 2, 4),
            Preset::Room => (0.01, 2, 4),
            Preset::Carla => (0.1, 2, 4),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub voxel_size: f64,
    pub levels: usize,
    pub adaptive_depth: usize,
    pub feature_dim: usize,
    pub model_path: Option<PathBuf>,
    pub solve: SolveConfig,
    pub extraction: ExtractionConfig,
    /// Neighborhood size when normals must be estimated. With `force_normals`
    /// the estimate replaces normals stored on the input.
    pub normal_neighbors: usize,
    pub force_normals: bool,
    pub color: bool,
    pub dilate: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::from_preset(Preset::Abc)
    }
}

impl PipelineConfig {
    pub fn from_preset(preset: Preset) -> Self {
        let (w, lp, d) = preset.values();
        Self {
            voxel_size: w,
            levels: DEFAULT_LEVELS,
            adaptive_depth: lp,
            feature_dim: d,
            model_path: None,
            solve: SolveConfig::default(),
            extraction: ExtractionConfig::default(),
            normal_neighbors: DEFAULT_NEIGHBORS,
            force_normals: false,
            color: false,
            dilate: true,
        }
    }

    pub fn hierarchy_params(&self) -> Result<HierarchyParams> {
        HierarchyParams::new(self.voxel_size, self.levels, self.adaptive_depth)
    }

    pub fn validate(&self) -> Result<()> {
        self.hierarchy_params()?;
        self.solve.validate()?;
        self.extraction.validate()?;
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub normals: f64,
    pub hierarchy: f64,
    pub solve: f64,
    pub extract: f64,
    pub color: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub mesh: TriangleMesh,
    pub model: KernelModel,
    pub fit: FitResult,
    pub colors: Option<ColorFit>,
    pub timings: Timings,
}

/// Return the cloud with normals, estimating them when absent or forced.
pub fn prepare_cloud(cloud: &OrientedPointCloud, cfg: &PipelineConfig) -> Result<OrientedPointCloud> {
    if cloud.normals().is_some() && !cfg.force_normals {
        return Ok(cloud.clone());
    }
    let est = estimate_normals(cloud, cfg.normal_neighbors)?;
    if !est.degenerate.is_empty() {
        log::warn!("{} points received arbitrary normals", est.degenerate.len());
    }
    Ok(est.cloud)
}

/// Build the hierarchy over `cloud` and the kernel model on top of it.
pub fn build_model(cloud: &OrientedPointCloud, cfg: &PipelineConfig) -> Result<KernelModel> {
    let hier = Arc::new(VoxelHierarchy::build_from_input(
        cloud,
        cfg.hierarchy_params()?,
        InputBuildOptions { dilate: cfg.dilate },
    )?);
    log::info!("hierarchy voxels per level: {:?}", hier.counts());
    if cfg.levels == cfg.adaptive_depth {
        log::warn!("every level carries gradient constraints; the zero level may drift from the input");
    }
    match &cfg.model_path {
        Some(path) => load_model(path, hier),
        None => Ok(KernelModel::constant(hier, cfg.feature_dim)),
    }
}

/// Positions that may keep extracted geometry alive: points with positive weight.
pub fn mask_points(cloud: &OrientedPointCloud) -> Vec<Point> {
    match cloud.weights() {
        Some(w) => cloud
            .positions()
            .iter()
            .zip(w)
            .filter(|(_, w)| **w > 0.0)
            .map(|(p, _)| *p)
            .collect(),
        None => cloud.positions().to_vec(),
    }
}

pub fn reconstruct(cloud: &OrientedPointCloud, cfg: &PipelineConfig) -> Result<Reconstruction> {
    cfg.validate()?;
    let mut timings = Timings::default();
    let t = Instant::now();
    let cloud = prepare_cloud(cloud, cfg)?;
    timings.normals = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let model = build_model(&cloud, cfg)?;
    timings.hierarchy = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let fit = solve(&model, &cloud, &cfg.solve)?;
    timings.solve = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let points = match cfg.extraction.mask {
        MaskMode::Distance(_) => Some(mask_points(&cloud)),
        _ => None,
    };
    let mut mesh = extract(&model, &fit, &cfg.extraction, points.as_deref())?;
    timings.extract = t.elapsed().as_secs_f64();

    let mut colors = None;
    if cfg.color {
        let t = Instant::now();
        let c = solve_color(&model, &cloud, &cfg.solve)?;
        mesh = sample_colors(&mesh, &model, &c)?;
        colors = Some(c);
        timings.color = t.elapsed().as_secs_f64();
    }
    Ok(Reconstruction {
        mesh,
        model,
        fit,
        colors,
        timings,
    })
}
