//! Chunked reconstruction of large inputs.
//!
//! The bounding box is tiled by cubic cores snapped to the coarsest voxel
//! width; each chunk owns the points of its core grown by the overlap. Every
//! chunk is solved on its own, then the fields are blended with soft masks
//! and a single extraction runs over the union of the chunks' finest voxels.
//! All chunks share the global voxel lattice, so chunk transforms are the
//! identity.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extract::{dilate_domain, extract_lattice, MaskMode};
use crate::geometry::{Aabb, OrientedPointCloud, Point, TriangleMesh};
use crate::hierarchy::{HierarchyParams, Ijk, InputBuildOptions, VoxelHierarchy};
use crate::model::KernelModel;
use crate::pipeline::{mask_points, prepare_cloud, PipelineConfig};
use crate::solver::{solve, FitResult};
use crate::spatial::PointIndex;

pub const DEFAULT_CHUNK_SIZE: f64 = 51.2;
/// Default overlap in units of the finest voxel width.
pub const DEFAULT_OVERLAP_VOXELS: f64 = 6.0;
/// Smallest admissible overlap in units of the finest voxel width.
pub const MIN_OVERLAP_VOXELS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub grid: [usize; 3],
    /// Half-open tile owned by this chunk.
    pub core: Aabb,
    /// Core grown by the overlap on every side.
    pub extent: Aabb,
    /// Indices of the input points inside `extent`.
    pub members: Vec<u32>,
}

impl Chunk {
    pub fn name(&self) -> String {
        format!("chunk_{}_{}_{}", self.grid[0], self.grid[1], self.grid[2])
    }

    /// Blend weight of the chunk region: 1 on the core, falling linearly to
    /// 0 at the extent boundary.
    pub fn region_weight(&self, x: &Point) -> f64 {
        let overlap = self.core.min.x - self.extent.min.x;
        let mut w = 1.0f64;
        for a in 0..3 {
            let inner = (x[a] - self.extent.min[a]).min(self.extent.max[a] - x[a]);
            w = w.min((inner / overlap).clamp(0.0, 1.0));
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkLayout {
    pub chunk_size: f64,
    pub overlap: f64,
    pub origin: Point,
    pub dims: [usize; 3],
    /// Row-major over `dims` with x fastest.
    pub chunks: Vec<Chunk>,
}

impl ChunkLayout {
    fn linear(&self, g: [usize; 3]) -> usize {
        g[0] + self.dims[0] * (g[1] + self.dims[1] * g[2])
    }

    /// Chunks whose extent contains `x`.
    pub fn covering(&self, x: &Point) -> Vec<usize> {
        let mut ranges = [(0usize, 0usize); 3];
        for a in 0..3 {
            let lo = ((x[a] - self.origin[a] - self.overlap) / self.chunk_size).ceil() - 1.0;
            let hi = ((x[a] - self.origin[a] + self.overlap) / self.chunk_size).floor();
            let max = self.dims[a] as f64 - 1.0;
            if hi < 0.0 || lo > max {
                return Vec::new();
            }
            ranges[a] = (lo.max(0.0) as usize, hi.min(max) as usize);
        }
        let mut out = Vec::new();
        for k in ranges[2].0..=ranges[2].1 {
            for j in ranges[1].0..=ranges[1].1 {
                for i in ranges[0].0..=ranges[0].1 {
                    let c = self.linear([i, j, k]);
                    if contains_closed(&self.chunks[c].extent, x) {
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}

fn contains_closed(b: &Aabb, x: &Point) -> bool {
    (0..3).all(|a| x[a] >= b.min[a] && x[a] <= b.max[a])
}

/// Tile the cloud's bounding box with chunks snapped to the coarsest width
/// of `params`.
pub fn plan_chunks(
    cloud: &OrientedPointCloud,
    chunk_size: f64,
    overlap: f64,
    params: &HierarchyParams,
) -> Result<ChunkLayout> {
    params.validate()?;
    let w = params.finest_width;
    if !(overlap >= MIN_OVERLAP_VOXELS * w) {
        return Err(Error::InvalidConfig(format!(
            "overlap {overlap} is below {} voxel widths",
            MIN_OVERLAP_VOXELS
        )));
    }
    if !(chunk_size > 2.0 * overlap) || !chunk_size.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "chunk size {chunk_size} must exceed twice the overlap {overlap}"
        )));
    }
    let coarse = params.width(params.levels);
    let size = (chunk_size / coarse).ceil() * coarse;
    let bounds = cloud.bounds();
    let origin = Point::from(bounds.min.coords.map(|v| (v / coarse).floor() * coarse));
    let mut dims = [1usize; 3];
    for a in 0..3 {
        dims[a] = (((bounds.max[a] - origin[a]) / size).floor() as usize + 1).max(1);
    }
    let mut chunks = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let g = [i, j, k];
                let lo = Point::new(
                    origin.x + g[0] as f64 * size,
                    origin.y + g[1] as f64 * size,
                    origin.z + g[2] as f64 * size,
                );
                let hi = lo + crate::geometry::Vector::repeat(size);
                let grow = crate::geometry::Vector::repeat(overlap);
                chunks.push(Chunk {
                    grid: g,
                    core: Aabb { min: lo, max: hi },
                    extent: Aabb {
                        min: lo - grow,
                        max: hi + grow,
                    },
                    members: Vec::new(),
                });
            }
        }
    }
    let mut layout = ChunkLayout {
        chunk_size: size,
        overlap,
        origin,
        dims,
        chunks,
    };
    for (i, p) in cloud.positions().iter().enumerate() {
        for c in layout.covering(p) {
            layout.chunks[c].members.push(i as u32);
        }
    }
    Ok(layout)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkStatus {
    Solved,
    Resumed,
    Empty,
    NotConverged,
    Failed,
    /// Not started because the time budget ran out.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkSummary {
    pub name: String,
    pub points: usize,
    pub unknowns: usize,
    pub iterations: usize,
    pub residual: f64,
    pub status: ChunkStatus,
    pub message: Option<String>,
}

/// A solved chunk ready for blending.
#[derive(Debug, Clone)]
pub struct ChunkResult {
    pub id: usize,
    pub chunk: Chunk,
    pub model: KernelModel,
    pub fit: FitResult,
    /// Points driving the distance ramp; `None` disables it.
    pub mask: Option<Arc<PointIndex>>,
    pub tau: f64,
}

impl ChunkResult {
    pub fn field(&self, x: &Point) -> f64 {
        self.model.field_unchecked(&self.fit.alpha, x)
    }

    /// Soft mask: distance ramp (1 within `tau` of a chunk point, 0 beyond
    /// `2 tau`) times the region weight.
    pub fn mask_value(&self, x: &Point) -> f64 {
        let region = self.chunk.region_weight(x);
        if region == 0.0 {
            return 0.0;
        }
        let ramp = match &self.mask {
            None => 1.0,
            Some(index) => {
                let d = index.distance(x);
                ((2.0 * self.tau - d) / self.tau).clamp(0.0, 1.0)
            }
        };
        region * ramp
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergedValue {
    /// `None` where no chunk has positive mask.
    pub field: Option<f64>,
    pub mask: f64,
}

/// Mask-weighted average of the chunk fields and the maximum mask at `x`.
/// Contributions are combined in chunk-id order, relative to the field of
/// the first contributing chunk.
pub fn merge_eval(chunks: &[&ChunkResult], x: &Point) -> MergedValue {
    let mut parts: Vec<(usize, f64, f64)> = chunks
        .iter()
        .filter_map(|c| {
            let m = c.mask_value(x);
            (m > 0.0).then(|| (c.id, m, c.field(x)))
        })
        .collect();
    if parts.is_empty() {
        return MergedValue {
            field: None,
            mask: 0.0,
        };
    }
    parts.sort_by_key(|p| p.0);
    let base = parts[0].2;
    let total: f64 = parts.iter().map(|p| p.1).sum();
    let delta: f64 = parts.iter().map(|p| p.1 * (p.2 - base)).sum();
    MergedValue {
        field: Some(base + delta / total),
        mask: parts.iter().map(|p| p.1).fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone)]
pub struct LargeConfig {
    pub pipeline: PipelineConfig,
    pub chunk_size: f64,
    /// Overlap in world units; `DEFAULT_OVERLAP_VOXELS * W` when absent.
    pub overlap: Option<f64>,
    /// Chunks solved concurrently.
    pub max_in_flight: usize,
    /// Directory holding per-chunk hierarchy dumps and coefficients.
    pub persist_dir: Option<PathBuf>,
    /// Wall-clock budget; chunks not started in time are skipped and running
    /// solves stop unconverged.
    pub time_budget: Option<Duration>,
}

impl LargeConfig {
    pub fn new(pipeline: PipelineConfig) -> Self {
        Self {
            pipeline,
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: None,
            max_in_flight: 1,
            persist_dir: None,
            time_budget: None,
        }
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
            .unwrap_or(DEFAULT_OVERLAP_VOXELS * self.pipeline.voxel_size)
    }
}

#[derive(Debug, Clone)]
pub struct LargeReconstruction {
    pub mesh: TriangleMesh,
    pub layout: ChunkLayout,
    pub chunks: Vec<ChunkResult>,
    pub summaries: Vec<ChunkSummary>,
    /// Largest total of unknowns held by in-flight chunk systems.
    pub peak_unknowns: usize,
}

impl LargeReconstruction {
    pub fn merged(&self, x: &Point) -> MergedValue {
        let ids = self.layout.covering(x);
        let refs: Vec<&ChunkResult> = self
            .chunks
            .iter()
            .filter(|c| ids.contains(&c.id))
            .collect();
        merge_eval(&refs, x)
    }
}

#[derive(Default)]
struct PeakCounter {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl PeakCounter {
    fn acquire(&self, n: usize) {
        let now = self.current.fetch_add(n, Ordering::SeqCst) + n;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn release(&self, n: usize) {
        self.current.fetch_sub(n, Ordering::SeqCst);
    }
}

fn write_alpha(path: &Path, alpha: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 8 * alpha.len());
    buf.extend_from_slice(&(alpha.len() as u64).to_le_bytes());
    for a in alpha {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_alpha(path: &Path) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 8 {
        return Err(Error::Format(format!("{}: truncated coefficient file", path.display())));
    }
    let n = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
    if buf.len() != 8 + 8 * n {
        return Err(Error::Format(format!("{}: coefficient count mismatch", path.display())));
    }
    Ok(buf[8..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

fn load_persisted(dir: &Path, chunk: &Chunk, feature_dim: usize) -> Option<(KernelModel, FitResult)> {
    let hier_path = dir.join(format!("{}.hier", chunk.name()));
    let alpha_path = dir.join(format!("{}.alpha", chunk.name()));
    if !hier_path.exists() || !alpha_path.exists() {
        return None;
    }
    let hier = VoxelHierarchy::load_dump(&hier_path).ok()?;
    let alpha = read_alpha(&alpha_path).ok()?;
    if alpha.len() != hier.total_len() {
        return None;
    }
    let model = KernelModel::constant(Arc::new(hier), feature_dim);
    let mut fit = FitResult::zeros(&model);
    fit.alpha = alpha;
    fit.stats.converged = true;
    Some((model, fit))
}

struct ChunkOutcome {
    summary: ChunkSummary,
    result: Option<(KernelModel, FitResult, Option<Arc<PointIndex>>)>,
}

fn run_chunk(
    cloud: &OrientedPointCloud,
    chunk: &Chunk,
    cfg: &LargeConfig,
    counter: &PeakCounter,
) -> ChunkOutcome {
    let pc = &cfg.pipeline;
    let mut summary = ChunkSummary {
        name: chunk.name(),
        points: chunk.members.len(),
        unknowns: 0,
        iterations: 0,
        residual: 0.0,
        status: ChunkStatus::Empty,
        message: None,
    };
    if chunk.members.is_empty() {
        return ChunkOutcome { summary, result: None };
    }
    let idx: Vec<usize> = chunk.members.iter().map(|&i| i as usize).collect();
    let local = match cloud.subset(&idx) {
        Ok(c) => c,
        Err(e) => {
            summary.status = ChunkStatus::Failed;
            summary.message = Some(e.to_string());
            return ChunkOutcome { summary, result: None };
        }
    };
    let mask = match pc.extraction.mask {
        MaskMode::Distance(_) => Some(Arc::new(PointIndex::new(mask_points(&local)))),
        _ => None,
    };
    if let Some(dir) = &cfg.persist_dir {
        if let Some((model, fit)) = load_persisted(dir, chunk, pc.feature_dim) {
            summary.unknowns = model.hierarchy().total_len();
            summary.status = ChunkStatus::Resumed;
            return ChunkOutcome {
                summary,
                result: Some((model, fit, mask)),
            };
        }
    }
    let solved = (|| -> Result<(KernelModel, FitResult)> {
        let hier = VoxelHierarchy::build_from_input(
            &local,
            pc.hierarchy_params()?,
            InputBuildOptions { dilate: pc.dilate },
        )?;
        let model = KernelModel::constant(Arc::new(hier), pc.feature_dim);
        let n = model.hierarchy().total_len();
        counter.acquire(n);
        let fit = solve(&model, &local, &pc.solve);
        counter.release(n);
        Ok((model, fit?))
    })();
    match solved {
        Err(e) => {
            summary.status = ChunkStatus::Failed;
            summary.message = Some(e.to_string());
            log::warn!("{} failed: {e}", summary.name);
            ChunkOutcome { summary, result: None }
        }
        Ok((model, fit)) => {
            summary.unknowns = model.hierarchy().total_len();
            summary.iterations = fit.stats.iterations;
            summary.residual = fit.stats.final_residual;
            if !fit.stats.converged {
                summary.status = ChunkStatus::NotConverged;
                if pc.solve.deadline.is_some_and(|d| Instant::now() >= d) {
                    summary.message = Some("time budget exhausted".into());
                }
                log::warn!(
                    "{} did not converge (residual {:.3e}); excluded",
                    summary.name,
                    fit.stats.final_residual
                );
                return ChunkOutcome { summary, result: None };
            }
            summary.status = ChunkStatus::Solved;
            if let Some(dir) = &cfg.persist_dir {
                let stored = fs::create_dir_all(dir)
                    .map_err(|e| Error::io(dir, e))
                    .and_then(|_| {
                        model
                            .hierarchy()
                            .save_dump(&dir.join(format!("{}.hier", chunk.name())))
                    })
                    .and_then(|_| write_alpha(&dir.join(format!("{}.alpha", chunk.name())), &fit.alpha));
                if let Err(e) = stored {
                    log::warn!("could not persist {}: {e}", summary.name);
                }
            }
            ChunkOutcome {
                summary,
                result: Some((model, fit, mask)),
            }
        }
    }
}

/// Reconstruct `cloud` chunk by chunk and extract the blended field.
pub fn reconstruct_large(cloud: &OrientedPointCloud, cfg: &LargeConfig) -> Result<LargeReconstruction> {
    let pc = &cfg.pipeline;
    pc.validate()?;
    if pc.model_path.is_some() {
        return Err(Error::InvalidConfig(
            "chunked reconstruction supports the constant feature field only".into(),
        ));
    }
    if cfg.max_in_flight == 0 {
        return Err(Error::InvalidConfig("at least one chunk must be in flight".into()));
    }
    let cloud = prepare_cloud(cloud, pc)?;
    let params = pc.hierarchy_params()?;
    let layout = plan_chunks(&cloud, cfg.chunk_size, cfg.overlap(), &params)?;
    log::info!(
        "{} chunks ({:?}) of size {}",
        layout.chunks.len(),
        layout.dims,
        layout.chunk_size
    );
    let tau = match pc.extraction.mask {
        MaskMode::Distance(t) => t,
        _ => 0.0,
    };
    let counter = PeakCounter::default();
    let start = Instant::now();
    let mut run_cfg = cfg.clone();
    run_cfg.pipeline.solve.deadline = cfg.time_budget.map(|b| start + b);
    let mut outcomes = Vec::with_capacity(layout.chunks.len());
    for batch in layout.chunks.chunks(cfg.max_in_flight) {
        if cfg.time_budget.is_some_and(|b| start.elapsed() >= b) {
            outcomes.extend(batch.iter().map(|c| ChunkOutcome {
                summary: ChunkSummary {
                    name: c.name(),
                    points: c.members.len(),
                    unknowns: 0,
                    iterations: 0,
                    residual: 0.0,
                    status: ChunkStatus::Skipped,
                    message: Some("time budget exhausted".into()),
                },
                result: None,
            }));
            continue;
        }
        let done: Vec<ChunkOutcome> = batch
            .par_iter()
            .map(|c| run_chunk(&cloud, c, &run_cfg, &counter))
            .collect();
        outcomes.extend(done);
    }
    let mut results = Vec::new();
    let mut summaries = Vec::with_capacity(outcomes.len());
    for (id, o) in outcomes.into_iter().enumerate() {
        if let Some((model, fit, mask)) = o.result {
            results.push(ChunkResult {
                id,
                chunk: layout.chunks[id].clone(),
                model,
                fit,
                mask,
                tau,
            });
        }
        summaries.push(o.summary);
    }
    if results.is_empty() {
        return Err(Error::AllChunksFailed);
    }

    let w = params.finest_width;
    let mut base: FxHashSet<Ijk> = FxHashSet::default();
    for r in &results {
        base.extend(r.model.hierarchy().keys(1).iter().copied());
    }
    let keys = dilate_domain(&base);
    let mut rec = LargeReconstruction {
        mesh: TriangleMesh::default(),
        layout,
        chunks: results,
        summaries,
        peak_unknowns: counter.peak.load(Ordering::SeqCst),
    };
    let field = |x: &Point| rec.merged(x).field;
    let mesh = extract_lattice(&keys, w, &field, pc.extraction.iso_value);
    let mesh = match pc.extraction.mask {
        MaskMode::None => mesh,
        MaskMode::Distance(_) => {
            let keep: Vec<bool> = mesh
                .vertices
                .par_iter()
                .map(|v| rec.merged(v).mask > 0.5)
                .collect();
            mesh.retain_vertices(&keep)
        }
        MaskMode::Field(ref f) => {
            let keep: Vec<bool> = mesh.vertices.par_iter().map(|v| f(v) > 0.5).collect();
            mesh.retain_vertices(&keep)
        }
    };
    rec.mesh = mesh;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vector;

    fn line_cloud(n: usize, length: f64) -> OrientedPointCloud {
        let pts: Vec<Point> = (0..n)
            .map(|i| Point::new(length * i as f64 / (n - 1) as f64, 0.3, 0.2))
            .collect();
        OrientedPointCloud::new(pts)
            .unwrap()
            .with_normals(vec![Vector::z(); n])
            .unwrap()
    }

    fn params() -> HierarchyParams {
        HierarchyParams::new(0.1, 2, 1).unwrap()
    }

    #[test]
    fn single_chunk_when_small() {
        let l = plan_chunks(&line_cloud(10, 1.0), 4.0, 0.4, &params()).unwrap();
        assert_eq!(l.chunks.len(), 1);
        assert_eq!(l.chunks[0].members.len(), 10);
    }

    #[test]
    fn two_chunk_sizes_along_x() {
        let l = plan_chunks(&line_cloud(101, 8.0), 4.0, 0.4, &params()).unwrap();
        assert!((2..=3).contains(&l.dims[0]));
        assert_eq!(l.dims[1] * l.dims[2], 1);
        let mut seen = vec![0; 101];
        for c in &l.chunks {
            for &m in &c.members {
                seen[m as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s >= 1));
    }

    #[test]
    fn invalid_layouts() {
        let c = line_cloud(5, 1.0);
        assert!(matches!(plan_chunks(&c, 4.0, 0.2, &params()), Err(Error::InvalidConfig(_))));
        assert!(matches!(plan_chunks(&c, 0.8, 0.4, &params()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn alpha_file_roundtrip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.alpha");
        let alpha = vec![1.5, -0.25, f64::MIN_POSITIVE];
        write_alpha(&p, &alpha).unwrap();
        assert_eq!(read_alpha(&p).unwrap(), alpha);
        fs::write(&p, [3u8, 0, 0, 0, 0, 0, 0, 0, 1]).unwrap();
        assert!(matches!(read_alpha(&p), Err(Error::Format(_))));
    }

    #[test]
    fn region_weight_ramps_to_extent() {
        let l = plan_chunks(&line_cloud(10, 1.0), 4.0, 0.4, &params()).unwrap();
        let c = &l.chunks[0];
        let mid = Point::from((c.core.min.coords + c.core.max.coords) / 2.0);
        assert_eq!(c.region_weight(&mid), 1.0);
        let edge = Point::new(c.extent.min.x, mid.y, mid.z);
        assert_eq!(c.region_weight(&edge), 0.0);
        let half = Point::new(c.extent.min.x + 0.2, mid.y, mid.z);
        assert!((c.region_weight(&half) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exhausted_budget_skips_every_chunk() {
        let mut cfg = LargeConfig::new(crate::pipeline::PipelineConfig::default());
        cfg.pipeline.voxel_size = 0.1;
        cfg.pipeline.levels = 2;
        cfg.pipeline.adaptive_depth = 1;
        cfg.chunk_size = 4.0;
        cfg.time_budget = Some(Duration::ZERO);
        let res = reconstruct_large(&line_cloud(50, 8.0), &cfg);
        assert!(matches!(res, Err(Error::AllChunksFailed)));
    }
}
