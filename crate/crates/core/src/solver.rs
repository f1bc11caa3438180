//! Assembly and solution of the kernel-field normal equations.
//!
//! Unknowns are one coefficient per voxel in global (level-major) order.
//! `G` has one row per input point with entries `K(x_i, c_j)`. `Q` has three
//! consecutive rows (x, y, z) per constraint voxel of levels `1..=L'`, holding
//! `grad_x K(x, c_j)` evaluated at the constraint center. The system is
//! `(Q^T Q + G^T W G + lambda I) alpha = Q^T n`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cg::{pcg, CgConfig, CgStats, LinearOperator};
use crate::error::{Error, Result};
use crate::geometry::{OrientedPointCloud, Point, Vector};
use crate::model::KernelModel;
use crate::sparse::CsrMatrix;

/// Relative ridge used by the color solve, scaled by `trace(G^T G) / n`.
pub const COLOR_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Absolute ridge added to the geometry system diagonal.
    pub ridge: f64,
    /// Directory receiving `G.txt`, `Q.txt` and `b.txt` triplet dumps.
    pub dump_dir: Option<PathBuf>,
    /// Stop the iteration unconverged once this instant has passed.
    pub deadline: Option<Instant>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tolerance: crate::cg::DEFAULT_TOLERANCE,
            max_iterations: crate::cg::DEFAULT_MAX_ITERATIONS,
            ridge: 0.0,
            dump_dir: None,
            deadline: None,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max iterations must be positive".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidConfig("ridge must be non-negative".into()));
        }
        Ok(())
    }

    fn cg(&self) -> CgConfig {
        CgConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            deadline: self.deadline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub residual_history: Vec<f64>,
    pub unknowns: usize,
    pub constraints: usize,
    /// Input points outside every kernel support.
    pub empty_rows: usize,
    /// Unknowns whose diagonal was zero and replaced by 1 in the preconditioner.
    pub zero_diagonal: usize,
    pub nnz: usize,
}

impl SolveStats {
    fn from_cg(cg: CgStats) -> Self {
        Self {
            iterations: cg.iterations,
            final_residual: cg.relative_residual,
            converged: cg.converged,
            residual_history: cg.history,
            ..Default::default()
        }
    }
}

/// Coefficients of the implicit field, one per hierarchy voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub alpha: Vec<f64>,
    pub stats: SolveStats,
}

impl FitResult {
    pub fn zeros(model: &KernelModel) -> Self {
        Self {
            alpha: vec![0.0; model.hierarchy().total_len()],
            stats: SolveStats {
                converged: true,
                ..Default::default()
            },
        }
    }

    pub fn eval(&self, model: &KernelModel, x: &Point) -> Result<f64> {
        model.eval_field(&self.alpha, x)
    }

    pub fn eval_grad(&self, model: &KernelModel, x: &Point) -> Result<Vector> {
        model.eval_field_grad(&self.alpha, x)
    }
}

/// `G` with one row per point; also returns the number of empty rows.
pub fn assemble_g(model: &KernelModel, points: &[Point]) -> (CsrMatrix, usize) {
    let rows: Vec<Vec<(u32, f64)>> = points
        .par_iter()
        .with_min_len(64)
        .map(|x| {
            let mut row = Vec::with_capacity(27 * model.levels());
            model.for_each_kernel(x, |j, k| row.push((j as u32, k)));
            row
        })
        .collect();
    let empty = rows.iter().filter(|r| r.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} points lie outside every kernel support");
    }
    (CsrMatrix::from_rows(model.hierarchy().total_len(), rows), empty)
}

/// `Q` with rows `3m, 3m+1, 3m+2` holding the x, y, z derivatives at the
/// center of constraint voxel `m`.
pub fn assemble_q(model: &KernelModel) -> CsrMatrix {
    let h = model.hierarchy();
    let centers: Vec<Point> = (1..=h.adaptive_depth())
        .flat_map(|l| h.keys(l).iter().map(move |k| h.center(l, k)))
        .collect();
    let triples: Vec<[Vec<(u32, f64)>; 3]> = centers
        .par_iter()
        .with_min_len(64)
        .map(|x| {
            let mut rows: [Vec<(u32, f64)>; 3] = Default::default();
            model.for_each_kernel_grad(x, |j, _, g| {
                for a in 0..3 {
                    if g[a] != 0.0 {
                        rows[a].push((j as u32, g[a]));
                    }
                }
            });
            rows
        })
        .collect();
    CsrMatrix::from_rows(h.total_len(), triples.into_iter().flatten().collect())
}

/// Stacked voxel normals of the constraint voxels, `[n_x, n_y, n_z]` per voxel.
pub fn constraint_normals(model: &KernelModel) -> Vec<f64> {
    let h = model.hierarchy();
    (1..=h.adaptive_depth())
        .flat_map(|l| h.normals(l).iter().flat_map(|n| [n.x, n.y, n.z]))
        .collect()
}

/// The operator `Q^T Q + G^T W G + lambda I` applied through sparse products.
pub struct NormalSystem {
    g: CsrMatrix,
    gt: CsrMatrix,
    q: CsrMatrix,
    qt: CsrMatrix,
    weights: Option<Vec<f64>>,
    ridge: f64,
}

impl NormalSystem {
    pub fn new(g: CsrMatrix, q: CsrMatrix, weights: Option<Vec<f64>>, ridge: f64) -> Self {
        assert_eq!(g.cols(), q.cols());
        if let Some(w) = &weights {
            assert_eq!(w.len(), g.rows());
        }
        Self {
            gt: g.transpose(),
            qt: q.transpose(),
            g,
            q,
            weights,
            ridge,
        }
    }

    pub fn g(&self) -> &CsrMatrix {
        &self.g
    }

    pub fn q(&self) -> &CsrMatrix {
        &self.q
    }

    /// Exact diagonal of the operator.
    pub fn diagonal(&self) -> Vec<f64> {
        let dq = self.qt.row_square_sums(None);
        let dg = self.gt.row_square_sums(self.weights.as_deref());
        dq.iter()
            .zip(&dg)
            .map(|(a, b)| a + b + self.ridge)
            .collect()
    }

    /// `Q^T v` for a vector with one entry per `Q` row.
    pub fn q_transpose_times(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.qt.rows()];
        self.qt.matvec(v, &mut out);
        out
    }

    /// `G^T v` for a vector with one entry per `G` row.
    pub fn g_transpose_times(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.gt.rows()];
        self.gt.matvec(v, &mut out);
        out
    }

    /// Dense copy of the operator, for verification on small problems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let q = self.q.to_dense();
        let mut g = self.g.to_dense();
        let gt = g.transpose();
        if let Some(w) = &self.weights {
            for (r, wr) in w.iter().enumerate() {
                g.row_mut(r).scale_mut(*wr);
            }
        }
        q.transpose() * &q + gt * g + DMatrix::identity(self.dim(), self.dim()) * self.ridge
    }
}

impl LinearOperator for NormalSystem {
    fn dim(&self) -> usize {
        self.g.cols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut qx = vec![0.0; self.q.rows()];
        self.q.matvec(x, &mut qx);
        self.qt.matvec(&qx, y);
        let mut gx = vec![0.0; self.g.rows()];
        self.g.matvec(x, &mut gx);
        if let Some(w) = &self.weights {
            gx.par_iter_mut().zip(w.par_iter()).for_each(|(v, wi)| *v *= wi);
        }
        let mut gtgx = vec![0.0; self.gt.rows()];
        self.gt.matvec(&gx, &mut gtgx);
        let ridge = self.ridge;
        y.par_iter_mut()
            .zip(gtgx.par_iter().zip(x.par_iter()))
            .for_each(|(yi, (gi, xi))| {
                *yi += gi;
                if ridge != 0.0 {
                    *yi += ridge * xi;
                }
            });
    }
}

/// Assemble the geometry system for `model` and `cloud`. Weights default
/// to the cloud's own weights.
pub fn build_system(
    model: &KernelModel,
    cloud: &OrientedPointCloud,
    weights: Option<&[f64]>,
    ridge: f64,
) -> Result<(NormalSystem, Vec<f64>, usize)> {
    let weights = weights.or(cloud.weights());
    if let Some(w) = weights {
        if w.len() != cloud.len() {
            return Err(Error::SizeMismatch {
                expected: cloud.len(),
                actual: w.len(),
            });
        }
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("weights must lie in [0, 1]".into()));
        }
    }
    let (g, empty) = assemble_g(model, cloud.positions());
    let q = assemble_q(model);
    let sys = NormalSystem::new(g, q, weights.map(<[f64]>::to_vec), ridge);
    let b = sys.q_transpose_times(&constraint_normals(model));
    Ok((sys, b, empty))
}

/// Fit the field coefficients.
pub fn solve(model: &KernelModel, cloud: &OrientedPointCloud, cfg: &SolveConfig) -> Result<FitResult> {
    solve_weighted(model, cloud, None, cfg)
}

/// Fit with explicit per-point weights overriding any stored on the cloud.
pub fn solve_weighted(
    model: &KernelModel,
    cloud: &OrientedPointCloud,
    weights: Option<&[f64]>,
    cfg: &SolveConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let (sys, b, empty) = build_system(model, cloud, weights, cfg.ridge)?;
    if let Some(dir) = &cfg.dump_dir {
        dump_system(&sys, &b, dir)?;
    }
    let diag = sys.diagonal();
    let zero_diagonal = diag.iter().filter(|d| !(**d > 0.0)).count();
    if zero_diagonal > 0 {
        log::warn!("{zero_diagonal} unknowns have a zero diagonal; preconditioner uses 1");
    }
    let (alpha, cg) = pcg(&sys, &diag, &b, &cfg.cg());
    if !cg.converged {
        log::warn!(
            "solver stopped after {} iterations at relative residual {:e}",
            cg.iterations,
            cg.relative_residual
        );
    }
    log::info!(
        "{{\"solve\":\"geometry\",\"unknowns\":{},\"iterations\":{},\"residual\":{:e}}}",
        sys.dim(),
        cg.iterations,
        cg.relative_residual
    );
    let mut stats = SolveStats::from_cg(cg);
    stats.unknowns = sys.dim();
    stats.constraints = sys.q.rows() / 3;
    stats.empty_rows = empty;
    stats.zero_diagonal = zero_diagonal;
    stats.nnz = sys.g.nnz() + sys.q.nnz();
    Ok(FitResult { alpha, stats })
}

fn dump_system(sys: &NormalSystem, b: &[f64], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, f: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| -> Result<()> {
        let path = dir.join(name);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
    };
    write("G.txt", &|w| sys.g.write_triplets(&mut &mut *w))?;
    write("Q.txt", &|w| sys.q.write_triplets(&mut &mut *w))?;
    write("b.txt", &|w| {
        for v in b {
            writeln!(w, "{v:e}")?;
        }
        Ok(())
    })
}

/// Per-channel coefficients of the color field.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorFit {
    pub gamma: [Vec<f64>; 3],
    pub stats: [SolveStats; 3],
}

struct GramOperator<'a> {
    g: &'a CsrMatrix,
    gt: &'a CsrMatrix,
    ridge: f64,
}

impl LinearOperator for GramOperator<'_> {
    fn dim(&self) -> usize {
        self.g.cols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut gx = vec![0.0; self.g.rows()];
        self.g.matvec(x, &mut gx);
        self.gt.matvec(&gx, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += self.ridge * xi;
        }
    }
}

/// Solve `(G^T G + lambda I) gamma = G^T t` once per color channel with
/// `lambda = 1e-4 * trace(G^T G) / n`.
pub fn solve_color(model: &KernelModel, cloud: &OrientedPointCloud, cfg: &SolveConfig) -> Result<ColorFit> {
    cfg.validate()?;
    let colors = cloud
        .colors()
        .ok_or_else(|| Error::InvalidInput("point cloud carries no colors".into()))?;
    let (g, _) = assemble_g(model, cloud.positions());
    let gt = g.transpose();
    let gram_diag = gt.row_square_sums(None);
    let n = gram_diag.len().max(1);
    let ridge = COLOR_RIDGE * gram_diag.iter().sum::<f64>() / n as f64;
    let diag: Vec<f64> = gram_diag.iter().map(|d| d + ridge).collect();
    let op = GramOperator {
        g: &g,
        gt: &gt,
        ridge,
    };
    let mut gamma: [Vec<f64>; 3] = Default::default();
    let mut stats: [SolveStats; 3] = Default::default();
    for c in 0..3 {
        let t: Vec<f64> = colors.iter().map(|rgb| rgb[c]).collect();
        let mut b = vec![0.0; gt.rows()];
        gt.matvec(&t, &mut b);
        let (x, cg) = pcg(&op, &diag, &b, &cfg.cg());
        gamma[c] = x;
        stats[c] = SolveStats::from_cg(cg);
        stats[c].unknowns = op.dim();
    }
    Ok(ColorFit { gamma, stats })
}

/// The fitting energy `||Q alpha - n||^2 + sum_i w_i (G alpha)_i^2`.
pub fn fitting_energy(sys: &NormalSystem, normals: &[f64], alpha: &[f64]) -> f64 {
    let mut qa = vec![0.0; sys.q.rows()];
    sys.q.matvec(alpha, &mut qa);
    let mut ga = vec![0.0; sys.g.rows()];
    sys.g.matvec(alpha, &mut ga);
    let grad: f64 = qa.iter().zip(normals).map(|(a, n)| (a - n) * (a - n)).sum();
    let value: f64 = ga
        .iter()
        .enumerate()
        .map(|(i, v)| sys.weights.as_ref().map_or(1.0, |w| w[i]) * v * v)
        .sum();
    let ridge: f64 = sys.ridge * alpha.iter().map(|a| a * a).sum::<f64>();
    grad + value + ridge
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{HierarchyParams, InputBuildOptions, VoxelHierarchy};
    use std::sync::Arc;

    #[test]
    fn single_point_single_voxel() {
        let h = Arc::new(
            VoxelHierarchy::from_keys(HierarchyParams::new(1.0, 1, 1).unwrap(), vec![vec![[0, 0, 0]]])
                .unwrap(),
        );
        let m = KernelModel::constant(h.clone(), 1);
        let (g, empty) = assemble_g(&m, &[h.center(1, &[0, 0, 0])]);
        assert_eq!(empty, 0);
        assert_eq!(g.to_dense()[(0, 0)], 3.375);
        let (g, empty) = assemble_g(&m, &[Point::new(10.0, 0.0, 0.0)]);
        assert_eq!(empty, 1);
        assert!(g.is_row_empty(0));
        let q = assemble_q(&m);
        assert_eq!(q.rows(), 3);
        assert_eq!(q.nnz(), 0);
    }

    #[test]
    fn zero_normals_give_zero_solution() {
        let pts: Vec<Point> = (0..20).map(|i| Point::new(i as f64 * 0.05, 0.0, 0.0)).collect();
        let cloud = OrientedPointCloud::new(pts).unwrap();
        let h = Arc::new(
            VoxelHierarchy::build_from_input(&cloud, HierarchyParams::new(0.1, 2, 1).unwrap(), InputBuildOptions::default())
                .unwrap(),
        );
        let m = KernelModel::constant(h, 1);
        let fit = solve(&m, &cloud, &SolveConfig::default()).unwrap();
        assert_eq!(fit.stats.iterations, 0);
        assert!(fit.alpha.iter().all(|a| *a == 0.0));
    }
}
