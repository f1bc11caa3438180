//! Zero-level-set extraction by marching cubes on the dual grid of voxel
//! centers, followed by vertex masking and optional color sampling.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};
use crate::geometry::{Point, TriangleMesh};
use crate::hierarchy::{Ijk, VoxelHierarchy};
use crate::mc_table::{corner_offset, edge_corners, table};
use crate::model::KernelModel;
use crate::solver::{ColorFit, FitResult};
use crate::spatial::PointIndex;

/// Scalar field callback returning `None` where the field is undefined.
pub type FieldFn<'a> = dyn Fn(&Point) -> Option<f64> + Sync + 'a;

#[derive(Clone)]
pub enum MaskMode {
    None,
    /// Keep vertices within this distance (closed ball) of an input point.
    Distance(f64),
    /// Keep vertices where the supplied mask exceeds 0.5.
    Field(Arc<dyn Fn(&Point) -> f64 + Send + Sync>),
}

impl fmt::Debug for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskMode::None => write!(f, "None"),
            MaskMode::Distance(t) => write!(f, "Distance({t})"),
            MaskMode::Field(_) => write!(f, "Field(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtractionDomain {
    /// Dual grid over the level-1 voxel centers.
    #[default]
    FinestLevel,
    /// Also cover coarser leaves by refining them onto the level-1 lattice.
    AllLeaves,
}

#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    pub mask: MaskMode,
    pub iso_value: f64,
    pub domain: ExtractionDomain,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            mask: MaskMode::None,
            iso_value: 0.0,
            domain: ExtractionDomain::FinestLevel,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if let MaskMode::Distance(t) = self.mask {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("mask distance must be positive, got {t}")));
            }
        }
        if !self.iso_value.is_finite() {
            return Err(Error::InvalidConfig("iso value must be finite".into()));
        }
        Ok(())
    }
}

/// Level-1 lattice coordinates of the extraction domain, sorted. The voxel
/// set is grown by its 26-neighborhood so every dual cell touching a voxel
/// center has all eight corners.
pub fn lattice_domain(hier: &VoxelHierarchy, domain: ExtractionDomain) -> Vec<Ijk> {
    let mut base: FxHashSet<Ijk> = hier.keys(1).iter().copied().collect();
    if domain == ExtractionDomain::AllLeaves {
        for l in 2..=hier.levels() {
            let s = 1i64 << (l - 1);
            for (i, k) in hier.keys(l).iter().enumerate() {
                if !hier.is_leaf(l, i) {
                    continue;
                }
                for a in 0..s {
                    for b in 0..s {
                        for c in 0..s {
                            base.insert([k[0] * s + a, k[1] * s + b, k[2] * s + c]);
                        }
                    }
                }
            }
        }
    }
    dilate_domain(&base)
}

/// `base` plus its 26-neighborhood, sorted.
pub fn dilate_domain(base: &FxHashSet<Ijk>) -> Vec<Ijk> {
    let mut set = base.clone();
    for k in base {
        for a in -1..=1 {
            for b in -1..=1 {
                for c in -1..=1 {
                    set.insert([k[0] + a, k[1] + b, k[2] + c]);
                }
            }
        }
    }
    let mut v: Vec<Ijk> = set.into_iter().collect();
    v.sort_unstable();
    v
}

/// Center of lattice point `ijk` at `width`.
pub fn lattice_center(ijk: &Ijk, width: f64) -> Point {
    Point::new(
        (ijk[0] as f64 + 0.5) * width,
        (ijk[1] as f64 + 0.5) * width,
        (ijk[2] as f64 + 0.5) * width,
    )
}

type EdgeKey = (Ijk, u8);

/// Marching cubes over every dual cell whose eight corners are in `keys`
/// with defined values. `keys` must be sorted; `values` is parallel to it.
pub fn dual_marching_cubes(keys: &[Ijk], values: &[Option<f64>], width: f64, iso: f64) -> TriangleMesh {
    assert_eq!(keys.len(), values.len());
    let lookup: FxHashMap<Ijk, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let tbl = table();
    let cells: Vec<Vec<[(EdgeKey, Point); 3]>> = keys
        .par_iter()
        .with_min_len(256)
        .map(|k| {
            let mut vals = [0.0; 8];
            let mut case = 0usize;
            for (c, val) in vals.iter_mut().enumerate() {
                let o = corner_offset(c);
                let ck = [k[0] + o[0] as i64, k[1] + o[1] as i64, k[2] + o[2] as i64];
                match lookup.get(&ck).and_then(|&i| values[i]) {
                    Some(v) => *val = v,
                    None => return Vec::new(),
                }
                if *val < iso {
                    case |= 1 << c;
                }
            }
            let vertex = |e: u8| -> (EdgeKey, Point) {
                let (a, b) = edge_corners(e as usize);
                let oa = corner_offset(a);
                let lower = [k[0] + oa[0] as i64, k[1] + oa[1] as i64, k[2] + oa[2] as i64];
                let axis = (e / 4) as usize;
                let pa = lattice_center(&lower, width);
                let mut pb = pa;
                pb[axis] = lattice_center(&lower, width)[axis] + width;
                let t = ((iso - vals[a]) / (vals[b] - vals[a])).clamp(0.0, 1.0);
                (( lower, axis as u8), pa + (pb - pa) * t)
            };
            tbl.cases[case]
                .iter()
                .map(|t| [vertex(t[0]), vertex(t[1]), vertex(t[2])])
                .collect()
        })
        .collect();

    let mut ids: FxHashMap<EdgeKey, u32> = FxHashMap::default();
    let mut mesh = TriangleMesh::default();
    for cell in cells {
        for tri in cell {
            let idx = tri.map(|(key, p)| {
                *ids.entry(key).or_insert_with(|| {
                    mesh.vertices.push(p);
                    (mesh.vertices.len() - 1) as u32
                })
            });
            mesh.triangles.push(idx);
        }
    }
    mesh
}

/// Sample `field` at the centers of sorted lattice `keys` and run dual
/// marching cubes.
pub fn extract_lattice(keys: &[Ijk], width: f64, field: &FieldFn<'_>, iso: f64) -> TriangleMesh {
    let values: Vec<Option<f64>> = keys
        .par_iter()
        .with_min_len(64)
        .map(|k| field(&lattice_center(k, width)))
        .collect();
    let mesh = dual_marching_cubes(keys, &values, width, iso);
    if mesh.triangles.is_empty() {
        log::warn!("field has no sign change over the extraction domain");
    }
    mesh
}

/// Extract the iso-surface of an arbitrary field over the hierarchy's domain.
pub fn extract_with_field(
    hier: &VoxelHierarchy,
    field: &FieldFn<'_>,
    cfg: &ExtractionConfig,
    mask_points: Option<&[Point]>,
) -> Result<TriangleMesh> {
    cfg.validate()?;
    let keys = lattice_domain(hier, cfg.domain);
    let mesh = extract_lattice(&keys, hier.finest_width(), field, cfg.iso_value);
    apply_mask(mesh, &cfg.mask, mask_points)
}

/// Extract the zero level set (or `iso_value`) of a fitted field.
pub fn extract(
    model: &KernelModel,
    fit: &FitResult,
    cfg: &ExtractionConfig,
    mask_points: Option<&[Point]>,
) -> Result<TriangleMesh> {
    let n = model.hierarchy().total_len();
    if fit.alpha.len() != n {
        return Err(Error::InvalidFit(format!(
            "{} coefficients for {n} voxels",
            fit.alpha.len()
        )));
    }
    if fit.alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidFit("non-finite coefficient".into()));
    }
    let field = |x: &Point| Some(model.field_unchecked(&fit.alpha, x));
    extract_with_field(model.hierarchy(), &field, cfg, mask_points)
}

/// Remove vertices rejected by `mask` together with their triangles.
pub fn apply_mask(mesh: TriangleMesh, mask: &MaskMode, points: Option<&[Point]>) -> Result<TriangleMesh> {
    let keep: Vec<bool> = match mask {
        MaskMode::None => return Ok(mesh),
        MaskMode::Distance(tau) => {
            let points = points.ok_or_else(|| {
                Error::InvalidConfig("distance mask needs the input points".into())
            })?;
            let index = PointIndex::with_cell_size(points.to_vec(), *tau);
            mesh.vertices
                .par_iter()
                .map(|v| index.nearest(v).is_some_and(|(_, d2)| d2 <= tau * tau))
                .collect()
        }
        MaskMode::Field(f) => mesh.vertices.par_iter().map(|v| f(v) > 0.5).collect(),
    };
    Ok(mesh.retain_vertices(&keep))
}

/// Per-vertex colors `clamp(sum_j gamma_j K(v, c_j), 0, 1)`.
pub fn sample_colors(mesh: &TriangleMesh, model: &KernelModel, colors: &ColorFit) -> Result<TriangleMesh> {
    let n = model.hierarchy().total_len();
    for g in &colors.gamma {
        if g.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                actual: g.len(),
            });
        }
    }
    let rgb = mesh
        .vertices
        .par_iter()
        .map(|v| {
            let mut c = [0.0; 3];
            model.for_each_kernel(v, |j, k| {
                for ch in 0..3 {
                    c[ch] += colors.gamma[ch][j] * k;
                }
            });
            c.map(|x| x.clamp(0.0, 1.0))
        })
        .collect();
    let mut out = mesh.clone();
    out.vertex_colors = Some(rgb);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierarchyParams;

    fn block(n: i64) -> VoxelHierarchy {
        let keys: Vec<Ijk> = (-n..n)
            .flat_map(|i| (-n..n).flat_map(move |j| (-n..n).map(move |k| [i, j, k])))
            .collect();
        VoxelHierarchy::from_keys(HierarchyParams::new(0.1, 1, 1).unwrap(), vec![keys]).unwrap()
    }

    #[test]
    fn sphere_sdf_is_closed_and_accurate() {
        let h = block(10);
        let r = 0.63;
        let f = |x: &Point| Some(x.coords.norm() - r);
        let mesh = extract_with_field(&h, &f, &ExtractionConfig::default(), None).unwrap();
        assert!(!mesh.triangles.is_empty());
        mesh.validate().unwrap();
        assert!(mesh.is_watertight());
        for v in &mesh.vertices {
            assert!((v.coords.norm() - r).abs() < 0.05);
        }
        let outward = (0..mesh.triangles.len())
            .filter(|&t| {
                let tri = mesh.triangles[t];
                let c = (mesh.vertices[tri[0] as usize].coords
                    + mesh.vertices[tri[1] as usize].coords
                    + mesh.vertices[tri[2] as usize].coords)
                    / 3.0;
                mesh.face_normal(t).dot(&c) > 0.0
            })
            .count();
        assert_eq!(outward, mesh.triangles.len());
    }

    #[test]
    fn constant_field_is_empty() {
        let h = block(2);
        let mesh = extract_with_field(&h, &|_: &Point| Some(0.0), &ExtractionConfig::default(), None).unwrap();
        assert!(mesh.triangles.is_empty());
    }

    #[test]
    fn distance_mask_needs_points() {
        let h = block(3);
        let cfg = ExtractionConfig {
            mask: MaskMode::Distance(0.1),
            ..Default::default()
        };
        let f = |x: &Point| Some(x.x - 0.01);
        assert!(matches!(
            extract_with_field(&h, &f, &cfg, None),
            Err(Error::InvalidConfig(_))
        ));
        let pts = [Point::new(0.0, 0.0, 0.0)];
        let mesh = extract_with_field(&h, &f, &cfg, Some(&pts)).unwrap();
        for v in &mesh.vertices {
            assert!(v.coords.norm() <= 0.1);
        }
    }
}
