//! Sparse multi-level voxel hierarchy.
//!
//! Level 1 is the finest level with width `W`; level `l` has width
//! `W * 2^(l-1)`. Voxel keys are integer coordinates on a global lattice, so
//! the center of `(l, ijk)` is `(ijk + 0.5) * width(l)` independent of the
//! input. Hierarchies built from different subsets of a scene therefore share
//! bit-identical centers.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DVector;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::bspline::{bezier_kernel, bezier_kernel_grad, bspline};
use crate::error::{Error, Result};
use crate::geometry::{OrientedPointCloud, Point, Vector};

pub type Ijk = [i64; 3];

/// Default threshold on the summed per-axis normal standard deviation.
pub const DEFAULT_SUBDIVISION_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub level: usize,
    pub ijk: Ijk,
}

/// Public view of one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelRecord {
    pub key: VoxelKey,
    pub center: Point,
    pub normal: Vector,
    pub is_leaf: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchyParams {
    pub finest_width: f64,
    pub levels: usize,
    pub adaptive_depth: usize,
}

impl HierarchyParams {
    pub fn new(finest_width: f64, levels: usize, adaptive_depth: usize) -> Result<Self> {
        let p = Self {
            finest_width,
            levels,
            adaptive_depth,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.finest_width > 0.0 && self.finest_width.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "voxel size must be positive, got {}",
                self.finest_width
            )));
        }
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::InvalidConfig(format!(
                "level count must be in 1..=16, got {}",
                self.levels
            )));
        }
        if self.adaptive_depth == 0 || self.adaptive_depth > self.levels {
            return Err(Error::InvalidConfig(format!(
                "adaptive depth must be in 1..={}, got {}",
                self.levels, self.adaptive_depth
            )));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> f64 {
        self.finest_width * (1u64 << (level - 1)) as f64
    }
}

#[derive(Debug, Clone, Default)]
struct LevelGrid {
    keys: Vec<Ijk>,
    lookup: FxHashMap<Ijk, u32>,
    normals: Vec<Vector>,
    leaf: Vec<bool>,
}

impl LevelGrid {
    fn from_keys(mut keys: Vec<Ijk>) -> Self {
        keys.sort_unstable();
        keys.dedup();
        let lookup = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (*k, i as u32))
            .collect();
        let n = keys.len();
        Self {
            keys,
            lookup,
            normals: vec![Vector::zeros(); n],
            leaf: vec![true; n],
        }
    }
}

/// Options for [`VoxelHierarchy::build_from_input`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBuildOptions {
    /// Add the six face neighbors of every occupied voxel at every level.
    pub dilate: bool,
}

impl Default for InputBuildOptions {
    fn default() -> Self {
        Self { dilate: true }
    }
}

#[derive(Debug, Clone)]
pub struct VoxelHierarchy {
    params: HierarchyParams,
    origin: Point,
    grids: Vec<LevelGrid>,
    offsets: Vec<usize>,
}

pub(crate) fn lattice_key(p: &Point, width: f64) -> Ijk {
    [
        (p.x / width).floor() as i64,
        (p.y / width).floor() as i64,
        (p.z / width).floor() as i64,
    ]
}

fn parent(ijk: &Ijk) -> Ijk {
    ijk.map(|v| v.div_euclid(2))
}

const FACE_OFFSETS: [Ijk; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

impl VoxelHierarchy {
    /// Assemble a hierarchy from explicit per-level key sets (index 0 holds
    /// level 1). Parents are added so containment holds; leaf flags follow
    /// from the structure and normals start at zero.
    pub fn from_keys(params: HierarchyParams, keys: Vec<Vec<Ijk>>) -> Result<Self> {
        params.validate()?;
        if keys.len() != params.levels {
            return Err(Error::InvalidConfig(format!(
                "expected key sets for {} levels, got {}",
                params.levels,
                keys.len()
            )));
        }
        let mut sets: Vec<FxHashSet<Ijk>> = keys
            .into_iter()
            .map(|k| k.into_iter().collect())
            .collect();
        for l in 0..params.levels - 1 {
            let parents: Vec<Ijk> = sets[l].iter().map(parent).collect();
            sets[l + 1].extend(parents);
        }
        let grids: Vec<LevelGrid> = sets
            .into_iter()
            .map(|s| LevelGrid::from_keys(s.into_iter().collect()))
            .collect();
        let mut h = Self {
            params,
            origin: Point::origin(),
            grids,
            offsets: Vec::new(),
        };
        h.finalize();
        Ok(h)
    }

    fn finalize(&mut self) {
        for l in 1..self.grids.len() {
            let (lower, upper) = self.grids.split_at_mut(l);
            let children = &lower[l - 1];
            let grid = &mut upper[0];
            grid.leaf.iter_mut().for_each(|f| *f = true);
            for k in &children.keys {
                let idx = grid.lookup[&parent(k)];
                grid.leaf[idx as usize] = false;
            }
        }
        let mut offsets = Vec::with_capacity(self.grids.len() + 1);
        let mut acc = 0usize;
        for g in &self.grids {
            offsets.push(acc);
            acc += g.keys.len();
        }
        offsets.push(acc);
        self.offsets = offsets;
        let coarse = self.params.width(self.params.levels);
        let mut lo = [f64::INFINITY; 3];
        for (l, g) in self.grids.iter().enumerate() {
            let w = self.params.width(l + 1);
            for k in &g.keys {
                for a in 0..3 {
                    lo[a] = lo[a].min(k[a] as f64 * w);
                }
            }
        }
        self.origin = if lo[0].is_finite() {
            Point::from(lo.map(|v| (v / coarse).floor() * coarse))
        } else {
            Point::origin()
        };
    }

    /// Build from the (weighted) input cloud itself.
    ///
    /// Every point with positive weight is voxelized at every level, the
    /// occupied set of every level is dilated by its face neighbors and
    /// parents are added for containment. Ring voxels above `L'` that hold no
    /// point stay leaves, so only [`Self::check_invariants`] (not
    /// [`Self::check_depth_rule`]) holds in general. Voxel normals are the
    /// input normals splatted with Bézier weights and renormalized.
    pub fn build_from_input(
        cloud: &OrientedPointCloud,
        params: HierarchyParams,
        opts: InputBuildOptions,
    ) -> Result<Self> {
        params.validate()?;
        let active: Vec<usize> = match cloud.weights() {
            Some(w) => (0..cloud.len()).filter(|&i| w[i] > 0.0).collect(),
            None => (0..cloud.len()).collect(),
        };
        if active.is_empty() {
            return Err(Error::EmptyInput);
        }
        let positions = cloud.positions();
        let mut keys: Vec<FxHashSet<Ijk>> = Vec::with_capacity(params.levels);
        for l in 1..=params.levels {
            let w = params.width(l);
            let mut set: FxHashSet<Ijk> = active
                .iter()
                .map(|&i| lattice_key(&positions[i], w))
                .collect();
            if opts.dilate {
                let ring: Vec<Ijk> = set
                    .iter()
                    .flat_map(|k| {
                        FACE_OFFSETS
                            .iter()
                            .map(move |o| [k[0] + o[0], k[1] + o[1], k[2] + o[2]])
                    })
                    .collect();
                set.extend(ring);
            }
            keys.push(set);
        }
        let keys: Vec<Vec<Ijk>> = keys.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut h = Self::from_keys(params, keys)?;
        if let Some(normals) = cloud.normals() {
            h.splat_normals(positions, normals, cloud.weights(), &active);
        }
        Ok(h)
    }

    fn splat_normals(
        &mut self,
        positions: &[Point],
        normals: &[Vector],
        weights: Option<&[f64]>,
        active: &[usize],
    ) {
        for l in 1..=self.levels() {
            let mut acc = vec![Vector::zeros(); self.len(l)];
            for &i in active {
                let w = weights.map_or(1.0, |w| w[i]);
                self.for_each_support(l, &positions[i], |j, k| {
                    acc[j] += normals[i] * (w * k);
                });
            }
            for n in &mut acc {
                let len = n.norm();
                *n = if len > 0.0 { *n / len } else { Vector::zeros() };
            }
            self.grids[l - 1].normals = acc;
        }
    }

    /// Build by top-down subdivision driven by a dense oriented reference.
    ///
    /// Starting from the occupied level-`L` voxels, a voxel at level `l > 1`
    /// subdivides when the summed per-axis standard deviation of its normals
    /// exceeds `threshold`, or unconditionally while `l > L'`. Children are
    /// created only where points exist. Voxel normals are the renormalized
    /// mean of contained normals.
    pub fn build_from_dense(
        dense: &OrientedPointCloud,
        params: HierarchyParams,
        threshold: f64,
    ) -> Result<Self> {
        params.validate()?;
        let normals = dense.normals().ok_or_else(|| {
            Error::InvalidInput("dense reference cloud has no normals".into())
        })?;
        let positions = dense.positions();
        let top = params.levels;
        let mut buckets: FxHashMap<Ijk, Vec<u32>> = FxHashMap::default();
        for (i, p) in positions.iter().enumerate() {
            buckets
                .entry(lattice_key(p, params.width(top)))
                .or_default()
                .push(i as u32);
        }
        let mut keys: Vec<Vec<Ijk>> = vec![Vec::new(); params.levels];
        let mut voxel_normals: Vec<FxHashMap<Ijk, Vector>> = vec![FxHashMap::default(); params.levels];
        let mut frontier: Vec<(Ijk, Vec<u32>)> = buckets.into_iter().collect();
        for l in (1..=top).rev() {
            let mut next: FxHashMap<Ijk, Vec<u32>> = FxHashMap::default();
            for (key, members) in frontier {
                let mean = members
                    .iter()
                    .fold(Vector::zeros(), |a, &i| a + normals[i as usize]);
                let len = mean.norm();
                voxel_normals[l - 1].insert(
                    key,
                    if len > 0.0 { mean / len } else { Vector::zeros() },
                );
                keys[l - 1].push(key);
                let split = l > 1
                    && (l > params.adaptive_depth || normal_spread(normals, &members) > threshold);
                if split {
                    let cw = params.width(l - 1);
                    for i in members {
                        next.entry(lattice_key(&positions[i as usize], cw))
                            .or_default()
                            .push(i);
                    }
                }
            }
            frontier = next.into_iter().collect();
        }
        let mut h = Self::from_keys(params, keys)?;
        for l in 1..=h.levels() {
            let grid = &mut h.grids[l - 1];
            for (idx, k) in grid.keys.iter().enumerate() {
                grid.normals[idx] = voxel_normals[l - 1][k];
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> &HierarchyParams {
        &self.params
    }

    pub fn levels(&self) -> usize {
        self.params.levels
    }

    pub fn adaptive_depth(&self) -> usize {
        self.params.adaptive_depth
    }

    pub fn finest_width(&self) -> f64 {
        self.params.finest_width
    }

    /// Bounding-box floor snapped to the coarsest width; informational only,
    /// since centers are defined on the global lattice.
    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn width(&self, level: usize) -> f64 {
        self.params.width(level)
    }

    pub fn center(&self, level: usize, ijk: &Ijk) -> Point {
        let w = self.width(level);
        Point::new(
            (ijk[0] as f64 + 0.5) * w,
            (ijk[1] as f64 + 0.5) * w,
            (ijk[2] as f64 + 0.5) * w,
        )
    }

    /// Number of voxels at `level`.
    pub fn len(&self, level: usize) -> usize {
        self.grids[level - 1].keys.len()
    }

    pub fn total_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Global index of the first voxel of `level` in level-major order.
    pub fn offset(&self, level: usize) -> usize {
        self.offsets[level - 1]
    }

    /// Voxels with gradient constraints: those of levels `1..=L'`.
    pub fn constraint_count(&self) -> usize {
        self.offsets[self.params.adaptive_depth]
    }

    pub fn keys(&self, level: usize) -> &[Ijk] {
        &self.grids[level - 1].keys
    }

    pub fn normals(&self, level: usize) -> &[Vector] {
        &self.grids[level - 1].normals
    }

    pub fn set_normals(&mut self, level: usize, normals: Vec<Vector>) -> Result<()> {
        if normals.len() != self.len(level) {
            return Err(Error::SizeMismatch {
                expected: self.len(level),
                actual: normals.len(),
            });
        }
        self.grids[level - 1].normals = normals;
        Ok(())
    }

    pub fn is_leaf(&self, level: usize, index: usize) -> bool {
        self.grids[level - 1].leaf[index]
    }

    /// Local index of `ijk` within `level`.
    pub fn find(&self, level: usize, ijk: &Ijk) -> Option<usize> {
        self.grids
            .get(level.wrapping_sub(1))?
            .lookup
            .get(ijk)
            .map(|&i| i as usize)
    }

    pub fn record(&self, level: usize, index: usize) -> VoxelRecord {
        let g = &self.grids[level - 1];
        let ijk = g.keys[index];
        VoxelRecord {
            key: VoxelKey { level, ijk },
            center: self.center(level, &ijk),
            normal: g.normals[index],
            is_leaf: g.leaf[index],
        }
    }

    /// Keys and centers of `level` in lexicographic `ijk` order.
    pub fn voxels_at(&self, level: usize) -> Vec<(VoxelKey, Point)> {
        if level == 0 || level > self.levels() {
            return Vec::new();
        }
        self.keys(level)
            .iter()
            .map(|k| (VoxelKey { level, ijk: *k }, self.center(level, k)))
            .collect()
    }

    /// Center of every voxel, in global index order.
    pub fn all_centers(&self) -> Vec<Point> {
        (1..=self.levels())
            .flat_map(|l| self.keys(l).iter().map(move |k| self.center(l, k)))
            .collect()
    }

    /// Range of lattice coordinates along one axis whose voxel centers lie
    /// strictly within the kernel support of coordinate `x`.
    #[inline]
    fn support_range(x: f64, width: f64) -> (i64, i64) {
        let s = x / width;
        ((s - 2.0).floor() as i64 + 1, (s + 1.0).ceil() as i64 - 1)
    }

    /// Call `f(local_index, K_b(x, center))` for every existing voxel of
    /// `level` with non-zero kernel value at `x`.
    #[inline]
    pub fn for_each_support(&self, level: usize, x: &Point, mut f: impl FnMut(usize, f64)) {
        let g = &self.grids[level - 1];
        if g.keys.is_empty() {
            return;
        }
        let w = self.width(level);
        let inv = 1.0 / w;
        let r: [(i64, i64); 3] = std::array::from_fn(|a| Self::support_range(x[a], w));
        for i in r[0].0..=r[0].1 {
            let bx = bspline((x.x - (i as f64 + 0.5) * w) * inv);
            if bx == 0.0 {
                continue;
            }
            for j in r[1].0..=r[1].1 {
                let by = bspline((x.y - (j as f64 + 0.5) * w) * inv);
                if by == 0.0 {
                    continue;
                }
                for k in r[2].0..=r[2].1 {
                    let Some(&idx) = g.lookup.get(&[i, j, k]) else {
                        continue;
                    };
                    let c = self.center(level, &[i, j, k]);
                    let v = bezier_kernel(x, &c, w);
                    if v != 0.0 {
                        f(idx as usize, v);
                    }
                }
            }
        }
    }

    /// As [`Self::for_each_support`] but also passing `grad_x K_b(x, center)`.
    #[inline]
    pub fn for_each_support_grad(
        &self,
        level: usize,
        x: &Point,
        mut f: impl FnMut(usize, f64, Vector),
    ) {
        let g = &self.grids[level - 1];
        if g.keys.is_empty() {
            return;
        }
        let w = self.width(level);
        let r: [(i64, i64); 3] = std::array::from_fn(|a| Self::support_range(x[a], w));
        for i in r[0].0..=r[0].1 {
            for j in r[1].0..=r[1].1 {
                for k in r[2].0..=r[2].1 {
                    let Some(&idx) = g.lookup.get(&[i, j, k]) else {
                        continue;
                    };
                    let c = self.center(level, &[i, j, k]);
                    let (v, grad) = bezier_kernel_grad(x, &c, w);
                    if v != 0.0 || grad != Vector::zeros() {
                        f(idx as usize, v, grad);
                    }
                }
            }
        }
    }

    /// Voxels of `level` whose kernel is non-zero at `x`, with their weights.
    pub fn bezier_weights(&self, level: usize, x: &Point) -> Vec<(VoxelKey, f64)> {
        let mut out = Vec::new();
        if level == 0 || level > self.levels() {
            return out;
        }
        let keys = self.keys(level);
        self.for_each_support(level, x, |j, w| {
            out.push((
                VoxelKey {
                    level,
                    ijk: keys[j],
                },
                w,
            ))
        });
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// `sum_j K_b(x, c_j) z_j` over the per-voxel features of `level`, stored
    /// row-major with `dim` values per voxel.
    pub fn interpolate_feature(
        &self,
        level: usize,
        x: &Point,
        features: &[f64],
        dim: usize,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        self.for_each_support(level, x, |j, w| {
            for (o, z) in out.iter_mut().zip(&features[j * dim..(j + 1) * dim]) {
                *o += w * z;
            }
        });
        out
    }

    /// Check containment and leaf consistency; returns a description of the
    /// first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for l in 1..self.levels() {
            for k in self.keys(l) {
                if self.find(l + 1, &parent(k)).is_none() {
                    return Err(format!("voxel {k:?} at level {l} has no parent"));
                }
            }
        }
        for l in 1..=self.levels() {
            for (i, k) in self.keys(l).iter().enumerate() {
                let has_child = l > 1
                    && (0..8).any(|c| {
                        let child = [
                            2 * k[0] + (c & 1),
                            2 * k[1] + ((c >> 1) & 1),
                            2 * k[2] + ((c >> 2) & 1),
                        ];
                        self.find(l - 1, &child).is_some()
                    });
                if self.is_leaf(l, i) == has_child {
                    return Err(format!("leaf flag of {k:?} at level {l} is inconsistent"));
                }
            }
        }
        Ok(())
    }

    /// No leaf sits above the adaptive depth.
    pub fn check_depth_rule(&self) -> std::result::Result<(), String> {
        for l in self.adaptive_depth() + 1..=self.levels() {
            if let Some(i) = (0..self.len(l)).find(|&i| self.is_leaf(l, i)) {
                return Err(format!(
                    "leaf {:?} above the adaptive depth at level {l}",
                    self.keys(l)[i]
                ));
            }
        }
        Ok(())
    }

    /// Text dump: a header followed by one line per voxel
    /// `level i j k cx cy cz leaf nx ny nz` in global index order.
    pub fn write_dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "kernelsurf-hierarchy 1")?;
        writeln!(
            w,
            "width {} levels {} adaptive {} origin {} {} {}",
            self.params.finest_width,
            self.params.levels,
            self.params.adaptive_depth,
            self.origin.x,
            self.origin.y,
            self.origin.z
        )?;
        let mut line = String::new();
        for l in 1..=self.levels() {
            for i in 0..self.len(l) {
                let r = self.record(l, i);
                line.clear();
                let k = r.key.ijk;
                let _ = write!(
                    line,
                    "{l} {} {} {} {} {} {} {} {} {} {}",
                    k[0],
                    k[1],
                    k[2],
                    r.center.x,
                    r.center.y,
                    r.center.z,
                    r.is_leaf as u8,
                    r.normal.x,
                    r.normal.y,
                    r.normal.z
                );
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn save_dump(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_dump(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_dump(reader: impl BufRead, path: &Path) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let mut next = || -> Result<Option<(usize, String)>> {
            match lines.next() {
                Some((n, l)) => Ok(Some((n + 1, l.map_err(|e| Error::io(path, e))?))),
                None => Ok(None),
            }
        };
        match next()? {
            Some((_, l)) if l.trim() == "kernelsurf-hierarchy 1" => {}
            _ => return Err(Error::parse(1, "missing hierarchy dump header")),
        }
        let (ln, header) = next()?.ok_or_else(|| Error::parse(2, "truncated header"))?;
        let t: Vec<&str> = header.split_whitespace().collect();
        if t.len() != 10 || t[0] != "width" || t[2] != "levels" || t[4] != "adaptive" {
            return Err(Error::parse(ln, "malformed parameter line"));
        }
        let bad = || Error::parse(ln, "malformed parameter value");
        let params = HierarchyParams::new(
            t[1].parse().map_err(|_| bad())?,
            t[3].parse().map_err(|_| bad())?,
            t[5].parse().map_err(|_| bad())?,
        )?;
        let mut keys = vec![Vec::new(); params.levels];
        let mut normals = vec![Vec::new(); params.levels];
        while let Some((ln, line)) = next()? {
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<&str> = line.split_whitespace().collect();
            if v.len() != 11 {
                return Err(Error::parse(ln, "voxel line needs 11 fields"));
            }
            let bad = |_| Error::parse(ln, "malformed voxel field");
            let level: usize = v[0].parse().map_err(bad)?;
            if level == 0 || level > params.levels {
                return Err(Error::parse(ln, "level out of range"));
            }
            let ijk = [
                v[1].parse().map_err(bad)?,
                v[2].parse().map_err(bad)?,
                v[3].parse().map_err(bad)?,
            ];
            let n = Vector::new(
                v[8].parse::<f64>().map_err(|_| Error::parse(ln, "bad normal"))?,
                v[9].parse::<f64>().map_err(|_| Error::parse(ln, "bad normal"))?,
                v[10].parse::<f64>().map_err(|_| Error::parse(ln, "bad normal"))?,
            );
            keys[level - 1].push(ijk);
            normals[level - 1].push((ijk, n));
        }
        let mut h = Self::from_keys(params, keys)?;
        for l in 1..=params.levels {
            let mut ns = vec![Vector::zeros(); h.len(l)];
            for (ijk, n) in &normals[l - 1] {
                ns[h.find(l, ijk).unwrap()] = *n;
            }
            h.set_normals(l, ns)?;
        }
        Ok(h)
    }

    pub fn load_dump(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_dump(std::io::BufReader::new(file), path)
    }

    /// Number of voxels per level, finest first.
    pub fn counts(&self) -> Vec<usize> {
        (1..=self.levels()).map(|l| self.len(l)).collect()
    }

    /// Level and local index of a global voxel index.
    pub fn locate(&self, global: usize) -> (usize, usize) {
        let l = self.offsets.partition_point(|&o| o <= global);
        (l, global - self.offsets[l - 1])
    }
}

/// Sum over axes of the population standard deviation of normal components.
pub fn normal_spread(normals: &[Vector], members: &[u32]) -> f64 {
    let n = members.len() as f64;
    if members.len() < 2 {
        return 0.0;
    }
    let mean = members
        .iter()
        .fold(Vector::zeros(), |a, &i| a + normals[i as usize])
        / n;
    let var = members.iter().fold(Vector::zeros(), |a, &i| {
        let d = normals[i as usize] - mean;
        a + d.component_mul(&d)
    }) / n;
    var.x.sqrt() + var.y.sqrt() + var.z.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(l: usize, lp: usize) -> HierarchyParams {
        HierarchyParams::new(0.5, l, lp).unwrap()
    }

    #[test]
    fn single_point_chain_with_ring() {
        let cloud = OrientedPointCloud::new(vec![Point::new(0.1, 0.1, 0.1)])
            .unwrap()
            .with_normals(vec![Vector::z()])
            .unwrap();
        let h = VoxelHierarchy::build_from_input(&cloud, params(3, 2), InputBuildOptions::default())
            .unwrap();
        assert_eq!(h.len(1), 7);
        // Ring parents at -1 and 0 per axis already belong to the next ring.
        assert_eq!(h.len(2), 7);
        assert_eq!(
            h.keys(3),
            &[[-1, 0, 0], [0, -1, 0], [0, 0, -1], [0, 0, 0], [0, 0, 1], [0, 1, 0], [1, 0, 0]]
        );
        h.check_invariants().unwrap();
        let undilated = VoxelHierarchy::build_from_input(
            &cloud,
            params(3, 2),
            InputBuildOptions { dilate: false },
        )
        .unwrap();
        assert_eq!(undilated.counts(), vec![1, 1, 1]);
    }

    #[test]
    fn invalid_params() {
        assert!(matches!(HierarchyParams::new(0.0, 3, 2), Err(Error::InvalidConfig(_))));
        assert!(matches!(HierarchyParams::new(0.1, 3, 4), Err(Error::InvalidConfig(_))));
        assert!(matches!(HierarchyParams::new(0.1, 3, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn dense_plane_never_splits_below_floor() {
        let pts: Vec<Point> = (0..400)
            .map(|i| Point::new((i % 20) as f64 * 0.1, (i / 20) as f64 * 0.1, 0.05))
            .collect();
        let n = pts.len();
        let cloud = OrientedPointCloud::new(pts)
            .unwrap()
            .with_normals(vec![Vector::z(); n])
            .unwrap();
        let h = VoxelHierarchy::build_from_dense(&cloud, params(4, 2), 0.1).unwrap();
        h.check_invariants().unwrap();
        h.check_depth_rule().unwrap();
        assert_eq!(h.len(1), 0);
        assert!(h.len(2) > 0);
        for l in 2..=4 {
            for n in h.normals(l) {
                assert!((n - Vector::z()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn single_level_all_leaves() {
        let cloud = OrientedPointCloud::new(vec![Point::new(0.1, 0.2, 0.3), Point::new(2.0, 0.0, 0.0)])
            .unwrap()
            .with_normals(vec![Vector::z(), Vector::x()])
            .unwrap();
        let h = VoxelHierarchy::build_from_dense(&cloud, params(1, 1), 0.1).unwrap();
        assert_eq!(h.len(1), 2);
        assert!((0..2).all(|i| h.is_leaf(1, i)));
    }

    #[test]
    fn dump_roundtrip() {
        let cloud = OrientedPointCloud::new(vec![Point::new(0.1, 0.1, 0.1), Point::new(0.9, -0.4, 0.2)])
            .unwrap()
            .with_normals(vec![Vector::z(), Vector::y()])
            .unwrap();
        let h = VoxelHierarchy::build_from_input(&cloud, params(3, 2), InputBuildOptions::default())
            .unwrap();
        let mut buf = Vec::new();
        h.write_dump(&mut buf).unwrap();
        let back = VoxelHierarchy::read_dump(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back.counts(), h.counts());
        for l in 1..=3 {
            assert_eq!(back.keys(l), h.keys(l));
            assert_eq!(back.normals(l), h.normals(l));
        }
        let mut again = Vec::new();
        back.write_dump(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn locate_inverts_offsets() {
        let h = VoxelHierarchy::from_keys(
            params(2, 1),
            vec![vec![[0, 0, 0], [1, 0, 0], [2, 0, 0]], vec![]],
        )
        .unwrap();
        assert_eq!(h.counts(), vec![3, 2]);
        assert_eq!(h.locate(0), (1, 0));
        assert_eq!(h.locate(2), (1, 2));
        assert_eq!(h.locate(3), (2, 0));
        assert_eq!(h.locate(4), (2, 1));
    }
}
