//! Core geometric value types: oriented point clouds and triangle meshes.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

pub type Point = Point3<f64>;
pub type Vector = Vector3<f64>;
pub type Rgb = [f64; 3];

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in iter {
            bb.extend(p);
        }
        Some(bb)
    }

    pub fn extend(&mut self, p: &Point) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn extent(&self) -> Vector {
        self.max - self.min
    }
}

/// Squared Euclidean distance with a fixed evaluation order, so every caller
/// (indexed or brute force) produces bit-identical results.
#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Input points with optional per-point normals, sensor origins, weights and colors.
///
/// All attribute arrays are parallel to `positions`. The type is immutable once
/// built; the `with_*` methods consume the cloud and validate the new attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPointCloud {
    positions: Vec<Point>,
    normals: Option<Vec<Vector>>,
    sensor_origins: Option<Vec<Point>>,
    weights: Option<Vec<f64>>,
    colors: Option<Vec<Rgb>>,
}

impl OrientedPointCloud {
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = positions
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "position {i} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            positions,
            normals: None,
            sensor_origins: None,
            weights: None,
            colors: None,
        })
    }

    /// Attach normals, renormalizing each to unit length.
    pub fn with_normals(mut self, normals: Vec<Vector>) -> Result<Self> {
        self.check_len(normals.len(), "normals")?;
        let mut out = Vec::with_capacity(normals.len());
        for (i, n) in normals.into_iter().enumerate() {
            let len = n.norm();
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "normal {i} cannot be normalized"
                )));
            }
            out.push(n / len);
        }
        self.normals = Some(out);
        Ok(self)
    }

    pub fn with_sensor_origins(mut self, origins: Vec<Point>) -> Result<Self> {
        self.check_len(origins.len(), "sensor origins")?;
        self.sensor_origins = Some(origins);
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.check_len(weights.len(), "weights")?;
        if let Some(i) = weights.iter().position(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidInput(format!("weight {i} outside [0, 1]")));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn with_colors(mut self, colors: Vec<Rgb>) -> Result<Self> {
        self.check_len(colors.len(), "colors")?;
        if let Some(i) = colors
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidInput(format!("color {i} outside [0, 1]")));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.positions.len() {
            return Err(Error::InvalidInput(format!(
                "{what} count {len} does not match point count {}",
                self.positions.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[Vector]> {
        self.normals.as_deref()
    }

    pub fn sensor_origins(&self) -> Option<&[Point]> {
        self.sensor_origins.as_deref()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.positions).expect("cloud is non-empty")
    }

    /// Keep only the points whose index satisfies `keep`, carrying attributes along.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        fn pick<T: Copy>(v: &Option<Vec<T>>, idx: &[usize]) -> Option<Vec<T>> {
            v.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect())
        }
        if idx.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            normals: pick(&self.normals, idx),
            sensor_origins: pick(&self.sensor_origins, idx),
            weights: pick(&self.weights, idx),
            colors: pick(&self.colors, idx),
        })
    }
}

/// Indexed triangle set, optionally with per-vertex colors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[u32; 3]>,
    pub vertex_colors: Option<Vec<Rgb>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
            vertex_colors: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= n) {
                return Err(Error::InvalidInput(format!(
                    "triangle {t} references a vertex out of range"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidInput(format!("triangle {t} is degenerate")));
            }
        }
        if let Some(c) = &self.vertex_colors {
            if c.len() != n {
                return Err(Error::SizeMismatch {
                    expected: n,
                    actual: c.len(),
                });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Unnormalized face normal (length equals twice the triangle area).
    pub fn face_normal(&self, t: usize) -> Vector {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize]);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| 0.5 * self.face_normal(t).norm())
            .sum()
    }

    /// Drop vertices flagged `false` together with every triangle touching them.
    pub fn retain_vertices(&self, keep: &[bool]) -> TriangleMesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut colors = self.vertex_colors.as_ref().map(|_| Vec::new());
        for (i, v) in self.vertices.iter().enumerate() {
            if keep[i] {
                remap[i] = vertices.len() as u32;
                vertices.push(*v);
                if let (Some(out), Some(src)) = (colors.as_mut(), self.vertex_colors.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        let triangles = self
            .triangles
            .iter()
            .filter(|t| t.iter().all(|&i| keep[i as usize]))
            .map(|t| t.map(|i| remap[i as usize]))
            .collect();
        TriangleMesh {
            vertices,
            triangles,
            vertex_colors: colors,
        }
    }

    /// Split into connected components (by shared vertices), returning triangle
    /// index lists.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                parent[x as usize] = parent[parent[x as usize] as usize];
                x = parent[x as usize];
            }
            x
        }
        for t in &self.triangles {
            let a = find(&mut parent, t[0]);
            for &v in &t[1..] {
                let b = find(&mut parent, v);
                if a != b {
                    parent[b as usize] = a;
                }
            }
        }
        let mut groups: rustc_hash::FxHashMap<u32, Vec<usize>> = Default::default();
        for (i, t) in self.triangles.iter().enumerate() {
            groups.entry(find(&mut parent, t[0])).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|g| g[0]);
        out
    }

    /// Count how many triangles use each undirected edge.
    pub fn edge_incidence(&self) -> rustc_hash::FxHashMap<(u32, u32), u32> {
        let mut map: rustc_hash::FxHashMap<(u32, u32), u32> = Default::default();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *map.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        map
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_incidence().values().all(|&c| c == 2)
    }
}
