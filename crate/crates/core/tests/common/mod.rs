#![allow(dead_code)]

use kernelsurf::{OrientedPointCloud, Point, TriangleMesh, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let v = Vector::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Uniform random samples of the sphere of `radius` at the origin with
/// outward normals.
pub fn sphere_cloud(n: usize, radius: f64, seed: u64) -> OrientedPointCloud {
    let mut r = rng(seed);
    let normals: Vec<Vector> = (0..n).map(|_| random_unit(&mut r)).collect();
    let positions = normals.iter().map(|v| Point::from(v * radius)).collect();
    OrientedPointCloud::new(positions).unwrap().with_normals(normals).unwrap()
}

/// Deterministic near-uniform sphere samples on a Fibonacci lattice.
pub fn fibonacci_sphere(n: usize, radius: f64) -> OrientedPointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let normals: Vec<Vector> = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vector::new(r * t.cos(), r * t.sin(), z)
        })
        .collect();
    let positions = normals.iter().map(|v| Point::from(v * radius)).collect();
    OrientedPointCloud::new(positions).unwrap().with_normals(normals).unwrap()
}

pub struct PlaneBox {
    pub extent: f64,
    pub z0: f64,
    pub lo: f64,
    pub hi: f64,
    pub height: f64,
}

impl PlaneBox {
    pub fn standard() -> Self {
        Self {
            extent: 2.0,
            z0: 0.013,
            lo: 0.717,
            hi: 1.293,
            height: 0.411,
        }
    }

    /// Ground plane with a hole under an open-bottomed box, sampled with
    /// exact outward normals.
    pub fn sample(&self, n: usize, seed: u64) -> OrientedPointCloud {
        let mut r = rng(seed);
        let (lo, hi, h, z0) = (self.lo, self.hi, self.height, self.z0);
        let mut p = Vec::with_capacity(n + 2);
        let mut nn = Vec::with_capacity(n + 2);
        while p.len() < n {
            let x = r.random_range(0.0..self.extent);
            let y = r.random_range(0.0..self.extent);
            if x > lo && x < hi && y > lo && y < hi {
                continue;
            }
            p.push(Point::new(x, y, z0));
            nn.push(Vector::z());
            if p.len() % 4 == 0 {
                p.push(Point::new(r.random_range(lo..hi), r.random_range(lo..hi), h));
                nn.push(Vector::z());
                let t = r.random_range(lo..hi);
                let z = r.random_range(z0..h);
                let (q, n) = match r.random_range(0..4) {
                    0 => (Point::new(lo, t, z), -Vector::x()),
                    1 => (Point::new(hi, t, z), Vector::x()),
                    2 => (Point::new(t, lo, z), -Vector::y()),
                    _ => (Point::new(t, hi, z), Vector::y()),
                };
                p.push(q);
                nn.push(n);
            }
        }
        OrientedPointCloud::new(p).unwrap().with_normals(nn).unwrap()
    }
}

/// Undirected edges used by exactly one or more than two triangles.
pub fn defective_edges(mesh: &TriangleMesh) -> Vec<((u32, u32), u32)> {
    mesh.edge_incidence()
        .into_iter()
        .filter(|&(_, c)| c != 2)
        .collect()
}

pub fn edge_midpoint(mesh: &TriangleMesh, e: (u32, u32)) -> Point {
    Point::from((mesh.vertices[e.0 as usize].coords + mesh.vertices[e.1 as usize].coords) * 0.5)
}

/// Area of every connected component, largest first.
pub fn component_areas(mesh: &TriangleMesh) -> Vec<f64> {
    let mut areas: Vec<f64> = mesh
        .components()
        .iter()
        .map(|tris| tris.iter().map(|&t| 0.5 * mesh.face_normal(t).norm()).sum())
        .collect();
    areas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    areas
}
