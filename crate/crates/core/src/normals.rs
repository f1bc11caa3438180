//! Normal estimation by local plane fitting, with sensor-based or
//! spanning-tree orientation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{OrientedPointCloud, Point, Vector};
use crate::spatial::PointIndex;

pub const DEFAULT_NEIGHBORS: usize = 16;

/// Output of [`estimate_normals`]: the oriented cloud plus the indices whose
/// neighborhood was degenerate and received an arbitrary unit normal.
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: OrientedPointCloud,
    pub degenerate: Vec<usize>,
}

/// Fit a plane to the `k` nearest neighbors of every point (the point itself
/// included) and take the smallest-eigenvalue eigenvector of the covariance.
///
/// Orientation: with sensor origins each normal faces its sensor. Without,
/// orientation is propagated along a minimum spanning tree of the k-NN graph
/// weighted by `1 - |n_i . n_j|`, seeding each component at its highest point
/// with a normal facing +z.
pub fn estimate_normals(cloud: &OrientedPointCloud, k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidConfig(format!("neighbor count {k} must be at least 3")));
    }
    if cloud.len() < k + 1 {
        return Err(Error::TooFewPoints {
            required: k + 1,
            actual: cloud.len(),
        });
    }
    let positions = cloud.positions();
    let index = PointIndex::new(positions.to_vec());
    let neighbors: Vec<Vec<usize>> = positions
        .par_iter()
        .map(|p| index.knn(p, k).into_iter().map(|(i, _)| i).collect())
        .collect();

    let fits: Vec<Option<Vector>> = neighbors
        .par_iter()
        .map(|nb| plane_normal(positions, nb))
        .collect();
    let degenerate: Vec<usize> = (0..fits.len()).filter(|&i| fits[i].is_none()).collect();
    if !degenerate.is_empty() {
        log::warn!(
            "{} points have degenerate neighborhoods; assigned arbitrary normals",
            degenerate.len()
        );
    }
    let mut normals: Vec<Vector> = fits
        .into_iter()
        .map(|n| n.unwrap_or_else(Vector::z))
        .collect();

    match cloud.sensor_origins() {
        Some(origins) => {
            for ((n, p), o) in normals.iter_mut().zip(positions).zip(origins) {
                if n.dot(&(o - p)) < 0.0 {
                    *n = -*n;
                }
            }
        }
        None => orient_by_spanning_tree(positions, &neighbors, &mut normals),
    }

    Ok(NormalEstimate {
        cloud: cloud.clone().with_normals(normals)?,
        degenerate,
    })
}

fn plane_normal(positions: &[Point], neighbors: &[usize]) -> Option<Vector> {
    let n = neighbors.len() as f64;
    let mean = neighbors
        .iter()
        .fold(Vector::zeros(), |acc, &i| acc + positions[i].coords)
        / n;
    let mut cov = Matrix3::zeros();
    for &i in neighbors {
        let d = positions[i].coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let scale = cov.trace();
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // A neighborhood collapsed onto a line has no unique plane.
    if eig.eigenvalues[order[1]] <= 1e-12 * scale {
        return None;
    }
    let v: Vector = eig.eigenvectors.column(order[0]).into_owned();
    let len = v.norm();
    (len > 0.0).then(|| v / len)
}

#[derive(PartialEq)]
struct Edge {
    cost: f64,
    to: usize,
    from: usize,
}

impl Eq for Edge {}

impl Ord for Edge {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the max-heap pops the cheapest edge first.
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.to.cmp(&self.to))
            .then(other.from.cmp(&self.from))
    }
}

impl PartialOrd for Edge {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn orient_by_spanning_tree(positions: &[Point], neighbors: &[Vec<usize>], normals: &mut [Vector]) {
    let n = positions.len();
    let mut adjacency: Vec<Vec<usize>> = neighbors.to_vec();
    for (i, nb) in neighbors.iter().enumerate() {
        for &j in nb {
            if j != i {
                adjacency[j].push(i);
            }
        }
    }
    for a in &mut adjacency {
        a.sort_unstable();
        a.dedup();
    }

    let mut by_height: Vec<usize> = (0..n).collect();
    by_height.sort_by(|&a, &b| positions[b].z.total_cmp(&positions[a].z).then(a.cmp(&b)));

    let mut visited = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &seed in &by_height {
        if visited[seed] {
            continue;
        }
        if normals[seed].z < 0.0 {
            normals[seed] = -normals[seed];
        }
        visited[seed] = true;
        push_edges(seed, &adjacency, normals, &visited, &mut heap);
        while let Some(Edge { to, from, .. }) = heap.pop() {
            if visited[to] {
                continue;
            }
            visited[to] = true;
            if normals[to].dot(&normals[from]) < 0.0 {
                normals[to] = -normals[to];
            }
            push_edges(to, &adjacency, normals, &visited, &mut heap);
        }
    }
}

fn push_edges(
    from: usize,
    adjacency: &[Vec<usize>],
    normals: &[Vector],
    visited: &[bool],
    heap: &mut BinaryHeap<Edge>,
) {
    for &to in &adjacency[from] {
        if !visited[to] {
            let cost = 1.0 - normals[from].dot(&normals[to]).abs();
            heap.push(Edge { cost, to, from });
        }
    }
}
